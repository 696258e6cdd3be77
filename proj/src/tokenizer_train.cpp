#include "bandtok/tokenizer_train.hpp"

#include <algorithm>
#include <numeric>

namespace bandtok {

Codebook init_codebook_from_data(const LatentCodec& codec, const std::vector<Matrix>& mels, std::size_t k,
                                 const CodebookConfig& cfg, Rng& rng) {
    if (k == 0) throw ConfigError("codebook size must be positive");
    const std::size_t C = codec.config().latent_channels();
    std::vector<std::vector<double>> pool;
    for (const auto& m : mels) {
        const Matrix cells = cells_of(codec.encode(m).values);
        for (std::size_t r = 0; r < cells.rows; ++r)
            pool.emplace_back(cells.data.begin() + static_cast<std::ptrdiff_t>(r * C),
                              cells.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * C));
    }
    // Partial Fisher-Yates with the counter-based generator.
    for (std::size_t i = 0; i < std::min(k, pool.size()); ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    Matrix codes(k, C);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t c = 0; c < C; ++c) codes(i, c) = i < pool.size() ? pool[i][c] : rng.uniform(-1.0, 1.0);
    return Codebook::from_codes(std::move(codes), cfg);
}

CriticConfig effective_critic_config(const CriticConfig& base, bool multi_scale) {
    CriticConfig c = base;
    if (!multi_scale) c.scales.resize(1);
    return c;
}

std::vector<TokenizerStepLog> train_tokenizer(LatentCodec& codec, Codebook& codebook, Critic& critic,
                                              const std::vector<Matrix>& mels, const TokenizerTrainConfig& cfg,
                                              const std::function<void(const TokenizerStepLog&)>& on_step) {
    if (mels.empty()) throw InvalidInputError("train_tokenizer: empty corpus");
    if (cfg.batch_size == 0) throw ConfigError("train_tokenizer: batch_size must be positive");
    cfg.weights.validate();
    if (codebook.dim() != codec.config().latent_channels())
        throw ConfigError("train_tokenizer: codebook width does not match the latent channels");

    Adam gen_opt(codec.params(), cfg.generator_adam);
    Adam critic_opt(critic.params(), cfg.critic_adam);
    ParamSet code_params;
    const std::size_t codes_idx = code_params.add("codes", {codebook.size(), codebook.dim()});
    Adam code_opt(code_params, cfg.generator_adam);
    Rng reseed = Rng(cfg.seed).split(0x7e5eed);

    std::vector<TokenizerStepLog> log;
    std::size_t cursor = 0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        ParamSet gen_grads = codec.params().zeros_like();
        ParamSet critic_grads = critic.params().zeros_like();
        ParamSet code_grads = code_params.zeros_like();
        TokenizerStepLog entry;
        entry.step = step;
        const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
        std::vector<std::uint32_t> all_indices;

        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const Matrix& x = mels[cursor];
            cursor = (cursor + 1) % mels.size();

            LatentCodec::EncodeCache ec;
            const LatentGrid z = codec.encode(x, &ec);
            const QuantizationResult q = quantize(z.values, codebook);
            LatentCodec::DecodeCache dc;
            const Matrix x_hat = codec.decode_raw(q.quantized, x.rows, x.cols, &dc);

            const GeneratorLossGrad g = generator_loss_and_grad(x, x_hat, q.commitment_loss, critic, cfg.weights);
            LossBreakdown lb = g.loss;
            if (cfg.codebook_loss) {
                lb.codebook = q.commitment_loss;  // same squared distance, gradient routed to the codes
                lb.total += cfg.codebook_loss_weight * lb.codebook;
                const Matrix cg = codebook_loss_grad(z.values, q, codebook.size());
                auto& dst = code_grads[codes_idx].values;
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += cfg.codebook_loss_weight * inv_b * cg.data[i];
            }

            Matrix d_x_hat = g.d_x_hat;
            for (double& v : d_x_hat.data) v *= inv_b;
            ParamSet batch_grads = codec.params().zeros_like();
            Volume dz = straight_through_backward(codec.decode_backward(dc, d_x_hat, batch_grads));
            const Volume dc_commit = commitment_grad(z.values, q);
            for (std::size_t i = 0; i < dz.data.size(); ++i)
                dz.data[i] += cfg.weights.commit * inv_b * dc_commit.data[i];
            codec.encode_backward(ec, dz, batch_grads);
            gen_grads.add_scaled(batch_grads, 1.0);

            const CriticLossGrad cl = critic_loss_and_grad(x, x_hat, critic);
            critic_grads.add_scaled(cl.d_critic, inv_b);

            if (!cfg.codebook_loss) ema_update(codebook, z.values, q.indices, &reseed);
            else record_usage(codebook, q.indices);
            all_indices.insert(all_indices.end(), q.indices.begin(), q.indices.end());

            entry.loss.rec += inv_b * lb.rec;
            entry.loss.perc += inv_b * lb.perc;
            entry.loss.adv += inv_b * lb.adv;
            entry.loss.fm += inv_b * lb.fm;
            entry.loss.commit += inv_b * lb.commit;
            entry.loss.codebook += inv_b * lb.codebook;
            entry.loss.total += inv_b * lb.total;
            entry.critic_loss += inv_b * cl.loss;
        }

        gen_opt.step(codec.params(), gen_grads);
        critic_opt.step(critic.params(), critic_grads);
        if (cfg.codebook_loss) {
            code_params[codes_idx].values = codebook.codes.data;
            code_opt.step(code_params, code_grads);
            codebook.codes.data = code_params[codes_idx].values;
            if (codebook.pinned_zero) codebook.pin_zero_code();
        }
        entry.perplexity = index_perplexity(all_indices, codebook.size());
        log.push_back(entry);
        if (on_step) on_step(entry);
    }
    return log;
}

}  // namespace bandtok
