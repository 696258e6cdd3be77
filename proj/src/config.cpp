#include "bandtok/config.hpp"

#include <set>
#include <type_traits>

#include "bandtok/formats.hpp"

namespace bandtok {

using nlohmann::json;

namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed is read through the size_t overload");

// Strict view of a JSON object: every key must be consumed by a get() call.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    Section(const Section&) = delete;
    Section& operator=(const Section&) = delete;

    template <class T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        read(*it, out, path_ + "." + key);
    }

    const json* child(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown config key: " + path_ + "." + it.key());
    }

    const std::string& path() const { return path_; }

private:
    static void read(const json& v, double& out, const std::string& p) {
        if (!v.is_number()) throw ConfigError(p + ": expected a number");
        out = v.get<double>();
    }
    static void read(const json& v, bool& out, const std::string& p) {
        if (!v.is_boolean()) throw ConfigError(p + ": expected true or false");
        out = v.get<bool>();
    }
    static void read(const json& v, std::size_t& out, const std::string& p) {
        // Programmatic JSON stores positive literals as signed integers.
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
            throw ConfigError(p + ": expected a nonnegative integer");
        out = v.get<std::size_t>();
    }
    static void read(const json& v, int& out, const std::string& p) {
        if (!v.is_number_integer()) throw ConfigError(p + ": expected an integer");
        out = v.get<int>();
    }
    static void read(const json& v, std::string& out, const std::string& p) {
        if (!v.is_string()) throw ConfigError(p + ": expected a string");
        out = v.get<std::string>();
    }
    static void read(const json& v, std::optional<std::size_t>& out, const std::string& p) {
        if (v.is_null()) {
            out.reset();
            return;
        }
        std::size_t x = 0;
        read(v, x, p);
        out = x;
    }
    static void read(const json& v, std::vector<double>& out, const std::string& p) {
        if (!v.is_array()) throw ConfigError(p + ": expected an array of numbers");
        out.clear();
        for (const auto& e : v) {
            double x = 0;
            read(e, x, p);
            out.push_back(x);
        }
    }
    static void read(const json& v, std::vector<std::size_t>& out, const std::string& p) {
        if (!v.is_array()) throw ConfigError(p + ": expected an array of integers");
        out.clear();
        for (const auto& e : v) {
            std::size_t x = 0;
            read(e, x, p);
            out.push_back(x);
        }
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json adam_json(const AdamConfig& a) {
    return {{"lr", a.lr},
            {"beta1", a.beta1},
            {"beta2", a.beta2},
            {"eps", a.eps},
            {"weight_decay", a.weight_decay},
            {"inv_gamma", a.schedule.inv_gamma},
            {"power", a.schedule.power},
            {"warmup", a.schedule.warmup},
            {"min_lr", a.schedule.min_lr}};
}

void read_adam(const json& j, AdamConfig& a, const std::string& path) {
    Section s(j, path);
    s.get("lr", a.lr);
    s.get("beta1", a.beta1);
    s.get("beta2", a.beta2);
    s.get("eps", a.eps);
    s.get("weight_decay", a.weight_decay);
    s.get("inv_gamma", a.schedule.inv_gamma);
    s.get("power", a.schedule.power);
    s.get("warmup", a.schedule.warmup);
    s.get("min_lr", a.schedule.min_lr);
    s.finish();
}

}  // namespace

bool RunConfig::operator==(const RunConfig& o) const { return to_json(*this) == to_json(o); }

MicroLmConfig RunConfig::lm_config(std::uint32_t audio_size, std::size_t bands) const {
    MicroLmConfig m;
    m.vocab = VocabLayout{0, 2, audio_size};
    m.bands = bands;
    m.d_model = lm.d_model;
    m.n_layers = lm.n_layers;
    m.n_heads = lm.n_heads;
    m.d_hidden = lm.d_hidden;
    m.norm_eps = lm.norm_eps;
    m.use_segment_time = lm.use_segment_time;
    m.null_prefix_prob = lm.null_prefix_prob;
    m.time_freq_lo = lm.time_freq_lo;
    m.time_freq_hi = lm.time_freq_hi;
    const std::size_t hd = lm.n_heads ? lm.d_model / lm.n_heads : 0;
    m.rope = rope.mode == RopeMode::two_d ? RopeConfig::split_2d(hd, rope.base_theta)
                                          : RopeConfig::one_d(hd, rope.base_theta);
    m.rope.interleaved = rope.interleaved;
    m.validate();
    return m;
}

TokenizerTrainConfig RunConfig::tokenizer_train_config() const {
    TokenizerTrainConfig t;
    t.steps = tokenizer_train.steps;
    t.batch_size = tokenizer_train.batch_size;
    t.multi_scale_critic = tokenizer_train.multi_scale_critic;
    t.codebook_loss = tokenizer_train.codebook_loss || !codebook.book.use_ema;
    t.codebook_loss_weight = tokenizer_train.codebook_loss_weight;
    t.generator_adam = tokenizer_train.generator_adam;
    t.critic_adam = tokenizer_train.critic_adam;
    t.weights = loss;
    t.seed = seed;
    return t;
}

json to_json(const RunConfig& c) {
    json layers = json::array();
    for (const auto& l : c.codec.layers) layers.push_back({{"channels", l.channels}, {"kernel", l.kernel}, {"stride", l.stride}});
    json j;
    j["seed"] = c.seed;
    j["frontend"] = {{"sample_rate_hz", c.frontend.sample_rate_hz},
                     {"n_fft", c.frontend.n_fft},
                     {"hop", c.frontend.hop},
                     {"n_mels", c.frontend.n_mels},
                     {"fmin_hz", c.frontend.fmin_hz},
                     {"fmax_hz", c.frontend.fmax_hz},
                     {"floor_epsilon", c.frontend.floor_epsilon},
                     {"mel_scale", c.frontend.mel_scale == MelScale::slaney ? "slaney" : "htk"}};
    j["codec"] = {{"layers", layers}, {"leaky_slope", c.codec.leaky_slope}};
    j["codebook"] = {{"size", c.codebook.book.size},
                     {"decay", c.codebook.book.decay},
                     {"laplace_eps", c.codebook.book.laplace_eps},
                     {"dead_threshold", c.codebook.book.dead_threshold},
                     {"dead_patience", c.codebook.book.dead_patience},
                     {"use_ema", c.codebook.book.use_ema},
                     {"residual_depth", c.codebook.residual_depth}};
    j["rope"] = {{"mode", c.rope.mode == RopeMode::two_d ? "2d" : "1d"},
                 {"base_theta", c.rope.base_theta},
                 {"interleaved", c.rope.interleaved}};
    j["lm"] = {{"d_model", c.lm.d_model},
               {"n_layers", c.lm.n_layers},
               {"n_heads", c.lm.n_heads},
               {"d_hidden", c.lm.d_hidden},
               {"norm_eps", c.lm.norm_eps},
               {"use_segment_time", c.lm.use_segment_time},
               {"null_prefix_prob", c.lm.null_prefix_prob},
               {"time_freq_lo", c.lm.time_freq_lo},
               {"time_freq_hi", c.lm.time_freq_hi},
               {"caption_rows", c.lm.caption_rows}};
    j["lm_train"] = {{"steps", c.lm_train.steps}, {"adam", adam_json(c.lm_train.adam)}};
    j["loss"] = {{"rec", c.loss.rec}, {"perc", c.loss.perc}, {"adv", c.loss.adv}, {"fm", c.loss.fm}, {"commit", c.loss.commit}};
    j["critic"] = {{"channels", c.critic.channels},
                   {"kernel", c.critic.kernel},
                   {"stride", c.critic.stride},
                   {"leaky_slope", c.critic.leaky_slope},
                   {"scales", c.critic.scales}};
    j["tokenizer_train"] = {{"steps", c.tokenizer_train.steps},
                            {"batch_size", c.tokenizer_train.batch_size},
                            {"multi_scale_critic", c.tokenizer_train.multi_scale_critic},
                            {"codebook_loss", c.tokenizer_train.codebook_loss},
                            {"codebook_loss_weight", c.tokenizer_train.codebook_loss_weight},
                            {"generator_adam", adam_json(c.tokenizer_train.generator_adam)},
                            {"critic_adam", adam_json(c.tokenizer_train.critic_adam)},
                            {"segment_frames", c.tokenizer_train.segment_frames}};
    j["sampler"] = {{"guidance_scale", c.sampler.guidance_scale},
                    {"temperature", c.sampler.temperature},
                    {"top_k", c.sampler.top_k ? json(*c.sampler.top_k) : json(nullptr)},
                    {"max_frames", c.sampler.max_frames}};
    return j;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    Section root(j, "config");
    root.get("seed", c.seed);
    if (const json* f = root.child("frontend")) {
        Section s(*f, "frontend");
        s.get("sample_rate_hz", c.frontend.sample_rate_hz);
        s.get("n_fft", c.frontend.n_fft);
        s.get("hop", c.frontend.hop);
        s.get("n_mels", c.frontend.n_mels);
        s.get("fmin_hz", c.frontend.fmin_hz);
        s.get("fmax_hz", c.frontend.fmax_hz);
        s.get("floor_epsilon", c.frontend.floor_epsilon);
        std::string scale = c.frontend.mel_scale == MelScale::slaney ? "slaney" : "htk";
        s.get("mel_scale", scale);
        if (scale == "slaney") c.frontend.mel_scale = MelScale::slaney;
        else if (scale == "htk") c.frontend.mel_scale = MelScale::htk;
        else throw ConfigError("frontend.mel_scale: expected \"slaney\" or \"htk\", got \"" + scale + "\"");
        s.finish();
    }
    if (const json* f = root.child("codec")) {
        Section s(*f, "codec");
        if (const json* layers = s.child("layers")) {
            if (!layers->is_array()) throw ConfigError("codec.layers: expected an array");
            c.codec.layers.clear();
            for (const auto& l : *layers) {
                Section ls(l, "codec.layers[]");
                CodecLayerSpec spec;
                ls.get("channels", spec.channels);
                ls.get("kernel", spec.kernel);
                ls.get("stride", spec.stride);
                ls.finish();
                c.codec.layers.push_back(spec);
            }
        }
        s.get("leaky_slope", c.codec.leaky_slope);
        s.finish();
    }
    if (const json* f = root.child("codebook")) {
        Section s(*f, "codebook");
        s.get("size", c.codebook.book.size);
        s.get("decay", c.codebook.book.decay);
        s.get("laplace_eps", c.codebook.book.laplace_eps);
        s.get("dead_threshold", c.codebook.book.dead_threshold);
        s.get("dead_patience", c.codebook.book.dead_patience);
        s.get("use_ema", c.codebook.book.use_ema);
        s.get("residual_depth", c.codebook.residual_depth);
        s.finish();
    }
    if (const json* f = root.child("rope")) {
        Section s(*f, "rope");
        std::string mode = c.rope.mode == RopeMode::two_d ? "2d" : "1d";
        s.get("mode", mode);
        if (mode == "2d") c.rope.mode = RopeMode::two_d;
        else if (mode == "1d") c.rope.mode = RopeMode::one_d;
        else throw ConfigError("rope.mode: expected \"1d\" or \"2d\", got \"" + mode + "\"");
        s.get("base_theta", c.rope.base_theta);
        s.get("interleaved", c.rope.interleaved);
        s.finish();
    }
    if (const json* f = root.child("lm")) {
        Section s(*f, "lm");
        s.get("d_model", c.lm.d_model);
        s.get("n_layers", c.lm.n_layers);
        s.get("n_heads", c.lm.n_heads);
        s.get("d_hidden", c.lm.d_hidden);
        s.get("norm_eps", c.lm.norm_eps);
        s.get("use_segment_time", c.lm.use_segment_time);
        s.get("null_prefix_prob", c.lm.null_prefix_prob);
        s.get("time_freq_lo", c.lm.time_freq_lo);
        s.get("time_freq_hi", c.lm.time_freq_hi);
        s.get("caption_rows", c.lm.caption_rows);
        s.finish();
    }
    if (const json* f = root.child("lm_train")) {
        Section s(*f, "lm_train");
        s.get("steps", c.lm_train.steps);
        if (const json* a = s.child("adam")) read_adam(*a, c.lm_train.adam, "lm_train.adam");
        s.finish();
    }
    if (const json* f = root.child("loss")) {
        Section s(*f, "loss");
        s.get("rec", c.loss.rec);
        s.get("perc", c.loss.perc);
        s.get("adv", c.loss.adv);
        s.get("fm", c.loss.fm);
        s.get("commit", c.loss.commit);
        s.finish();
    }
    if (const json* f = root.child("critic")) {
        Section s(*f, "critic");
        s.get("channels", c.critic.channels);
        s.get("kernel", c.critic.kernel);
        s.get("stride", c.critic.stride);
        s.get("leaky_slope", c.critic.leaky_slope);
        s.get("scales", c.critic.scales);
        s.finish();
    }
    if (const json* f = root.child("tokenizer_train")) {
        Section s(*f, "tokenizer_train");
        s.get("steps", c.tokenizer_train.steps);
        s.get("batch_size", c.tokenizer_train.batch_size);
        s.get("multi_scale_critic", c.tokenizer_train.multi_scale_critic);
        s.get("codebook_loss", c.tokenizer_train.codebook_loss);
        s.get("codebook_loss_weight", c.tokenizer_train.codebook_loss_weight);
        if (const json* a = s.child("generator_adam"))
            read_adam(*a, c.tokenizer_train.generator_adam, "tokenizer_train.generator_adam");
        if (const json* a = s.child("critic_adam"))
            read_adam(*a, c.tokenizer_train.critic_adam, "tokenizer_train.critic_adam");
        s.get("segment_frames", c.tokenizer_train.segment_frames);
        s.finish();
    }
    if (const json* f = root.child("sampler")) {
        Section s(*f, "sampler");
        s.get("guidance_scale", c.sampler.guidance_scale);
        s.get("temperature", c.sampler.temperature);
        s.get("top_k", c.sampler.top_k);
        s.get("max_frames", c.sampler.max_frames);
        s.finish();
    }
    root.finish();

    c.codec.validate();
    c.loss.validate();
    c.critic.validate();
    if (c.codebook.book.size == 0) throw ConfigError("codebook.size must be positive");
    if (c.codebook.residual_depth == 0) throw ConfigError("codebook.residual_depth must be positive");
    if (c.frontend.n_mels <= 0 || c.frontend.n_mels % static_cast<int>(kLatentDownsample) != 0)
        throw ConfigError("frontend.n_mels must be a positive multiple of 8");
    if (c.sampler.temperature < 0.0) throw ConfigError("sampler.temperature must be nonnegative");
    if (c.sampler.top_k && *c.sampler.top_k == 0) throw ConfigError("sampler.top_k must be positive or null");
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    const Bytes bytes = read_file_bytes(path);
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

std::string serialize_run_config(const RunConfig& c) { return to_json(c).dump(2); }

}  // namespace bandtok
