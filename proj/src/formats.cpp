#include "bandtok/formats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>

#include "bandtok/common.hpp"

namespace bandtok {

namespace {

class ByteWriter {
public:
    void magic(std::string_view m) { out_.insert(out_.end(), m.begin(), m.end()); }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
    Bytes take() { return std::move(out_); }

private:
    Bytes out_;
};

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> data, const char* what) : data_(data), what_(what) {}

    void need(std::size_t n) const {
        if (pos_ + n > data_.size())
            throw FormatError(std::string(what_) + ": truncated at offset " + std::to_string(pos_) + ", expected " +
                              std::to_string(pos_ + n) + " bytes, got " + std::to_string(data_.size()));
    }
    void magic(std::string_view m) {
        need(m.size());
        if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0)
            throw FormatError(std::string(what_) + ": bad magic at offset " + std::to_string(pos_) + ", expected \"" +
                              std::string(m) + "\"");
        pos_ += m.size();
    }
    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    [[noreturn]] void fail(const std::string& msg) const {
        throw FormatError(std::string(what_) + ": " + msg + " (offset " + std::to_string(pos_) + ")");
    }
    void expect_end() const {
        if (pos_ != data_.size())
            throw FormatError(std::string(what_) + ": " + std::to_string(data_.size() - pos_) +
                              " trailing bytes after offset " + std::to_string(pos_));
    }

private:
    std::span<const std::uint8_t> data_;
    const char* what_;
    std::size_t pos_ = 0;
};

void check_version(ByteReader& r) {
    const std::uint32_t v = r.u32();
    if (v != kFormatVersion) r.fail("unsupported version " + std::to_string(v));
}

std::uint32_t to_u32(std::size_t v, const char* what) {
    if (v > UINT32_MAX) throw InvalidInputError(std::string(what) + " does not fit in u32");
    return static_cast<std::uint32_t>(v);
}

}  // namespace

Bytes read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return data;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

Bytes encode_bmel(const LogMelSpectrogram& m) {
    if (m.values.data.size() != m.values.rows * m.values.cols) throw InvalidInputError("BMEL: inconsistent matrix");
    ByteWriter w;
    w.magic("BMEL");
    w.u32(kFormatVersion);
    w.u32(to_u32(m.values.rows, "BMEL T"));
    w.u32(to_u32(m.values.cols, "BMEL F"));
    w.u32(static_cast<std::uint32_t>(m.sample_rate_hz));
    w.u32(static_cast<std::uint32_t>(m.hop_samples));
    w.u32(static_cast<std::uint32_t>(m.win_samples));
    for (double v : m.values.data) w.f32(v);
    return w.take();
}

LogMelSpectrogram decode_bmel(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "BMEL");
    r.magic("BMEL");
    check_version(r);
    LogMelSpectrogram m;
    const std::uint32_t t = r.u32(), f = r.u32();
    m.sample_rate_hz = static_cast<int>(r.u32());
    m.hop_samples = static_cast<int>(r.u32());
    m.win_samples = static_cast<int>(r.u32());
    m.n_mels = static_cast<int>(f);
    r.need(std::size_t{4} * t * f);
    m.values = Matrix(t, f);
    for (double& v : m.values.data) v = r.f32();
    r.expect_end();
    return m;
}

void write_bmel(const std::filesystem::path& path, const LogMelSpectrogram& m) { write_file_bytes(path, encode_bmel(m)); }
LogMelSpectrogram read_bmel(const std::filesystem::path& path) { return decode_bmel(read_file_bytes(path)); }

Bytes encode_btok(const TokenGrid& g) {
    g.validate();
    ByteWriter w;
    w.magic("BTOK");
    w.u32(kFormatVersion);
    w.u32(g.codebook_size);
    w.u32(to_u32(g.frames, "BTOK T'"));
    w.u32(to_u32(g.bands, "BTOK B"));
    w.u8(0);  // band-first
    w.u8(0);
    w.u8(0);
    w.u8(0);
    w.f32(g.frame_rate_hz);
    for (auto id : flatten_band_first(g)) w.u32(id);
    return w.take();
}

TokenGrid decode_btok(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "BTOK");
    r.magic("BTOK");
    check_version(r);
    const std::uint32_t k = r.u32(), frames = r.u32(), bands = r.u32();
    const std::uint8_t order = r.u8();
    if (order != 0) r.fail("unsupported flatten order " + std::to_string(order));
    r.skip(3);
    const double rate = r.f32();
    if (bands == 0) r.fail("band count is zero");
    r.need(std::size_t{4} * frames * bands);
    std::vector<std::uint32_t> flat(std::size_t{frames} * bands);
    for (auto& id : flat) id = r.u32();
    r.expect_end();
    try {
        return unflatten(flat, bands, k, rate);
    } catch (const InvalidInputError& e) {
        throw FormatError(std::string("BTOK: ") + e.what());
    }
}

void write_btok(const std::filesystem::path& path, const TokenGrid& g) { write_file_bytes(path, encode_btok(g)); }
TokenGrid read_btok(const std::filesystem::path& path) { return decode_btok(read_file_bytes(path)); }

Bytes encode_bprm(const ParamSet& p) {
    ByteWriter w;
    w.magic("BPRM");
    w.u32(kFormatVersion);
    w.u32(to_u32(p.count(), "BPRM tensor count"));
    for (const auto& t : p) {
        w.u32(to_u32(t.name.size(), "BPRM name length"));
        w.bytes(t.name);
        w.u32(to_u32(t.shape.size(), "BPRM rank"));
        for (auto d : t.shape) w.u32(to_u32(d, "BPRM dim"));
        for (double v : t.values) w.f32(v);
    }
    return w.take();
}

ParamSet decode_bprm(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "BPRM");
    r.magic("BPRM");
    check_version(r);
    const std::uint32_t count = r.u32();
    ParamSet p;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        if (rank > 8) r.fail("implausible tensor rank " + std::to_string(rank));
        std::vector<std::size_t> shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = r.u32();
            n *= d;
        }
        r.need(4 * n);
        std::size_t idx;
        try {
            idx = p.add(name, shape);
        } catch (const ConfigError& e) {
            r.fail(e.what());
        }
        for (double& v : p[idx].values) v = r.f32();
    }
    r.expect_end();
    return p;
}

void write_bprm(const std::filesystem::path& path, const ParamSet& p) { write_file_bytes(path, encode_bprm(p)); }
ParamSet read_bprm(const std::filesystem::path& path) { return decode_bprm(read_file_bytes(path)); }

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "WAV");
    r.magic("RIFF");
    r.u32();
    r.magic("WAVE");
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    while (r.remaining() >= 8) {
        const std::string id = r.str(4);
        const std::uint32_t size = r.u32();
        if (id == "fmt ") {
            r.need(size);
            const std::size_t start = r.pos();
            format = r.u16();
            channels = r.u16();
            rate = r.u32();
            r.u32();
            r.u16();
            bits = r.u16();
            if (format == 0xFFFE && size >= 26) {  // WAVE_FORMAT_EXTENSIBLE: subformat GUID starts with the tag
                r.skip(8);
                format = r.u16();
            }
            r.skip(size - (r.pos() - start));
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) r.fail("data chunk before fmt chunk");
            if (channels == 0) r.fail("zero channels");
            const bool pcm16 = format == 1 && bits == 16;
            const bool float32 = format == 3 && bits == 32;
            if (!pcm16 && !float32)
                r.fail("unsupported sample format " + std::to_string(format) + "/" + std::to_string(bits) + " bits");
            const std::size_t frame_bytes = std::size_t{channels} * (bits / 8);
            const std::size_t avail = std::min<std::size_t>(size, r.remaining());
            const std::size_t n = avail / frame_bytes;
            Waveform w;
            w.sample_rate_hz = static_cast<int>(rate);
            w.samples.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::uint16_t c = 0; c < channels; ++c)
                    acc += pcm16 ? static_cast<std::int16_t>(r.u16()) / 32768.0 : static_cast<double>(r.f32());
                w.samples[i] = acc / channels;
            }
            return w;
        } else {
            r.skip(std::min<std::size_t>(size + (size & 1u), r.remaining()));
        }
    }
    r.fail("no data chunk");
}

Waveform read_wav(const std::filesystem::path& path) { return decode_wav(read_file_bytes(path)); }

Bytes encode_wav16(const Waveform& w) {
    ByteWriter b;
    const auto data_size = to_u32(w.samples.size() * 2, "WAV size");
    b.magic("RIFF");
    b.u32(36 + data_size);
    b.magic("WAVE");
    b.magic("fmt ");
    b.u32(16);
    b.u16(1);
    b.u16(1);
    b.u32(static_cast<std::uint32_t>(w.sample_rate_hz));
    b.u32(static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
    b.u16(2);
    b.u16(16);
    b.magic("data");
    b.u32(data_size);
    for (double s : w.samples) {
        const double c = std::clamp(s, -1.0, 1.0);
        b.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
    }
    return b.take();
}

void write_wav16(const std::filesystem::path& path, const Waveform& w) { write_file_bytes(path, encode_wav16(w)); }

}  // namespace bandtok
