#pragma once

// Binary containers. All integers and floats are little-endian.
//
// BMEL  log-Mel spectrogram
//   "BMEL" u32 version=1, u32 T, u32 F, u32 sample_rate, u32 hop, u32 win,
//   T*F f32 (time-major)
// BTOK  token grid
//   "BTOK" u32 version=1, u32 K, u32 T', u32 B, u8 flatten_order (0 = band-first),
//   u8 reserved[3], f32 frame_rate_hz, T'*B u32 token ids in flattened order
// BPRM  named tensor container
//   "BPRM" u32 version=1, u32 count, then per tensor:
//   u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 data

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bandtok/dsp.hpp"
#include "bandtok/params.hpp"
#include "bandtok/token_grid.hpp"

namespace bandtok {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint32_t kFormatVersion = 1;

Bytes read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

Bytes encode_bmel(const LogMelSpectrogram& m);
LogMelSpectrogram decode_bmel(std::span<const std::uint8_t> bytes);
void write_bmel(const std::filesystem::path& path, const LogMelSpectrogram& m);
LogMelSpectrogram read_bmel(const std::filesystem::path& path);

Bytes encode_btok(const TokenGrid& g);
TokenGrid decode_btok(std::span<const std::uint8_t> bytes);
void write_btok(const std::filesystem::path& path, const TokenGrid& g);
TokenGrid read_btok(const std::filesystem::path& path);

Bytes encode_bprm(const ParamSet& p);
ParamSet decode_bprm(std::span<const std::uint8_t> bytes);
void write_bprm(const std::filesystem::path& path, const ParamSet& p);
ParamSet read_bprm(const std::filesystem::path& path);

// 16-bit PCM or 32-bit float WAV; multi-channel input is averaged to mono.
Waveform decode_wav(std::span<const std::uint8_t> bytes);
Waveform read_wav(const std::filesystem::path& path);
// Mono 16-bit PCM.
Bytes encode_wav16(const Waveform& w);
void write_wav16(const std::filesystem::path& path, const Waveform& w);

}  // namespace bandtok
