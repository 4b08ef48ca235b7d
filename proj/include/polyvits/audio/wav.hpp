#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "polyvits/error.hpp"

namespace polyvits {

struct Audio {
  int sample_rate = 0;
  std::vector<double> samples;  // mono, nominally in [-1, 1]

  double duration_sec() const { return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
};

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  int format = 0;  // 1 = PCM, 3 = IEEE float
  std::size_t frames = 0;
};

namespace wav_detail {

inline std::uint32_t u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

struct Parsed {
  WavInfo info;
  std::size_t data_offset = 0;
  std::size_t data_size = 0;
};

inline Parsed parse(const std::string& bytes, const std::string& path) {
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(b, "RIFF", 4) != 0 || std::memcmp(b + 8, "WAVE", 4) != 0) {
    fail(ErrorKind::kSchema, path + ": not a RIFF/WAVE file");
  }
  Parsed p;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = u32(b + pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(b + pos, "fmt ", 4) == 0) {
      if (size < 16 || body + 16 > bytes.size()) fail(ErrorKind::kSchema, path + ": truncated fmt chunk");
      p.info.format = u16(b + body);
      p.info.channels = u16(b + body + 2);
      p.info.sample_rate = static_cast<int>(u32(b + body + 4));
      p.info.bits_per_sample = u16(b + body + 14);
      if (p.info.format == 0xFFFE && size >= 40) p.info.format = u16(b + body + 24);
      have_fmt = true;
    } else if (std::memcmp(b + pos, "data", 4) == 0) {
      if (!have_fmt) fail(ErrorKind::kSchema, path + ": data chunk before fmt chunk");
      p.data_offset = body;
      p.data_size = std::min<std::size_t>(size, bytes.size() - body);
      const int width = p.info.bits_per_sample / 8;
      if (p.info.channels < 1 || width < 1) fail(ErrorKind::kSchema, path + ": invalid format header");
      p.info.frames = p.data_size / (static_cast<std::size_t>(width) * static_cast<std::size_t>(p.info.channels));
      return p;
    }
    pos = body + size + (size & 1U);
  }
  fail(ErrorKind::kSchema, path + ": no data chunk");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace wav_detail

/// Header-only probe: reads just enough of the file to report its format.
inline WavInfo probe_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path);
  std::string head(4096, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  auto parsed = wav_detail::parse(head, path);
  const auto total = std::filesystem::file_size(path);
  const std::uint32_t declared = wav_detail::u32(reinterpret_cast<const unsigned char*>(head.data()) + parsed.data_offset - 4);
  const std::size_t available = std::min<std::size_t>(declared, total - parsed.data_offset);
  parsed.info.frames = available / (static_cast<std::size_t>(parsed.info.bits_per_sample / 8) * parsed.info.channels);
  return parsed.info;
}

/// Reads 16/24/32-bit PCM or 32-bit float WAV. Multi-channel files are
/// averaged down to mono.
inline Audio read_wav(const std::string& path) {
  const std::string bytes = wav_detail::read_file(path);
  const auto p = wav_detail::parse(bytes, path);
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data()) + p.data_offset;
  const int width = p.info.bits_per_sample / 8;
  const bool is_float = p.info.format == 3 && p.info.bits_per_sample == 32;
  const bool is_pcm = p.info.format == 1 && (width == 2 || width == 3 || width == 4);
  if (!is_float && !is_pcm) {
    fail(ErrorKind::kSchema, path + ": unsupported WAV encoding (format " + std::to_string(p.info.format) + ", " +
                                 std::to_string(p.info.bits_per_sample) + " bits)");
  }
  Audio audio;
  audio.sample_rate = p.info.sample_rate;
  audio.samples.resize(p.info.frames);
  const int ch = p.info.channels;
  for (std::size_t i = 0; i < p.info.frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < ch; ++c) {
      const unsigned char* s = b + (i * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c)) * static_cast<std::size_t>(width);
      if (is_float) {
        float f;
        std::memcpy(&f, s, 4);
        acc += f;
      } else if (width == 2) {
        acc += static_cast<std::int16_t>(wav_detail::u16(s)) / 32768.0;
      } else if (width == 3) {
        std::int32_t v = static_cast<std::int32_t>(s[0] | (s[1] << 8) | (s[2] << 16));
        if (v & 0x800000) v -= 0x1000000;
        acc += v / 8388608.0;
      } else {
        acc += static_cast<std::int32_t>(wav_detail::u32(s)) / 2147483648.0;
      }
    }
    audio.samples[i] = acc / ch;
  }
  return audio;
}

inline std::int16_t to_pcm16(double x) {
  const double clipped = std::clamp(x, -1.0, 1.0);
  return static_cast<std::int16_t>(std::lround(clipped * 32767.0));
}

inline std::string encode_wav_pcm16(const Audio& audio) {
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  wav_detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  wav_detail::put_u32(out, 16);
  wav_detail::put_u16(out, 1);
  wav_detail::put_u16(out, 1);
  wav_detail::put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  wav_detail::put_u32(out, static_cast<std::uint32_t>(audio.sample_rate * 2));
  wav_detail::put_u16(out, 2);
  wav_detail::put_u16(out, 16);
  out += "data";
  wav_detail::put_u32(out, data_bytes);
  for (double x : audio.samples) wav_detail::put_u16(out, static_cast<std::uint16_t>(to_pcm16(x)));
  return out;
}

inline void write_wav(const std::string& path, const Audio& audio) {
  if (audio.sample_rate <= 0) fail(ErrorKind::kSchema, "cannot write WAV without a sample rate");
  const std::string bytes = encode_wav_pcm16(audio);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "short write to " + path);
}

}  // namespace polyvits
