// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Minimal RIFF/WAVE reader and writer: PCM16 and IEEE float32,
// any channel count, interleaved.

#ifndef RSE_WAV_HPP_
#define RSE_WAV_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rse/util.hpp"

namespace rse {

struct WavData {
  int sample_rate = 16000;
  // channels[c][t] in [-1, 1] nominal range
  std::vector<std::vector<double>> channels;

  size_t num_channels() const { return channels.size(); }
  size_t num_samples() const { return channels.empty() ? 0 : channels[0].size(); }
};

namespace detail {

inline uint32_t rd_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t rd_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
inline void wr_u32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
  b.push_back((v >> 16) & 0xff);
  b.push_back((v >> 24) & 0xff);
}
inline void wr_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}

}  // namespace detail

inline WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open wav file: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file: " + path);

  uint16_t fmt_tag = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const uint8_t* data = nullptr;
  uint32_t data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* id = reinterpret_cast<const char*>(buf.data() + pos);
    const uint32_t len = detail::rd_u32(buf.data() + pos + 4);
    const uint8_t* body = buf.data() + pos + 8;
    if (pos + 8 + len > buf.size()) throw DataError("truncated wav chunk: " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw DataError("bad fmt chunk: " + path);
      fmt_tag = detail::rd_u16(body);
      channels = detail::rd_u16(body + 2);
      rate = detail::rd_u32(body + 4);
      bits = detail::rd_u16(body + 14);
      if (fmt_tag == 0xfffe && len >= 40)  // WAVE_FORMAT_EXTENSIBLE
        fmt_tag = detail::rd_u16(body + 24);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    pos += 8 + len + (len & 1);  // chunks are word-aligned
  }
  if (!data || channels == 0) throw DataError("wav missing fmt/data: " + path);

  WavData w;
  w.sample_rate = static_cast<int>(rate);
  w.channels.assign(channels, {});
  if (fmt_tag == 1 && bits == 16) {
    const size_t frames = data_len / (2 * channels);
    for (auto& ch : w.channels) ch.resize(frames);
    for (size_t t = 0; t < frames; ++t)
      for (size_t c = 0; c < channels; ++c) {
        const int16_t s = static_cast<int16_t>(
            detail::rd_u16(data + 2 * (t * channels + c)));
        w.channels[c][t] = s / 32768.0;
      }
  } else if (fmt_tag == 3 && bits == 32) {
    const size_t frames = data_len / (4 * channels);
    for (auto& ch : w.channels) ch.resize(frames);
    for (size_t t = 0; t < frames; ++t)
      for (size_t c = 0; c < channels; ++c) {
        uint32_t u = detail::rd_u32(data + 4 * (t * channels + c));
        float s;
        std::memcpy(&s, &u, 4);
        w.channels[c][t] = static_cast<double>(s);
      }
  } else {
    throw DataError("unsupported wav encoding (want pcm16 or float32): " + path);
  }
  return w;
}

enum class WavEncoding { Pcm16, Float32 };

inline void write_wav(const std::string& path, const WavData& w,
                      WavEncoding enc = WavEncoding::Float32) {
  if (w.channels.empty()) throw DataError("write_wav: no channels");
  const size_t frames = w.num_samples();
  for (const auto& ch : w.channels)
    if (ch.size() != frames) throw DataError("write_wav: ragged channels");
  const uint16_t nch = static_cast<uint16_t>(w.channels.size());
  const uint16_t bytes_per = enc == WavEncoding::Pcm16 ? 2 : 4;
  const uint32_t data_len = static_cast<uint32_t>(frames * nch * bytes_per);

  std::vector<uint8_t> b;
  b.reserve(44 + data_len);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  detail::wr_u32(b, 36 + data_len);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::wr_u32(b, 16);
  detail::wr_u16(b, enc == WavEncoding::Pcm16 ? 1 : 3);
  detail::wr_u16(b, nch);
  detail::wr_u32(b, static_cast<uint32_t>(w.sample_rate));
  detail::wr_u32(b, static_cast<uint32_t>(w.sample_rate) * nch * bytes_per);
  detail::wr_u16(b, static_cast<uint16_t>(nch * bytes_per));
  detail::wr_u16(b, static_cast<uint16_t>(bytes_per * 8));
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  detail::wr_u32(b, data_len);
  for (size_t t = 0; t < frames; ++t)
    for (size_t c = 0; c < nch; ++c) {
      const double x = w.channels[c][t];
      if (enc == WavEncoding::Pcm16) {
        double s = x * 32768.0;
        if (s > 32767.0) s = 32767.0;
        if (s < -32768.0) s = -32768.0;
        detail::wr_u16(b, static_cast<uint16_t>(static_cast<int16_t>(std::lround(s))));
      } else {
        const float s = static_cast<float>(x);
        uint32_t u;
        std::memcpy(&u, &s, 4);
        detail::wr_u32(b, u);
      }
    }

  // Atomic write: temp file in the same directory, then rename.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write wav file: " + tmp);
    f.write(reinterpret_cast<const char*>(b.data()),
            static_cast<std::streamsize>(b.size()));
    if (!f) throw DataError("short write: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot rename into place: " + path);
}

}  // namespace rse

#endif  // RSE_WAV_HPP_
