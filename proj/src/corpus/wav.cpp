// SPDX-License-Identifier: Apache-2.0
#include "tspt/corpus/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "tspt/error.hpp"

namespace tspt {

namespace {

std::uint32_t le32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
void put32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put16(std::ostream& os, std::uint16_t v) {
  os.put(static_cast<char>(v & 0xff));
  os.put(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

double energy(const Waveform& w) {
  double e = 0.0;
  for (double s : w.samples) e += s * s;
  return e;
}

double rms(const Waveform& w) {
  return w.samples.empty() ? 0.0 : std::sqrt(energy(w) / static_cast<double>(w.size()));
}

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open wav: " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw DataError("malformed header: not RIFF/WAVE" + where);
  }
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const std::uint32_t len = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > buf.size() && std::memcmp(chunk, "data", 4) != 0) {
      throw DataError("malformed header: chunk overruns file" + where);
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw DataError("malformed header: short fmt chunk" + where);
      format = le16(buf.data() + body);
      channels = le16(buf.data() + body + 2);
      rate = le32(buf.data() + body + 4);
      bits = le16(buf.data() + body + 14);
      if (format == 0xFFFE && len >= 26) format = le16(buf.data() + body + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw DataError("malformed header: data before fmt" + where);
      if (format != 1 || bits != 16) {
        throw DataError("unsupported encoding (need PCM 16-bit, got format " +
                        std::to_string(format) + ", " + std::to_string(bits) +
                        " bits)" + where);
      }
      if (channels != 1) {
        throw DataError("multichannel input (" + std::to_string(channels) +
                        " channels) not supported" + where);
      }
      if (rate == 0) throw DataError("malformed header: zero sample rate" + where);
      const std::size_t avail = std::min<std::size_t>(len, buf.size() - body);
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(avail / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        auto v = static_cast<std::int16_t>(le16(buf.data() + body + 2 * i));
        w.samples[i] = static_cast<double>(v) / 32768.0;
      }
      return w;
    }
    pos = body + len + (len & 1);
  }
  throw DataError("malformed header: no data chunk" + where);
}

std::size_t save_wav(const std::filesystem::path& path, const Waveform& w) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write wav: " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  os.write("RIFF", 4);
  put32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  put32(os, 16);
  put16(os, 1);
  put16(os, 1);
  put32(os, static_cast<std::uint32_t>(w.sample_rate));
  put32(os, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put16(os, 2);
  put16(os, 16);
  os.write("data", 4);
  put32(os, data_bytes);
  std::size_t clamped = 0;
  for (double s : w.samples) {
    double q = std::round(s * 32768.0);
    if (q > 32767.0 || q < -32768.0) {
      if (s > 1.0 || s < -1.0) ++clamped;
      q = std::clamp(q, -32768.0, 32767.0);
    }
    put16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  if (!os) throw DataError("failed writing wav: " + path.string());
  return clamped;
}

}  // namespace tspt
