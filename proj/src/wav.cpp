#include "spkmoco/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "spkmoco/errors.hpp"

namespace spkmoco {

namespace {

std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
std::uint16_t le16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

void put32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
void put16(std::ofstream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

AudioWave read_wav(const std::filesystem::path& path, int channel) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path.string() + "'");
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                       std::istreambuf_iterator<char>());
  const std::string where = " in '" + path.string() + "'";
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file" + where);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* hdr = buf.data() + pos;
    const std::uint32_t len = le32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + len > buf.size() && std::memcmp(hdr, "data", 4) != 0)
      throw FormatError("truncated chunk" + where);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError("short fmt chunk" + where);
      format = le16(buf.data() + body);
      channels = le16(buf.data() + body + 2);
      rate = le32(buf.data() + body + 4);
      bits = le16(buf.data() + body + 14);
      if (format == 0xFFFE) {
        if (len < 26) throw FormatError("short extensible fmt chunk" + where);
        format = le16(buf.data() + body + 24);
      }
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = buf.data() + body;
      data_len = std::min<std::size_t>(len, buf.size() - body);
    }
    pos = body + len + (len & 1);
  }
  if (channels == 0 || rate == 0) throw FormatError("missing fmt chunk" + where);
  if (data == nullptr) throw FormatError("missing data chunk" + where);
  if (format != 1 || bits != 16)
    throw FormatError("unsupported encoding (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits), need PCM16" + where);
  int ch = channel;
  if (channels > 1 && ch < 0)
    throw FormatError("multichannel file needs a channel index" + where);
  if (ch < 0) ch = 0;
  if (ch >= channels) throw FormatError("channel index out of range" + where);

  AudioWave w;
  w.sample_rate = static_cast<int>(rate);
  const std::size_t frame_bytes = 2u * channels;
  const std::size_t n = data_len / frame_bytes;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto raw = static_cast<std::int16_t>(le16(data + i * frame_bytes + 2u * ch));
    w.samples[i] = static_cast<double>(raw) / 32768.0;
  }
  return w;
}

void write_wav(const std::filesystem::path& path, const AudioWave& wave) {
  if (wave.sample_rate <= 0) throw ParameterError("sample rate must be positive");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  os.write("RIFF", 4);
  put32(os, 36 + 2 * n);
  os.write("WAVEfmt ", 8);
  put32(os, 16);
  put16(os, 1);
  put16(os, 1);
  put32(os, static_cast<std::uint32_t>(wave.sample_rate));
  put32(os, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put16(os, 2);
  put16(os, 16);
  os.write("data", 4);
  put32(os, 2 * n);
  for (double x : wave.samples) {
    const double code = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
    put16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(code)));
  }
  if (!os) throw FormatError("write failed for '" + path.string() + "'");
}

}  // namespace spkmoco
