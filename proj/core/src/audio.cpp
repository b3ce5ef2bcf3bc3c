#include "facemotion/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "facemotion/error.hpp"

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

namespace facemotion {

namespace {

struct ChunkHeader {
  char id[4];
  std::uint32_t size;
};

bool id_is(const char id[4], const char* s) { return std::memcmp(id, s, 4) == 0; }

} // namespace

void validate(const AudioClip& clip) {
  require(!clip.samples.empty(), Errc::invalid_argument, "audio clip is empty");
  require(clip.sample_rate > 0, Errc::invalid_argument, "sample rate must be positive");
}

AudioClip load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot open '" + path + "' for reading");

  char riff[4], wave[4];
  std::uint32_t riff_size = 0;
  in.read(riff, 4);
  in.read(reinterpret_cast<char*>(&riff_size), 4);
  in.read(wave, 4);
  require(in.good() && id_is(riff, "RIFF") && id_is(wave, "WAVE"), Errc::unsupported_format,
          "'" + path + "' is not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<std::int16_t> pcm;
  bool have_fmt = false, have_data = false;

  ChunkHeader h{};
  while (in.read(h.id, 4) && in.read(reinterpret_cast<char*>(&h.size), 4)) {
    if (id_is(h.id, "fmt ")) {
      std::vector<char> fmt(h.size);
      in.read(fmt.data(), h.size);
      require(in.good() && h.size >= 16, Errc::unsupported_format, "malformed fmt chunk");
      std::memcpy(&format, fmt.data() + 0, 2);
      std::memcpy(&channels, fmt.data() + 2, 2);
      std::memcpy(&rate, fmt.data() + 4, 4);
      std::memcpy(&bits, fmt.data() + 14, 2);
      have_fmt = true;
    } else if (id_is(h.id, "data")) {
      pcm.resize(h.size / 2);
      in.read(reinterpret_cast<char*>(pcm.data()), h.size & ~1u);
      require(in.good(), Errc::truncated_payload, "WAV data chunk truncated");
      have_data = true;
    } else {
      in.seekg(h.size + (h.size & 1u), std::ios::cur); // chunks are word-aligned
    }
    if (have_fmt && have_data) break;
  }
  require(have_fmt && have_data, Errc::unsupported_format, "WAV file missing fmt or data chunk");
  require(format == 1, Errc::unsupported_format, "only PCM WAV is supported");
  require(channels == 1, Errc::unsupported_format, "only mono WAV is supported");
  require(bits == 16, Errc::unsupported_format, "only 16-bit WAV is supported");
  require(rate > 0 && !pcm.empty(), Errc::invalid_argument, "WAV has no samples");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(pcm.size());
  for (std::size_t i = 0; i < pcm.size(); ++i)
    clip.samples[i] = static_cast<float>(pcm[i]) / 32768.0f;

  if (clip.sample_rate != kCanonicalSampleRate)
    clip = resample_linear(clip, kCanonicalSampleRate);
  return clip;
}

void save_wav(const AudioClip& clip, const std::string& path) {
  validate(clip);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::io, "cannot open '" + path + "' for writing");

  std::vector<std::int16_t> pcm(clip.samples.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    float x = std::clamp(clip.samples[i], -1.0f, 1.0f);
    pcm[i] = static_cast<std::int16_t>(std::lrintf(x * 32767.0f));
  }

  std::uint32_t data_size = static_cast<std::uint32_t>(pcm.size() * 2);
  std::uint32_t riff_size = 36 + data_size;
  std::uint16_t format = 1, channels = 1, bits = 16, block = 2;
  std::uint32_t rate = static_cast<std::uint32_t>(clip.sample_rate);
  std::uint32_t byte_rate = rate * block;
  std::uint32_t fmt_size = 16;

  out.write("RIFF", 4);
  out.write(reinterpret_cast<const char*>(&riff_size), 4);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  out.write(reinterpret_cast<const char*>(&fmt_size), 4);
  out.write(reinterpret_cast<const char*>(&format), 2);
  out.write(reinterpret_cast<const char*>(&channels), 2);
  out.write(reinterpret_cast<const char*>(&rate), 4);
  out.write(reinterpret_cast<const char*>(&byte_rate), 4);
  out.write(reinterpret_cast<const char*>(&block), 2);
  out.write(reinterpret_cast<const char*>(&bits), 2);
  out.write("data", 4);
  out.write(reinterpret_cast<const char*>(&data_size), 4);
  out.write(reinterpret_cast<const char*>(pcm.data()), data_size);
  require(out.good(), Errc::io, "write failed for '" + path + "'");
}

AudioClip resample_linear(const AudioClip& clip, int target_rate) {
  validate(clip);
  require(target_rate > 0, Errc::invalid_argument, "target rate must be positive");
  if (clip.sample_rate == target_rate) return clip;

  double ratio = static_cast<double>(clip.sample_rate) / static_cast<double>(target_rate);
  std::size_t out_len = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(static_cast<double>(clip.samples.size()) / ratio)));

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  std::size_t last = clip.samples.size() - 1;
  for (std::size_t t = 0; t < out_len; ++t) {
    double p = static_cast<double>(t) * ratio;
    std::size_t i0 = std::min(static_cast<std::size_t>(p), last);
    std::size_t i1 = std::min(i0 + 1, last);
    double w = p - static_cast<double>(i0);
    out.samples[t] = static_cast<float>((1.0 - w) * clip.samples[i0] + w * clip.samples[i1]);
  }
  return out;
}

} // namespace facemotion
