#pragma once

#include <string>
#include <vector>

namespace facemotion {

inline constexpr int kCanonicalSampleRate = 16000;

// Mono PCM audio with samples in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kCanonicalSampleRate;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

void validate(const AudioClip& clip);

// Reads 16-bit PCM mono WAV; other sample rates are resampled to 16 kHz.
AudioClip load_wav(const std::string& path);

// Writes 16-bit PCM mono WAV at the clip's sample rate.
void save_wav(const AudioClip& clip, const std::string& path);

// Linear-interpolation resampling.
AudioClip resample_linear(const AudioClip& clip, int target_rate);

} // namespace facemotion
