#pragma once

#include <cstdint>
#include <vector>

#include "facemotion/audio.hpp"
#include "facemotion/cvae.hpp"
#include "facemotion/features.hpp"
#include "facemotion/motion.hpp"

namespace facemotion {

struct GenerateOptions {
  int samples = 1;
  std::uint64_t seed = 0;
  float fps = 30.0f;
};

struct GeneratedSample {
  MotionSequence motion;
  std::uint64_t sample_seed; // derived per-sample stream seed, recorded in manifests
};

// Decoder-only inference: one independent standard-normal z per sample.
// Sample i's seed depends only on (seed, i), so sample sets are nested:
// generating 5 or 30 samples with the same seed yields the same first 5.
std::vector<GeneratedSample> generate(const CvaeModel& model, const AudioClip& audio,
                                      const ShapeParams& shape,
                                      const AudioEncoderBackend& backend,
                                      const GenerateOptions& options);

} // namespace facemotion
