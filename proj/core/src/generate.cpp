#include "facemotion/generate.hpp"

#include <cmath>

#include "facemotion/error.hpp"
#include "facemotion/rng.hpp"

namespace facemotion {

std::vector<GeneratedSample> generate(const CvaeModel& model, const AudioClip& audio,
                                      const ShapeParams& shape,
                                      const AudioEncoderBackend& backend,
                                      const GenerateOptions& options) {
  require(options.samples >= 1, Errc::invalid_argument, "sample count must be >= 1");
  require(options.fps > 0, Errc::invalid_argument, "fps must be positive");
  validate(audio);

  int frame_count = static_cast<int>(
      std::llround(audio.duration_seconds() * static_cast<double>(options.fps)));
  require(frame_count >= 1, Errc::invalid_argument,
          "audio clip is too short for a single motion frame");

  AudioFeatureSequence features = extract_features(audio, backend);
  Eigen::MatrixXd aligned = align_to_frames(features, frame_count);

  const int d = model.config().d;
  std::vector<GeneratedSample> out;
  out.reserve(static_cast<std::size_t>(options.samples));
  for (int i = 0; i < options.samples; ++i) {
    std::uint64_t sample_seed =
        derive_seed(options.seed, RngStream::sample, static_cast<std::uint64_t>(i));
    Rng rng(sample_seed);
    Eigen::VectorXd z(d);
    for (int k = 0; k < d; ++k) z[k] = rng.normal();
    MotionSequence motion =
        model.decode(LatentVector(std::move(z)), shape, aligned, frame_count, options.fps);
    out.push_back(GeneratedSample{std::move(motion), sample_seed});
  }
  return out;
}

} // namespace facemotion
