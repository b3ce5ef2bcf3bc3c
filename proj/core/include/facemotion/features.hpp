#pragma once

#include <memory>
#include <string>

#include <Eigen/Core>

#include "facemotion/audio.hpp"

namespace facemotion {

// Per-frame audio embedding at the backend's native frame rate.
struct AudioFeatureSequence {
  Eigen::MatrixXd features; // T_a x d_a
  double frame_rate = 0.0;  // Hz
};

// Encoder backend abstraction. The production path plugs a pretrained
// self-supervised speech encoder in behind this interface (see
// PrecomputedFeatureBackend for running such encoders offline); the
// filterbank backend below is the deterministic, dependency-free path used
// by tests and desk-scale training. Backends are not required to be
// shareable across threads; use one instance per thread.
class AudioEncoderBackend {
public:
  virtual ~AudioEncoderBackend() = default;

  virtual AudioFeatureSequence encode(const AudioClip& clip) const = 0;
  virtual int feature_dim() const = 0;
  virtual std::string name() const = 0;
};

// 80-bin log-mel filterbank, 25 ms window, 10 ms hop, at 16 kHz.
class FilterbankBackend : public AudioEncoderBackend {
public:
  struct Config {
    int bins = 80;
    double window_seconds = 0.025;
    double hop_seconds = 0.010;
    int fft_size = 512;
    double min_hz = 0.0;
    double max_hz = 8000.0;
    double log_floor = 1e-10;
  };

  FilterbankBackend() : FilterbankBackend(Config{}) {}
  explicit FilterbankBackend(const Config& config);

  AudioFeatureSequence encode(const AudioClip& clip) const override;
  int feature_dim() const override { return config_.bins; }
  std::string name() const override { return "filterbank"; }

  const Config& config() const { return config_; }

private:
  Config config_;
  Eigen::MatrixXd filters_; // bins x (fft_size/2 + 1), triangular mel weights
  Eigen::VectorXd window_;  // Hann, window length in samples
};

// Adapter slot for pretrained encoders run out of process: serves features
// previously stored in the shared array container.
class PrecomputedFeatureBackend : public AudioEncoderBackend {
public:
  PrecomputedFeatureBackend(AudioFeatureSequence features, std::string source_name);

  AudioFeatureSequence encode(const AudioClip& clip) const override;
  int feature_dim() const override { return static_cast<int>(features_.features.cols()); }
  std::string name() const override { return name_; }

  static PrecomputedFeatureBackend from_file(const std::string& path);

private:
  AudioFeatureSequence features_;
  std::string name_;
};

// Runs the backend after validating the clip.
AudioFeatureSequence extract_features(const AudioClip& clip, const AudioEncoderBackend& backend);

// Resamples features to exactly frame_count rows by linear interpolation in
// feature space; each output row is a convex combination of at most two
// input rows, endpoints mapping to endpoints.
Eigen::MatrixXd align_to_frames(const AudioFeatureSequence& features, int frame_count);

void save_features(const AudioFeatureSequence& features, const std::string& path);
AudioFeatureSequence load_features(const std::string& path);

} // namespace facemotion
