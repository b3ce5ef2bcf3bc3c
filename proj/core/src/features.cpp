#include "facemotion/features.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <vector>

#include "facemotion/array_file.hpp"
#include "facemotion/error.hpp"

namespace facemotion {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// In-place iterative radix-2 FFT. fft_size is validated to be a power of two
// at construction, so no general-length machinery is needed here.
void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    std::complex<double> wl(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

} // namespace

FilterbankBackend::FilterbankBackend(const Config& config) : config_(config) {
  require(config_.bins >= 1, Errc::invalid_argument, "filterbank needs at least one bin");
  require(config_.fft_size >= 2 && (config_.fft_size & (config_.fft_size - 1)) == 0,
          Errc::invalid_argument, "fft_size must be a power of two");
  require(config_.window_seconds > 0 && config_.hop_seconds > 0, Errc::invalid_argument,
          "window and hop must be positive");
  require(config_.max_hz > config_.min_hz && config_.min_hz >= 0, Errc::invalid_argument,
          "bad filterbank frequency range");

  int win = static_cast<int>(std::lround(config_.window_seconds * kCanonicalSampleRate));
  require(win <= config_.fft_size, Errc::invalid_argument, "window longer than fft_size");
  window_.resize(win);
  for (int i = 0; i < win; ++i)
    window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (win - 1));

  // Triangular filters with edges equally spaced on the mel scale.
  int spectrum_bins = config_.fft_size / 2 + 1;
  filters_ = Eigen::MatrixXd::Zero(config_.bins, spectrum_bins);
  double mel_lo = hz_to_mel(config_.min_hz);
  double mel_hi = hz_to_mel(config_.max_hz);
  std::vector<double> edges(static_cast<std::size_t>(config_.bins) + 2);
  for (std::size_t m = 0; m < edges.size(); ++m)
    edges[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(m) /
                                      static_cast<double>(config_.bins + 1));
  double hz_per_bin = static_cast<double>(kCanonicalSampleRate) / config_.fft_size;
  for (int m = 0; m < config_.bins; ++m) {
    double f0 = edges[static_cast<std::size_t>(m)];
    double f1 = edges[static_cast<std::size_t>(m) + 1];
    double f2 = edges[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < spectrum_bins; ++k) {
      double fk = k * hz_per_bin;
      if (fk > f0 && fk < f1)
        filters_(m, k) = (fk - f0) / (f1 - f0);
      else if (fk >= f1 && fk < f2)
        filters_(m, k) = (f2 - fk) / (f2 - f1);
    }
  }
}

AudioFeatureSequence FilterbankBackend::encode(const AudioClip& clip) const {
  validate(clip);
  require(clip.sample_rate == kCanonicalSampleRate, Errc::unsupported_format,
          "filterbank backend expects " + std::to_string(kCanonicalSampleRate) + " Hz input");

  const int win = static_cast<int>(window_.size());
  const int hop = static_cast<int>(std::lround(config_.hop_seconds * kCanonicalSampleRate));
  const int n = static_cast<int>(clip.samples.size());
  // Short clips are zero-padded to a single window.
  const int frames = n >= win ? 1 + (n - win) / hop : 1;
  const int spectrum_bins = config_.fft_size / 2 + 1;

  Eigen::MatrixXd out(frames, config_.bins);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(config_.fft_size));
  for (int t = 0; t < frames; ++t) {
    int start = t * hop;
    for (int i = 0; i < config_.fft_size; ++i) {
      int s = start + i;
      double x = (i < win && s < n) ? static_cast<double>(clip.samples[static_cast<std::size_t>(s)])
                                    : 0.0;
      buf[static_cast<std::size_t>(i)] = (i < win) ? x * window_[i] : 0.0;
    }
    fft_radix2(buf);
    Eigen::VectorXd power(spectrum_bins);
    for (int k = 0; k < spectrum_bins; ++k) power[k] = std::norm(buf[static_cast<std::size_t>(k)]);
    Eigen::VectorXd mel = filters_ * power;
    for (int m = 0; m < config_.bins; ++m)
      out(t, m) = std::log(std::max(mel[m], config_.log_floor));
  }

  return AudioFeatureSequence{std::move(out), 1.0 / config_.hop_seconds};
}

PrecomputedFeatureBackend::PrecomputedFeatureBackend(AudioFeatureSequence features,
                                                     std::string source_name)
    : features_(std::move(features)), name_(std::move(source_name)) {
  require(features_.features.rows() >= 1, Errc::invalid_argument, "empty feature matrix");
  require(features_.frame_rate > 0, Errc::invalid_argument, "feature frame rate must be positive");
}

AudioFeatureSequence PrecomputedFeatureBackend::encode(const AudioClip& clip) const {
  validate(clip);
  // Tolerate small trims; anything larger means the features belong to
  // different audio.
  double expected = clip.duration_seconds() * features_.frame_rate;
  double actual = static_cast<double>(features_.features.rows());
  require(std::abs(expected - actual) <= std::max(2.0, 0.05 * expected), Errc::dim_mismatch,
          "precomputed features do not match the clip duration");
  return features_;
}

PrecomputedFeatureBackend PrecomputedFeatureBackend::from_file(const std::string& path) {
  AudioFeatureSequence seq = load_features(path);
  return PrecomputedFeatureBackend(std::move(seq), "precomputed:" + path);
}

AudioFeatureSequence extract_features(const AudioClip& clip, const AudioEncoderBackend& backend) {
  validate(clip);
  AudioFeatureSequence seq = backend.encode(clip);
  require(seq.features.rows() >= 1, Errc::invalid_argument, "backend produced no frames");
  require(seq.features.allFinite(), Errc::invalid_argument,
          "backend produced non-finite features");
  return seq;
}

Eigen::MatrixXd align_to_frames(const AudioFeatureSequence& features, int frame_count) {
  const Eigen::MatrixXd& in = features.features;
  require(in.rows() >= 1, Errc::invalid_argument, "cannot align an empty feature sequence");
  require(frame_count >= 1, Errc::invalid_argument, "target frame count must be >= 1");

  const Eigen::Index rows_in = in.rows();
  Eigen::MatrixXd out(frame_count, in.cols());
  if (rows_in == 1) {
    for (int t = 0; t < frame_count; ++t) out.row(t) = in.row(0);
    return out;
  }
  for (int t = 0; t < frame_count; ++t) {
    double p = frame_count == 1
                   ? 0.0
                   : static_cast<double>(t) * static_cast<double>(rows_in - 1) /
                         static_cast<double>(frame_count - 1);
    Eigen::Index i0 = static_cast<Eigen::Index>(p);
    if (i0 >= rows_in - 1) i0 = rows_in - 2;
    double w = p - static_cast<double>(i0);
    if (w == 0.0)
      out.row(t) = in.row(i0); // exact rows copy bitwise
    else
      out.row(t) = (1.0 - w) * in.row(i0) + w * in.row(i0 + 1);
  }
  return out;
}

void save_features(const AudioFeatureSequence& features, const std::string& path) {
  ArrayFile file;
  char rate[32];
  std::snprintf(rate, sizeof(rate), "%.17g", features.frame_rate);
  file.add_meta("frame_rate", rate);
  file.add_matrix("features", features.features, Dtype::f32);
  save_arrays(file, path);
}

AudioFeatureSequence load_features(const std::string& path) {
  ArrayFile file = load_arrays(path);
  AudioFeatureSequence seq;
  seq.frame_rate = std::stod(file.meta_at("frame_rate"));
  seq.features = file.matrix_at("features");
  require(seq.frame_rate > 0, Errc::corrupt_manifest, "feature file has bad frame_rate");
  return seq;
}

} // namespace facemotion
