#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

#include "facemotion/motion.hpp"

namespace facemotion {

// A set of generated motion samples with identical frame counts, compared
// against one ground truth per audio.
struct SampleSet {
  std::vector<MotionSequence> samples;

  explicit SampleSet(std::vector<MotionSequence> samples_in);
  int size() const { return static_cast<int>(samples.size()); }
};

// The distance functional D shared by MinDist / MeanDist / APD: identical to
// the reconstruction loss (element-mean squared difference).
double motion_distance(const MotionSequence& a, const MotionSequence& b);

double min_dist(const SampleSet& set, const MotionSequence& gt);
double mean_dist(const SampleSet& set, const MotionSequence& gt);
// Average over all ordered pairs i != j; needs at least two samples.
double apd(const SampleSet& set);

// 2D landmark tracks in pixel units, one row per landmark point.
struct LandmarkTrack {
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> frames;

  explicit LandmarkTrack(std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> frames_in);
  int frame_count() const { return static_cast<int>(frames.size()); }
  int point_count() const { return frames.empty() ? 0 : static_cast<int>(frames[0].rows()); }
};

// Mouth region of the 68-landmark convention: outer lips 48-59, inner 60-67.
inline constexpr std::array<int, 20> kMouthLandmarks = {48, 49, 50, 51, 52, 53, 54,
                                                        55, 56, 57, 58, 59, 60, 61,
                                                        62, 63, 64, 65, 66, 67};

// Mean Euclidean distance over frames and the given landmark subset.
double lmd(const LandmarkTrack& pred, const LandmarkTrack& gt,
           const std::vector<int>& point_subset);
double lmd(const LandmarkTrack& pred, const LandmarkTrack& gt); // mouth subset

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Windowed SSIM with a Gaussian window (valid-mode), averaged over the map.
// Inputs are grayscale images (or per-channel averages) of equal size, at
// least as large as the window.
double ssim(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const SsimOptions& options = {});

// Frechet distance between Gaussian fits of two embedding sets (rows are
// samples). Unbiased covariance; the matrix square root goes through
// eigendecompositions of symmetrized products with negative eigenvalues
// clipped at zero, plus a small diagonal regularizer for degenerate fits.
double fid(const Eigen::MatrixXd& embeddings_a, const Eigen::MatrixXd& embeddings_b);

// Embedding extractor slot for FID; the canonical perceptual network is
// intentionally not shipped, so embeddings usually arrive precomputed.
class ImageEmbedder {
public:
  virtual ~ImageEmbedder() = default;
  virtual Eigen::VectorXd embed(const Eigen::MatrixXd& image) const = 0;
  virtual int dim() const = 0;
};

} // namespace facemotion
