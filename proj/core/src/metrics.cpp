#include "facemotion/metrics.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "facemotion/error.hpp"
#include "facemotion/losses.hpp"

namespace facemotion {

SampleSet::SampleSet(std::vector<MotionSequence> samples_in) : samples(std::move(samples_in)) {
  require(!samples.empty(), Errc::invalid_argument, "sample set needs at least one sample");
  int t = samples[0].frame_count();
  for (const MotionSequence& s : samples)
    require(s.frame_count() == t, Errc::dim_mismatch,
            "all samples in a set must have the same frame count");
}

double motion_distance(const MotionSequence& a, const MotionSequence& b) {
  return loss_reconstruction(a, b);
}

double min_dist(const SampleSet& set, const MotionSequence& gt) {
  double best = std::numeric_limits<double>::infinity();
  for (const MotionSequence& s : set.samples) best = std::min(best, motion_distance(s, gt));
  return best;
}

double mean_dist(const SampleSet& set, const MotionSequence& gt) {
  double sum = 0.0;
  for (const MotionSequence& s : set.samples) sum += motion_distance(s, gt);
  return sum / static_cast<double>(set.size());
}

double apd(const SampleSet& set) {
  const int n = set.size();
  require(n >= 2, Errc::invalid_argument, "APD needs at least two samples");
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) sum += motion_distance(set.samples[i], set.samples[j]);
  return sum / static_cast<double>(n) / static_cast<double>(n - 1);
}

LandmarkTrack::LandmarkTrack(std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> frames_in)
    : frames(std::move(frames_in)) {
  require(!frames.empty(), Errc::invalid_argument, "landmark track needs at least one frame");
  Eigen::Index points = frames[0].rows();
  for (const auto& f : frames) {
    require(f.rows() == points, Errc::dim_mismatch,
            "landmark track frames must have a consistent point count");
    require(f.allFinite(), Errc::invalid_argument, "landmarks must be finite");
  }
}

double lmd(const LandmarkTrack& pred, const LandmarkTrack& gt,
           const std::vector<int>& point_subset) {
  require(pred.frame_count() == gt.frame_count(), Errc::dim_mismatch,
          "landmark tracks have different frame counts");
  require(pred.point_count() == gt.point_count(), Errc::dim_mismatch,
          "landmark tracks have different point counts");
  require(!point_subset.empty(), Errc::invalid_argument, "landmark subset is empty");
  for (int idx : point_subset)
    require(idx >= 0 && idx < pred.point_count(), Errc::dim_mismatch,
            "landmark subset index out of range");

  double sum = 0.0;
  for (int t = 0; t < pred.frame_count(); ++t) {
    const auto& p = pred.frames[static_cast<std::size_t>(t)];
    const auto& g = gt.frames[static_cast<std::size_t>(t)];
    for (int idx : point_subset) sum += (p.row(idx) - g.row(idx)).norm();
  }
  return sum / (static_cast<double>(pred.frame_count()) *
                static_cast<double>(point_subset.size()));
}

double lmd(const LandmarkTrack& pred, const LandmarkTrack& gt) {
  return lmd(pred, gt, std::vector<int>(kMouthLandmarks.begin(), kMouthLandmarks.end()));
}

namespace {

Eigen::VectorXd gaussian_kernel(int size, double sigma) {
  Eigen::VectorXd k(size);
  int center = size / 2;
  for (int i = 0; i < size; ++i) {
    double x = static_cast<double>(i - center);
    k[i] = std::exp(-x * x / (2.0 * sigma * sigma));
  }
  return k / k.sum();
}

// Valid-mode separable Gaussian filtering.
Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& img, const Eigen::VectorXd& kernel) {
  const int w = static_cast<int>(kernel.size());
  const Eigen::Index rows = img.rows(), cols = img.cols();
  Eigen::MatrixXd tmp(rows, cols - w + 1);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c + w <= cols; ++c)
      tmp(r, c) = img.row(r).segment(c, w).dot(kernel);
  Eigen::MatrixXd out(rows - w + 1, cols - w + 1);
  for (Eigen::Index c = 0; c < tmp.cols(); ++c)
    for (Eigen::Index r = 0; r + w <= rows; ++r)
      out(r, c) = tmp.col(c).segment(r, w).dot(kernel);
  return out;
}

} // namespace

double ssim(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const SsimOptions& options) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), Errc::dim_mismatch,
          "images have different sizes");
  require(options.window >= 3 && options.window % 2 == 1, Errc::invalid_argument,
          "window must be odd and >= 3");
  require(a.rows() >= options.window && a.cols() >= options.window, Errc::invalid_argument,
          "images are smaller than the SSIM window");
  require(a.allFinite() && b.allFinite(), Errc::invalid_argument, "images must be finite");

  const double c1 = (options.k1 * options.dynamic_range) * (options.k1 * options.dynamic_range);
  const double c2 = (options.k2 * options.dynamic_range) * (options.k2 * options.dynamic_range);
  Eigen::VectorXd kernel = gaussian_kernel(options.window, options.sigma);

  Eigen::MatrixXd mu_a = filter_valid(a, kernel);
  Eigen::MatrixXd mu_b = filter_valid(b, kernel);
  Eigen::MatrixXd a2 = filter_valid(a.cwiseProduct(a), kernel);
  Eigen::MatrixXd b2 = filter_valid(b.cwiseProduct(b), kernel);
  Eigen::MatrixXd ab = filter_valid(a.cwiseProduct(b), kernel);

  Eigen::ArrayXXd var_a = a2.array() - mu_a.array().square();
  Eigen::ArrayXXd var_b = b2.array() - mu_b.array().square();
  Eigen::ArrayXXd cov = ab.array() - (mu_a.array() * mu_b.array());

  Eigen::ArrayXXd num =
      (2.0 * mu_a.array() * mu_b.array() + c1) * (2.0 * cov + c2);
  Eigen::ArrayXXd den =
      (mu_a.array().square() + mu_b.array().square() + c1) * (var_a + var_b + c2);
  return (num / den).mean();
}

namespace {

// Symmetric PSD square root with negative eigenvalues clipped at zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  Eigen::VectorXd values = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

} // namespace

double fid(const Eigen::MatrixXd& embeddings_a, const Eigen::MatrixXd& embeddings_b) {
  require(embeddings_a.cols() == embeddings_b.cols(), Errc::dim_mismatch,
          "embedding sets have different dimensions");
  require(embeddings_a.rows() >= 2 && embeddings_b.rows() >= 2, Errc::invalid_argument,
          "FID needs at least two embeddings per set");
  require(embeddings_a.allFinite() && embeddings_b.allFinite(), Errc::invalid_argument,
          "embeddings must be finite");

  const Eigen::Index e = embeddings_a.cols();
  Eigen::VectorXd mu_a = embeddings_a.colwise().mean();
  Eigen::VectorXd mu_b = embeddings_b.colwise().mean();

  auto covariance = [](const Eigen::MatrixXd& x, const Eigen::VectorXd& mu) {
    Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    return Eigen::MatrixXd(centered.transpose() * centered /
                           static_cast<double>(x.rows() - 1));
  };
  Eigen::MatrixXd cov_a = covariance(embeddings_a, mu_a);
  Eigen::MatrixXd cov_b = covariance(embeddings_b, mu_b);

  // Regularize near-singular fits.
  double scale = std::max(1.0, 0.5 * (cov_a.trace() + cov_b.trace()) / static_cast<double>(e));
  double eps = 1e-10 * scale;
  cov_a.diagonal().array() += eps;
  cov_b.diagonal().array() += eps;

  Eigen::MatrixXd sqrt_a = psd_sqrt(cov_a);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
      0.5 * (sqrt_a * cov_b * sqrt_a + (sqrt_a * cov_b * sqrt_a).transpose()));
  double trace_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  double value =
      (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
  return std::max(value, 0.0);
}

} // namespace facemotion
