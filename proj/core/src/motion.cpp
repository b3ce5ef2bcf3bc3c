#include "facemotion/motion.hpp"

#include <cmath>

#include "facemotion/error.hpp"

namespace facemotion {

namespace {

void require_finite(const std::vector<float>& v, const char* what) {
  for (float x : v)
    require(std::isfinite(x), Errc::invalid_argument, std::string(what) + " contains a non-finite value");
}

} // namespace

ShapeParams::ShapeParams() : beta_(kShapeDim, 0.0f) {}

ShapeParams::ShapeParams(std::vector<float> beta) : beta_(std::move(beta)) {
  require(static_cast<int>(beta_.size()) == kShapeDim, Errc::dim_mismatch,
          "shape parameters must have exactly " + std::to_string(kShapeDim) + " coefficients");
  require_finite(beta_, "shape parameters");
}

Eigen::VectorXd ShapeParams::as_vector() const {
  Eigen::VectorXd v(kShapeDim);
  for (int i = 0; i < kShapeDim; ++i) v[i] = static_cast<double>(beta_[i]);
  return v;
}

MotionFrame::MotionFrame() : expression_(kExpressionDim, 0.0f), pose_(kPoseDim, 0.0f) {}

MotionFrame::MotionFrame(std::vector<float> expression, std::vector<float> pose)
    : expression_(std::move(expression)), pose_(std::move(pose)) {
  require(static_cast<int>(expression_.size()) == kExpressionDim, Errc::dim_mismatch,
          "expression must have exactly " + std::to_string(kExpressionDim) + " coefficients");
  require(static_cast<int>(pose_.size()) == kPoseDim, Errc::dim_mismatch,
          "pose must have exactly " + std::to_string(kPoseDim) + " coefficients");
  require_finite(expression_, "expression");
  require_finite(pose_, "pose");
}

std::vector<float> pack_frame(const MotionFrame& frame) {
  std::vector<float> packed;
  packed.reserve(kFrameDim);
  packed.insert(packed.end(), frame.expression().begin(), frame.expression().end());
  packed.insert(packed.end(), frame.pose().begin(), frame.pose().end());
  return packed;
}

MotionFrame unpack_frame(const std::vector<float>& packed) {
  require(static_cast<int>(packed.size()) == kFrameDim, Errc::dim_mismatch,
          "packed frame must have exactly " + std::to_string(kFrameDim) + " values");
  std::vector<float> expression(packed.begin(), packed.begin() + kExpressionDim);
  std::vector<float> pose(packed.begin() + kExpressionDim, packed.end());
  return MotionFrame(std::move(expression), std::move(pose));
}

MotionSequence::MotionSequence(std::vector<MotionFrame> frames, float fps)
    : frames_(std::move(frames)), fps_(fps) {
  require(!frames_.empty(), Errc::invalid_argument, "motion sequence needs at least one frame");
  require(std::isfinite(fps_) && fps_ > 0.0f, Errc::invalid_argument, "fps must be positive");
}

Eigen::MatrixXd MotionSequence::to_matrix() const {
  Eigen::MatrixXd m(frame_count(), kFrameDim);
  for (int t = 0; t < frame_count(); ++t) {
    const MotionFrame& f = frames_[static_cast<std::size_t>(t)];
    for (int i = 0; i < kExpressionDim; ++i) m(t, i) = static_cast<double>(f.expression()[i]);
    for (int i = 0; i < kPoseDim; ++i)
      m(t, kExpressionDim + i) = static_cast<double>(f.pose()[i]);
  }
  return m;
}

MotionSequence MotionSequence::from_matrix(const Eigen::MatrixXd& packed, float fps) {
  require(packed.cols() == kFrameDim, Errc::dim_mismatch,
          "packed motion matrix must have " + std::to_string(kFrameDim) + " columns");
  require(packed.rows() >= 1, Errc::invalid_argument, "motion sequence needs at least one frame");
  std::vector<MotionFrame> frames;
  frames.reserve(static_cast<std::size_t>(packed.rows()));
  for (Eigen::Index t = 0; t < packed.rows(); ++t) {
    std::vector<float> expression(kExpressionDim), pose(kPoseDim);
    for (int i = 0; i < kExpressionDim; ++i) expression[i] = static_cast<float>(packed(t, i));
    for (int i = 0; i < kPoseDim; ++i) pose[i] = static_cast<float>(packed(t, kExpressionDim + i));
    frames.emplace_back(std::move(expression), std::move(pose));
  }
  return MotionSequence(std::move(frames), fps);
}

CameraParams::CameraParams() : scale_(1.0), translation_(Eigen::Vector2d::Zero()) {}

CameraParams::CameraParams(double scale, const Eigen::Vector2d& translation)
    : scale_(scale), translation_(translation) {
  require(std::isfinite(scale_) && scale_ > 0.0, Errc::invalid_argument,
          "camera scale must be positive");
  require(translation_.allFinite(), Errc::invalid_argument,
          "camera translation must be finite");
}

} // namespace facemotion
