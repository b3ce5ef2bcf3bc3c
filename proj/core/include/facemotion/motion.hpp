#pragma once

#include <vector>

#include <Eigen/Core>

namespace facemotion {

inline constexpr int kShapeDim = 100;      // identity coefficients (beta)
inline constexpr int kExpressionDim = 50;  // expression coefficients (psi)
inline constexpr int kPoseDim = 50;        // pose coefficients (theta), stored as given
inline constexpr int kFrameDim = kExpressionDim + kPoseDim;

// Identity vector conditioning both the generator and the fitter.
// Values are float so that file round-trips are bit-exact.
class ShapeParams {
public:
  ShapeParams(); // all-zero identity
  explicit ShapeParams(std::vector<float> beta);

  const std::vector<float>& beta() const { return beta_; }
  Eigen::VectorXd as_vector() const;

  friend bool operator==(const ShapeParams&, const ShapeParams&) = default;

private:
  std::vector<float> beta_;
};

// One frame of parametric motion: 50 expression + 50 pose coefficients.
class MotionFrame {
public:
  MotionFrame(); // neutral frame
  MotionFrame(std::vector<float> expression, std::vector<float> pose);

  const std::vector<float>& expression() const { return expression_; }
  const std::vector<float>& pose() const { return pose_; }

  friend bool operator==(const MotionFrame&, const MotionFrame&) = default;

private:
  std::vector<float> expression_;
  std::vector<float> pose_;
};

// Frame packing: expression first, pose second.
std::vector<float> pack_frame(const MotionFrame& frame);
MotionFrame unpack_frame(const std::vector<float>& packed);

// An ordered motion sequence at a fixed frame rate.
class MotionSequence {
public:
  MotionSequence(std::vector<MotionFrame> frames, float fps = 30.0f);

  const std::vector<MotionFrame>& frames() const { return frames_; }
  int frame_count() const { return static_cast<int>(frames_.size()); }
  float fps() const { return fps_; }

  // Packed frames as rows, promoted to double for numeric work.
  Eigen::MatrixXd to_matrix() const;
  // Rows are packed frames; values are quantized to float storage.
  static MotionSequence from_matrix(const Eigen::MatrixXd& packed, float fps = 30.0f);

  friend bool operator==(const MotionSequence&, const MotionSequence&) = default;

private:
  std::vector<MotionFrame> frames_;
  float fps_;
};

// Weak-perspective camera: p = scale * (x, y) + translation.
class CameraParams {
public:
  CameraParams(); // scale 1, no offset
  CameraParams(double scale, const Eigen::Vector2d& translation);

  double scale() const { return scale_; }
  const Eigen::Vector2d& translation() const { return translation_; }

private:
  double scale_;
  Eigen::Vector2d translation_;
};

} // namespace facemotion
