#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "facemotion/motion.hpp"

namespace facemotion::headfit {

inline constexpr int kLandmarkCount = 68;
// Generation seed for the default toy head; shipped here so every checkout
// fits against the same synthetic model.
inline constexpr std::uint64_t kDefaultHeadSeed = 0x4ace5eedull;

// Linear blendshape head with jaw articulation, interface-identical to a
// full parametric head model: shape (100), expression (50), pose (50, of
// which dims 0-2 drive the jaw, dims 3-5 the global rotation, the rest are
// inert).
struct ToyHeadModel {
  Eigen::MatrixXd template_vertices; // V x 3, meters
  Eigen::MatrixXd shape_basis;       // 3V x 100, vertex-major (x, y, z)
  Eigen::MatrixXd expression_basis;  // 3V x 50
  Eigen::Vector3d jaw_pivot;
  Eigen::VectorXd jaw_weights;       // V, blend weight of the jaw rotation in [0, 1]
  std::vector<int> landmark_indices; // 68 distinct vertex indices

  int vertex_count() const { return static_cast<int>(template_vertices.rows()); }
  void validate() const;
};

// Deterministic synthetic head: ellipsoid template, random-orthogonal bases
// with geometrically decaying singular values.
ToyHeadModel make_toy_head(std::uint64_t seed = kDefaultHeadSeed, int vertex_count = 500);

void save_head(const ToyHeadModel& model, const std::string& path);
ToyHeadModel load_head(const std::string& path);

// Axis-angle exponential map and its right Jacobian.
Eigen::Matrix3d rodrigues(const Eigen::Vector3d& axis_angle);
Eigen::Matrix3d so3_right_jacobian(const Eigen::Vector3d& axis_angle);

// vertices = R_global( jaw_blend( template + S*beta + E*psi ) )
Eigen::MatrixXd forward(const ToyHeadModel& model, const Eigen::VectorXd& beta,
                        const Eigen::VectorXd& expression, const Eigen::VectorXd& pose);

// Weak-perspective projection of the landmark vertices to pixels.
Eigen::Matrix<double, Eigen::Dynamic, 2> project_landmarks(const ToyHeadModel& model,
                                                           const Eigen::MatrixXd& vertices,
                                                           const CameraParams& camera);

// A 3D scan with optional annotated 3D landmarks (68 x 3 when present).
struct Scan {
  Eigen::MatrixXd points;    // P x 3
  Eigen::MatrixXd landmarks; // 68 x 3, or 0 x 3 when absent

  void validate() const;
};

// Protocol helper: identity estimate = mean of per-frame shape estimates.
ShapeParams average_shape_estimates(const std::vector<ShapeParams>& estimates);

struct FitWeights {
  double landmark = 1.0; // 3D landmark residuals
  double scan = 0.1;     // scan-point-to-nearest-vertex residuals
};

struct FitOptions {
  int max_iterations = 2000;
  double tolerance = 1e-8; // relative loss change at convergence
  double smoothing = 0.1;  // lambda_s for sequence fitting
  FitWeights weights;
};

struct FitTrace {
  std::vector<double> loss; // accepted objective values, strictly non-increasing
  int iterations = 0;
  bool converged = false;
};

// Shape refinement objective over beta (expression and pose held at zero):
// weights.landmark * sum ||model landmark - scan landmark||^2
// + weights.scan * sum ||scan point - nearest model vertex||^2.
double shape_objective(const ToyHeadModel& model, const Scan& scan, const Eigen::VectorXd& beta,
                       const FitWeights& weights);
Eigen::VectorXd shape_gradient(const ToyHeadModel& model, const Scan& scan,
                               const Eigen::VectorXd& beta, const FitWeights& weights);

Eigen::VectorXd fit_shape(const ToyHeadModel& model, const Scan& scan,
                          const Eigen::VectorXd& init_beta, const FitOptions& options = {},
                          FitTrace* trace = nullptr);

// Per-frame parameter layout for sequence fitting:
// [expression(50), pose(50), scale, tx, ty].
inline constexpr int kSeqParamsPerFrame = kExpressionDim + kPoseDim + 3;

// Sequence objective over stacked per-frame parameters:
// sum_t ||project(forward(beta, psi_t, theta_t), cam_t) - observed_t||^2
// + smoothing * sum_t ||x_{t+1} - x_t||^2.
double sequence_objective(const ToyHeadModel& model, const Eigen::VectorXd& beta,
                          const std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>>& observed,
                          const Eigen::VectorXd& stacked, double smoothing);
Eigen::VectorXd sequence_gradient(const ToyHeadModel& model, const Eigen::VectorXd& beta,
                                  const std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>>& observed,
                                  const Eigen::VectorXd& stacked, double smoothing);

struct SequenceFit {
  MotionSequence motion;
  std::vector<CameraParams> cameras;
  FitTrace trace;
};

// Motion reconstruction from observed 2D landmark tracks with the identity
// fixed: damped Gauss-Newton over all per-frame parameters jointly, first-
// order smoothing on all of them. Deterministic given the inputs.
SequenceFit fit_sequence(const ToyHeadModel& model, const Eigen::VectorXd& beta,
                         const std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>>& observed,
                         const FitOptions& options = {}, float fps = 30.0f);

} // namespace facemotion::headfit
