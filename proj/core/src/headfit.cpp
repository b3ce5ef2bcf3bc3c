#include "facemotion/headfit.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "facemotion/array_file.hpp"
#include "facemotion/error.hpp"
#include "facemotion/rng.hpp"

namespace facemotion::headfit {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

} // namespace

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& axis_angle) {
  double angle = axis_angle.norm();
  Eigen::Matrix3d k = skew(axis_angle);
  if (angle < 1e-8) return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
  double a = std::sin(angle) / angle;
  double b = (1.0 - std::cos(angle)) / (angle * angle);
  return Eigen::Matrix3d::Identity() + a * k + b * k * k;
}

Eigen::Matrix3d so3_right_jacobian(const Eigen::Vector3d& axis_angle) {
  double angle = axis_angle.norm();
  Eigen::Matrix3d k = skew(axis_angle);
  if (angle < 1e-8)
    return Eigen::Matrix3d::Identity() - 0.5 * k + (1.0 / 6.0) * k * k;
  double a = (1.0 - std::cos(angle)) / (angle * angle);
  double b = (angle - std::sin(angle)) / (angle * angle * angle);
  return Eigen::Matrix3d::Identity() - a * k + b * k * k;
}

void ToyHeadModel::validate() const {
  const int v = vertex_count();
  require(v >= 1, Errc::invalid_argument, "head model has no vertices");
  require(template_vertices.cols() == 3, Errc::dim_mismatch, "template must be V x 3");
  require(shape_basis.rows() == 3 * v && shape_basis.cols() == kShapeDim, Errc::dim_mismatch,
          "shape basis must be 3V x 100");
  require(expression_basis.rows() == 3 * v && expression_basis.cols() == kExpressionDim,
          Errc::dim_mismatch, "expression basis must be 3V x 50");
  require(jaw_weights.size() == v, Errc::dim_mismatch, "jaw weights must have V entries");
  require((jaw_weights.array() >= 0.0).all() && (jaw_weights.array() <= 1.0).all(),
          Errc::invalid_argument, "jaw weights must lie in [0, 1]");
  require(static_cast<int>(landmark_indices.size()) == kLandmarkCount, Errc::dim_mismatch,
          "expected 68 landmark indices");
  std::vector<bool> seen(static_cast<std::size_t>(v), false);
  for (int idx : landmark_indices) {
    require(idx >= 0 && idx < v, Errc::invalid_argument, "landmark index out of range");
    require(!seen[static_cast<std::size_t>(idx)], Errc::invalid_argument,
            "landmark indices must be distinct");
    seen[static_cast<std::size_t>(idx)] = true;
  }
}

ToyHeadModel make_toy_head(std::uint64_t seed, int vertex_count) {
  require(vertex_count >= kLandmarkCount, Errc::invalid_argument,
          "toy head needs at least 68 vertices");
  ToyHeadModel m;
  const int v = vertex_count;

  // Ellipsoid template via a Fibonacci sphere; head-sized, in meters.
  m.template_vertices.resize(v, 3);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const Eigen::Vector3d radii(0.08, 0.10, 0.09);
  for (int i = 0; i < v; ++i) {
    double y = 1.0 - 2.0 * (i + 0.5) / static_cast<double>(v);
    double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    double phi = golden * i;
    m.template_vertices(i, 0) = radii.x() * r * std::cos(phi);
    m.template_vertices(i, 1) = radii.y() * y;
    m.template_vertices(i, 2) = radii.z() * r * std::sin(phi);
  }

  m.jaw_pivot = Eigen::Vector3d(0.0, -0.02, 0.0);
  m.jaw_weights.resize(v);
  for (int i = 0; i < v; ++i) {
    // Smooth blend: vertices well below the pivot follow the jaw fully.
    double y = m.template_vertices(i, 1);
    m.jaw_weights[i] = 1.0 / (1.0 + std::exp((y - (m.jaw_pivot.y() - 0.015)) / 0.008));
  }

  m.landmark_indices.resize(kLandmarkCount);
  for (int k = 0; k < kLandmarkCount; ++k)
    m.landmark_indices[static_cast<std::size_t>(k)] =
        static_cast<int>(static_cast<long long>(k) * v / kLandmarkCount);

  // Random-orthogonal bases with geometrically decaying singular values.
  Rng rng(derive_seed(seed, RngStream::data));
  auto make_basis = [&](int count, double scale, double decay) {
    Eigen::MatrixXd g(3 * v, count);
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(3 * v, count);
    for (int c = 0; c < count; ++c) q.col(c) *= scale * std::pow(decay, c);
    return q;
  };
  m.shape_basis = make_basis(kShapeDim, 0.01, 0.95);
  m.expression_basis = make_basis(kExpressionDim, 0.008, 0.95);

  m.validate();
  return m;
}

void save_head(const ToyHeadModel& model, const std::string& path) {
  model.validate();
  ArrayFile file;
  file.add_meta("format", "toyhead-1");
  file.add_matrix("template", model.template_vertices, Dtype::f64);
  file.add_matrix("shape_basis", model.shape_basis, Dtype::f64);
  file.add_matrix("expression_basis", model.expression_basis, Dtype::f64);
  file.add_matrix("jaw_pivot", model.jaw_pivot.transpose(), Dtype::f64);
  file.add_matrix("jaw_weights", model.jaw_weights, Dtype::f64);
  Eigen::MatrixXd lm(kLandmarkCount, 1);
  for (int i = 0; i < kLandmarkCount; ++i) lm(i, 0) = model.landmark_indices[i];
  file.add_matrix("landmark_indices", lm, Dtype::f64);
  save_arrays(file, path);
}

ToyHeadModel load_head(const std::string& path) {
  ArrayFile file = load_arrays(path);
  require(file.meta_at("format") == "toyhead-1", Errc::corrupt_manifest,
          "not a toy head model file");
  ToyHeadModel m;
  m.template_vertices = file.matrix_at("template");
  m.shape_basis = file.matrix_at("shape_basis");
  m.expression_basis = file.matrix_at("expression_basis");
  Eigen::MatrixXd pivot = file.matrix_at("jaw_pivot");
  require(pivot.size() == 3, Errc::dim_mismatch, "jaw_pivot must have 3 entries");
  m.jaw_pivot = Eigen::Vector3d(pivot(0, 0), pivot(0, 1), pivot(0, 2));
  m.jaw_weights = file.matrix_at("jaw_weights");
  Eigen::MatrixXd lm = file.matrix_at("landmark_indices");
  m.landmark_indices.resize(static_cast<std::size_t>(lm.rows()));
  for (Eigen::Index i = 0; i < lm.rows(); ++i)
    m.landmark_indices[static_cast<std::size_t>(i)] = static_cast<int>(lm(i, 0));
  m.validate();
  return m;
}

Eigen::MatrixXd forward(const ToyHeadModel& model, const Eigen::VectorXd& beta,
                        const Eigen::VectorXd& expression, const Eigen::VectorXd& pose) {
  require(beta.size() == kShapeDim, Errc::dim_mismatch, "beta must have 100 coefficients");
  require(expression.size() == kExpressionDim, Errc::dim_mismatch,
          "expression must have 50 coefficients");
  require(pose.size() == kPoseDim, Errc::dim_mismatch, "pose must have 50 coefficients");
  require(beta.allFinite() && expression.allFinite() && pose.allFinite(),
          Errc::invalid_argument, "parameters must be finite");

  const int v = model.vertex_count();
  Eigen::VectorXd offsets = model.shape_basis * beta + model.expression_basis * expression;
  Eigen::Matrix3d jaw = rodrigues(pose.segment<3>(0));
  Eigen::Matrix3d global = rodrigues(pose.segment<3>(3));

  Eigen::MatrixXd out(v, 3);
  for (int i = 0; i < v; ++i) {
    Eigen::Vector3d p = model.template_vertices.row(i).transpose() + offsets.segment<3>(3 * i);
    Eigen::Vector3d q = p - model.jaw_pivot;
    double w = model.jaw_weights[i];
    Eigen::Vector3d blended = model.jaw_pivot + w * (jaw * q) + (1.0 - w) * q;
    out.row(i) = (global * blended).transpose();
  }
  return out;
}

Eigen::Matrix<double, Eigen::Dynamic, 2> project_landmarks(const ToyHeadModel& model,
                                                           const Eigen::MatrixXd& vertices,
                                                           const CameraParams& camera) {
  require(vertices.rows() == model.vertex_count() && vertices.cols() == 3, Errc::dim_mismatch,
          "vertices must be V x 3");
  Eigen::Matrix<double, Eigen::Dynamic, 2> out(kLandmarkCount, 2);
  for (int l = 0; l < kLandmarkCount; ++l) {
    int idx = model.landmark_indices[static_cast<std::size_t>(l)];
    out(l, 0) = camera.scale() * vertices(idx, 0) + camera.translation().x();
    out(l, 1) = camera.scale() * vertices(idx, 1) + camera.translation().y();
  }
  return out;
}

void Scan::validate() const {
  require(points.rows() >= 1 && points.cols() == 3, Errc::dim_mismatch,
          "scan needs at least one 3D point");
  require(points.allFinite(), Errc::invalid_argument, "scan points must be finite");
  if (landmarks.size() > 0) {
    require(landmarks.rows() == kLandmarkCount && landmarks.cols() == 3, Errc::dim_mismatch,
            "scan landmarks must be 68 x 3");
    require(landmarks.allFinite(), Errc::invalid_argument, "scan landmarks must be finite");
  }
}

ShapeParams average_shape_estimates(const std::vector<ShapeParams>& estimates) {
  require(!estimates.empty(), Errc::invalid_argument, "no shape estimates to average");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(kShapeDim);
  for (const ShapeParams& s : estimates) sum += s.as_vector();
  sum /= static_cast<double>(estimates.size());
  std::vector<float> beta(kShapeDim);
  for (int i = 0; i < kShapeDim; ++i) beta[static_cast<std::size_t>(i)] = static_cast<float>(sum[i]);
  return ShapeParams(std::move(beta));
}

namespace {

// Nearest model vertex per scan point under the current geometry.
std::vector<int> nearest_vertices(const Eigen::MatrixXd& points, const Eigen::MatrixXd& verts) {
  std::vector<int> nearest(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index p = 0; p < points.rows(); ++p) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index v = 0; v < verts.rows(); ++v) {
      double d = (points.row(p) - verts.row(v)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(v);
      }
    }
    nearest[static_cast<std::size_t>(p)] = arg;
  }
  return nearest;
}

} // namespace

double shape_objective(const ToyHeadModel& model, const Scan& scan, const Eigen::VectorXd& beta,
                       const FitWeights& weights) {
  scan.validate();
  require(scan.landmarks.size() > 0, Errc::invalid_argument,
          "shape fitting needs scan landmarks");
  Eigen::MatrixXd verts = forward(model, beta, Eigen::VectorXd::Zero(kExpressionDim),
                                  Eigen::VectorXd::Zero(kPoseDim));
  double loss = 0.0;
  for (int l = 0; l < kLandmarkCount; ++l) {
    int idx = model.landmark_indices[static_cast<std::size_t>(l)];
    loss += weights.landmark * (verts.row(idx) - scan.landmarks.row(l)).squaredNorm();
  }
  std::vector<int> nearest = nearest_vertices(scan.points, verts);
  for (Eigen::Index p = 0; p < scan.points.rows(); ++p)
    loss += weights.scan *
            (scan.points.row(p) - verts.row(nearest[static_cast<std::size_t>(p)])).squaredNorm();
  return loss;
}

Eigen::VectorXd shape_gradient(const ToyHeadModel& model, const Scan& scan,
                               const Eigen::VectorXd& beta, const FitWeights& weights) {
  scan.validate();
  require(scan.landmarks.size() > 0, Errc::invalid_argument,
          "shape fitting needs scan landmarks");
  Eigen::MatrixXd verts = forward(model, beta, Eigen::VectorXd::Zero(kExpressionDim),
                                  Eigen::VectorXd::Zero(kPoseDim));
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(kShapeDim);
  // At zero expression and pose the geometry is template + S*beta, so the
  // per-vertex Jacobian is just the matching rows of the shape basis.
  for (int l = 0; l < kLandmarkCount; ++l) {
    int idx = model.landmark_indices[static_cast<std::size_t>(l)];
    Eigen::Vector3d e = (verts.row(idx) - scan.landmarks.row(l)).transpose();
    grad += 2.0 * weights.landmark * model.shape_basis.middleRows(3 * idx, 3).transpose() * e;
  }
  std::vector<int> nearest = nearest_vertices(scan.points, verts);
  for (Eigen::Index p = 0; p < scan.points.rows(); ++p) {
    int idx = nearest[static_cast<std::size_t>(p)];
    Eigen::Vector3d e = (verts.row(idx) - scan.points.row(p)).transpose();
    grad += 2.0 * weights.scan * model.shape_basis.middleRows(3 * idx, 3).transpose() * e;
  }
  return grad;
}

Eigen::VectorXd fit_shape(const ToyHeadModel& model, const Scan& scan,
                          const Eigen::VectorXd& init_beta, const FitOptions& options,
                          FitTrace* trace) {
  require(init_beta.size() == kShapeDim, Errc::dim_mismatch, "init beta must have 100 entries");
  model.validate();

  Eigen::VectorXd beta = init_beta;
  double cost = shape_objective(model, scan, beta, options.weights);
  require(std::isfinite(cost), Errc::divergence, "shape objective is non-finite at the init");
  FitTrace local;
  FitTrace& tr = trace ? *trace : local;
  tr.loss.clear();
  tr.loss.push_back(cost);
  tr.converged = false;

  const Eigen::VectorXd zero_e = Eigen::VectorXd::Zero(kExpressionDim);
  const Eigen::VectorXd zero_p = Eigen::VectorXd::Zero(kPoseDim);
  double damping = 1e-6;

  int it = 0;
  for (; it < options.max_iterations; ++it) {
    Eigen::MatrixXd verts = forward(model, beta, zero_e, zero_p);
    std::vector<int> nearest = nearest_vertices(scan.points, verts);

    // Normal equations from the stacked residuals (landmark + scan terms).
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(kShapeDim, kShapeDim);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(kShapeDim);
    auto add_residual = [&](int vertex, const Eigen::Vector3d& target, double w) {
      Eigen::Matrix<double, 3, Eigen::Dynamic> j =
          model.shape_basis.middleRows(3 * vertex, 3);
      Eigen::Vector3d e = verts.row(vertex).transpose() - target;
      h += w * j.transpose() * j;
      g += w * j.transpose() * e;
    };
    for (int l = 0; l < kLandmarkCount; ++l)
      add_residual(model.landmark_indices[static_cast<std::size_t>(l)],
                   scan.landmarks.row(l).transpose(), options.weights.landmark);
    for (Eigen::Index p = 0; p < scan.points.rows(); ++p)
      add_residual(nearest[static_cast<std::size_t>(p)], scan.points.row(p).transpose(),
                   options.weights.scan);

    bool accepted = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::MatrixXd damped = h;
      for (int i = 0; i < kShapeDim; ++i)
        damped(i, i) += damping * std::max(h(i, i), 1e-12);
      Eigen::VectorXd step = damped.ldlt().solve(-g);
      Eigen::VectorXd candidate = beta + step;
      double new_cost = shape_objective(model, scan, candidate, options.weights);
      if (std::isfinite(new_cost) && new_cost < cost) {
        double rel = (cost - new_cost) / std::max(cost, 1e-300);
        beta = candidate;
        cost = new_cost;
        tr.loss.push_back(cost);
        damping = std::max(damping / 3.0, 1e-12);
        accepted = true;
        if (rel < options.tolerance) {
          tr.converged = true;
        }
        break;
      }
      damping *= 9.0;
      if (damping > 1e14) break;
    }
    if (!accepted) {
      // No decreasing step at any damping: a local minimum.
      tr.converged = true;
      break;
    }
    if (tr.converged) break;
  }
  tr.iterations = it + 1;
  return beta;
}

namespace {

struct FrameGeometry {
  Eigen::MatrixXd verts_blend;   // after jaw blend, before global rotation
  Eigen::MatrixXd verts_world;   // after global rotation
  Eigen::Matrix3d jaw, global;
  Eigen::Matrix3d jaw_jr, global_jr;
};

FrameGeometry frame_geometry(const ToyHeadModel& model, const Eigen::VectorXd& beta,
                             const Eigen::VectorXd& psi, const Eigen::VectorXd& theta) {
  FrameGeometry geo;
  geo.jaw = rodrigues(theta.segment<3>(0));
  geo.global = rodrigues(theta.segment<3>(3));
  geo.jaw_jr = so3_right_jacobian(theta.segment<3>(0));
  geo.global_jr = so3_right_jacobian(theta.segment<3>(3));

  const int v = model.vertex_count();
  Eigen::VectorXd offsets = model.shape_basis * beta + model.expression_basis * psi;
  geo.verts_blend.resize(v, 3);
  geo.verts_world.resize(v, 3);
  for (int i = 0; i < v; ++i) {
    Eigen::Vector3d p = model.template_vertices.row(i).transpose() + offsets.segment<3>(3 * i);
    Eigen::Vector3d q = p - model.jaw_pivot;
    double w = model.jaw_weights[i];
    Eigen::Vector3d blended = model.jaw_pivot + w * (geo.jaw * q) + (1.0 - w) * q;
    geo.verts_blend.row(i) = blended.transpose();
    geo.verts_world.row(i) = (geo.global * blended).transpose();
  }
  return geo;
}

// Residuals (2 per landmark) and optional Jacobian (rows x 103) of one frame.
void frame_residuals(const ToyHeadModel& model, const Eigen::VectorXd& beta,
                     const Eigen::VectorXd& frame_params,
                     const Eigen::Matrix<double, Eigen::Dynamic, 2>& observed,
                     Eigen::VectorXd& residuals, Eigen::MatrixXd* jacobian) {
  const Eigen::VectorXd psi = frame_params.segment(0, kExpressionDim);
  const Eigen::VectorXd theta = frame_params.segment(kExpressionDim, kPoseDim);
  const double scale = frame_params[kExpressionDim + kPoseDim];
  const double tx = frame_params[kExpressionDim + kPoseDim + 1];
  const double ty = frame_params[kExpressionDim + kPoseDim + 2];

  FrameGeometry geo = frame_geometry(model, beta, psi, theta);

  residuals.resize(2 * kLandmarkCount);
  if (jacobian) jacobian->setZero(2 * kLandmarkCount, kSeqParamsPerFrame);

  for (int l = 0; l < kLandmarkCount; ++l) {
    int idx = model.landmark_indices[static_cast<std::size_t>(l)];
    Eigen::Vector3d world = geo.verts_world.row(idx).transpose();
    residuals[2 * l] = scale * world.x() + tx - observed(l, 0);
    residuals[2 * l + 1] = scale * world.y() + ty - observed(l, 1);

    if (!jacobian) continue;
    // dp/dvertex_world, restricted to (x, y) and scaled.
    Eigen::Matrix<double, 2, 3> p2;
    p2 << scale, 0, 0, 0, scale, 0;

    double w = model.jaw_weights[idx];
    // Through the jaw blend: dv_blend/dv0 = w*R_jaw + (1-w)*I.
    Eigen::Matrix3d blend = w * geo.jaw + (1.0 - w) * Eigen::Matrix3d::Identity();
    Eigen::Matrix<double, 2, 3> to_v0 = p2 * geo.global * blend;

    // Expression columns.
    jacobian->block(2 * l, 0, 2, kExpressionDim) =
        to_v0 * model.expression_basis.middleRows(3 * idx, 3);

    // Jaw rotation (pose dims 0-2): d(R q)/dtheta = -R [q]x Jr.
    Eigen::VectorXd offsets3 = model.shape_basis.middleRows(3 * idx, 3) * beta +
                               model.expression_basis.middleRows(3 * idx, 3) * psi;
    Eigen::Vector3d p0 = model.template_vertices.row(idx).transpose() + offsets3;
    Eigen::Vector3d q = p0 - model.jaw_pivot;
    Eigen::Matrix3d d_jaw = -geo.jaw * skew(q) * geo.jaw_jr;
    jacobian->block(2 * l, kExpressionDim, 2, 3) = p2 * geo.global * (w * d_jaw);

    // Global rotation (pose dims 3-5).
    Eigen::Vector3d blended = geo.verts_blend.row(idx).transpose();
    Eigen::Matrix3d d_global = -geo.global * skew(blended) * geo.global_jr;
    jacobian->block(2 * l, kExpressionDim + 3, 2, 3) = p2 * d_global;

    // Camera: scale and translation.
    (*jacobian)(2 * l, kExpressionDim + kPoseDim) = world.x();
    (*jacobian)(2 * l + 1, kExpressionDim + kPoseDim) = world.y();
    (*jacobian)(2 * l, kExpressionDim + kPoseDim + 1) = 1.0;
    (*jacobian)(2 * l + 1, kExpressionDim + kPoseDim + 2) = 1.0;
  }
}

void check_observed(const std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>>& observed) {
  require(!observed.empty(), Errc::invalid_argument, "no observed landmark frames");
  for (const auto& f : observed) {
    require(f.rows() == kLandmarkCount, Errc::dim_mismatch,
            "observed frames must have 68 landmarks");
    require(f.allFinite(), Errc::invalid_argument, "observed landmarks must be finite");
  }
}

} // namespace

double sequence_objective(const ToyHeadModel& model, const Eigen::VectorXd& beta,
                          const std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>>& observed,
                          const Eigen::VectorXd& stacked, double smoothing) {
  check_observed(observed);
  const int t = static_cast<int>(observed.size());
  require(stacked.size() == static_cast<Eigen::Index>(t) * kSeqParamsPerFrame, Errc::dim_mismatch,
          "stacked parameter vector has the wrong length");
  require(smoothing >= 0, Errc::invalid_argument, "smoothing weight must be >= 0");

  double loss = 0.0;
  Eigen::VectorXd r;
  for (int f = 0; f < t; ++f) {
    frame_residuals(model, beta, stacked.segment(f * kSeqParamsPerFrame, kSeqParamsPerFrame),
                    observed[static_cast<std::size_t>(f)], r, nullptr);
    loss += r.squaredNorm();
  }
  for (int f = 0; f + 1 < t; ++f) {
    Eigen::VectorXd d = stacked.segment((f + 1) * kSeqParamsPerFrame, kSeqParamsPerFrame) -
                        stacked.segment(f * kSeqParamsPerFrame, kSeqParamsPerFrame);
    loss += smoothing * d.squaredNorm();
  }
  return loss;
}

Eigen::VectorXd sequence_gradient(const ToyHeadModel& model, const Eigen::VectorXd& beta,
                                  const std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>>& observed,
                                  const Eigen::VectorXd& stacked, double smoothing) {
  check_observed(observed);
  const int t = static_cast<int>(observed.size());
  require(stacked.size() == static_cast<Eigen::Index>(t) * kSeqParamsPerFrame, Errc::dim_mismatch,
          "stacked parameter vector has the wrong length");

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(stacked.size());
  Eigen::VectorXd r;
  Eigen::MatrixXd j;
  for (int f = 0; f < t; ++f) {
    frame_residuals(model, beta, stacked.segment(f * kSeqParamsPerFrame, kSeqParamsPerFrame),
                    observed[static_cast<std::size_t>(f)], r, &j);
    grad.segment(f * kSeqParamsPerFrame, kSeqParamsPerFrame) += 2.0 * j.transpose() * r;
  }
  for (int f = 0; f + 1 < t; ++f) {
    Eigen::VectorXd d = stacked.segment((f + 1) * kSeqParamsPerFrame, kSeqParamsPerFrame) -
                        stacked.segment(f * kSeqParamsPerFrame, kSeqParamsPerFrame);
    grad.segment((f + 1) * kSeqParamsPerFrame, kSeqParamsPerFrame) += 2.0 * smoothing * d;
    grad.segment(f * kSeqParamsPerFrame, kSeqParamsPerFrame) -= 2.0 * smoothing * d;
  }
  return grad;
}

SequenceFit fit_sequence(const ToyHeadModel& model, const Eigen::VectorXd& beta,
                         const std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>>& observed,
                         const FitOptions& options, float fps) {
  model.validate();
  check_observed(observed);
  require(beta.size() == kShapeDim, Errc::dim_mismatch, "beta must have 100 entries");
  const int t = static_cast<int>(observed.size());
  const int n = t * kSeqParamsPerFrame;

  // Similarity init per frame from the neutral geometry: match the landmark
  // spread and centroid; expression and pose start at zero.
  Eigen::MatrixXd verts0 = forward(model, beta, Eigen::VectorXd::Zero(kExpressionDim),
                                   Eigen::VectorXd::Zero(kPoseDim));
  double model_min_x = std::numeric_limits<double>::infinity(), model_max_x = -model_min_x;
  double model_min_y = model_min_x, model_max_y = model_max_x;
  double model_cx = 0.0, model_cy = 0.0;
  for (int idx : model.landmark_indices) {
    model_min_x = std::min(model_min_x, verts0(idx, 0));
    model_max_x = std::max(model_max_x, verts0(idx, 0));
    model_min_y = std::min(model_min_y, verts0(idx, 1));
    model_max_y = std::max(model_max_y, verts0(idx, 1));
    model_cx += verts0(idx, 0);
    model_cy += verts0(idx, 1);
  }
  model_cx /= kLandmarkCount;
  model_cy /= kLandmarkCount;
  double model_spread = std::max(model_max_x - model_min_x, model_max_y - model_min_y);
  require(model_spread > 0, Errc::invalid_argument, "degenerate model landmark spread");

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (int f = 0; f < t; ++f) {
    const auto& obs = observed[static_cast<std::size_t>(f)];
    double obs_spread = std::max(obs.col(0).maxCoeff() - obs.col(0).minCoeff(),
                                 obs.col(1).maxCoeff() - obs.col(1).minCoeff());
    double s = obs_spread > 0 ? obs_spread / model_spread : 1.0;
    x[f * kSeqParamsPerFrame + kExpressionDim + kPoseDim] = s;
    x[f * kSeqParamsPerFrame + kExpressionDim + kPoseDim + 1] = obs.col(0).mean() - s * model_cx;
    x[f * kSeqParamsPerFrame + kExpressionDim + kPoseDim + 2] = obs.col(1).mean() - s * model_cy;
  }

  double cost = sequence_objective(model, beta, observed, x, options.smoothing);
  require(std::isfinite(cost), Errc::divergence, "sequence objective is non-finite at the init");
  SequenceFit out{MotionSequence({MotionFrame()}, fps), {}, {}};
  out.trace.loss.push_back(cost);

  using Sparse = Eigen::SparseMatrix<double>;
  double damping = 1e-6;
  int it = 0;
  bool converged = false;
  for (; it < options.max_iterations && !converged; ++it) {
    // Assemble the block-tridiagonal normal equations.
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(t) * kSeqParamsPerFrame * kSeqParamsPerFrame +
                     static_cast<std::size_t>(t) * 4 * kSeqParamsPerFrame);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd r;
    Eigen::MatrixXd j;
    for (int f = 0; f < t; ++f) {
      frame_residuals(model, beta, x.segment(f * kSeqParamsPerFrame, kSeqParamsPerFrame),
                      observed[static_cast<std::size_t>(f)], r, &j);
      Eigen::MatrixXd block = j.transpose() * j;
      int base = f * kSeqParamsPerFrame;
      for (int a = 0; a < kSeqParamsPerFrame; ++a)
        for (int b = 0; b < kSeqParamsPerFrame; ++b)
          if (block(a, b) != 0.0) triplets.emplace_back(base + a, base + b, block(a, b));
      g.segment(base, kSeqParamsPerFrame) += j.transpose() * r;
    }
    for (int f = 0; f + 1 < t; ++f) {
      int a = f * kSeqParamsPerFrame;
      int b = (f + 1) * kSeqParamsPerFrame;
      Eigen::VectorXd d = x.segment(b, kSeqParamsPerFrame) - x.segment(a, kSeqParamsPerFrame);
      for (int i = 0; i < kSeqParamsPerFrame; ++i) {
        triplets.emplace_back(a + i, a + i, options.smoothing);
        triplets.emplace_back(b + i, b + i, options.smoothing);
        triplets.emplace_back(a + i, b + i, -options.smoothing);
        triplets.emplace_back(b + i, a + i, -options.smoothing);
      }
      g.segment(b, kSeqParamsPerFrame) += options.smoothing * d;
      g.segment(a, kSeqParamsPerFrame) -= options.smoothing * d;
    }

    Sparse h(n, n);
    h.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::VectorXd diag(n);
    for (int i = 0; i < n; ++i) diag[i] = std::max(h.coeff(i, i), 1e-8);

    bool accepted = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Sparse damped = h;
      for (int i = 0; i < n; ++i) damped.coeffRef(i, i) += damping * diag[i];
      Eigen::SimplicialLDLT<Sparse> solver(damped);
      if (solver.info() == Eigen::Success) {
        Eigen::VectorXd step = solver.solve(-g);
        Eigen::VectorXd candidate = x + step;
        double new_cost = sequence_objective(model, beta, observed, candidate, options.smoothing);
        if (std::isfinite(new_cost) && new_cost < cost) {
          double rel = (cost - new_cost) / std::max(cost, 1e-300);
          x = candidate;
          cost = new_cost;
          out.trace.loss.push_back(cost);
          damping = std::max(damping / 3.0, 1e-12);
          accepted = true;
          if (rel < options.tolerance) converged = true;
          break;
        }
      }
      damping *= 9.0;
      if (damping > 1e14) break;
    }
    if (!accepted) {
      converged = true; // no decreasing step at any damping: a local minimum
    }
  }
  out.trace.iterations = it;
  out.trace.converged = converged;

  // Unpack into motion frames and cameras.
  std::vector<MotionFrame> frames;
  frames.reserve(static_cast<std::size_t>(t));
  out.cameras.reserve(static_cast<std::size_t>(t));
  for (int f = 0; f < t; ++f) {
    std::vector<float> psi(kExpressionDim), theta(kPoseDim);
    for (int i = 0; i < kExpressionDim; ++i)
      psi[static_cast<std::size_t>(i)] = static_cast<float>(x[f * kSeqParamsPerFrame + i]);
    for (int i = 0; i < kPoseDim; ++i)
      theta[static_cast<std::size_t>(i)] =
          static_cast<float>(x[f * kSeqParamsPerFrame + kExpressionDim + i]);
    frames.emplace_back(std::move(psi), std::move(theta));
    double s = x[f * kSeqParamsPerFrame + kExpressionDim + kPoseDim];
    double cx = x[f * kSeqParamsPerFrame + kExpressionDim + kPoseDim + 1];
    double cy = x[f * kSeqParamsPerFrame + kExpressionDim + kPoseDim + 2];
    require(s > 0, Errc::divergence, "fit produced a non-positive camera scale");
    out.cameras.emplace_back(s, Eigen::Vector2d(cx, cy));
  }
  out.motion = MotionSequence(std::move(frames), fps);
  return out;
}

} // namespace facemotion::headfit
