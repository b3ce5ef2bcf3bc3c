#include "facemotion/losses.hpp"

#include <cmath>

#include "facemotion/error.hpp"

namespace facemotion {

namespace {

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), Errc::dim_mismatch,
          "sequence shapes differ");
}

} // namespace

void LossWeights::validate() const {
  require(lambda_r >= 0 && lambda_v >= 0 && lambda_k >= 0, Errc::invalid_argument,
          "loss weights must be non-negative");
  require(lambda_r + lambda_v + lambda_k > 0, Errc::invalid_argument,
          "at least one loss weight must be positive");
}

double loss_reconstruction(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt) {
  require_same_shape(pred, gt);
  return (pred - gt).array().square().sum() / static_cast<double>(pred.size());
}

Eigen::MatrixXd loss_reconstruction_grad(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt) {
  require_same_shape(pred, gt);
  return 2.0 / static_cast<double>(pred.size()) * (pred - gt);
}

double loss_velocity(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt) {
  require_same_shape(pred, gt);
  require(pred.rows() >= 2, Errc::invalid_argument, "velocity loss needs at least two frames");
  Eigen::Index t = pred.rows() - 1;
  Eigen::MatrixXd dv = (pred.bottomRows(t) - pred.topRows(t)) - (gt.bottomRows(t) - gt.topRows(t));
  return dv.array().square().sum() / static_cast<double>(dv.size());
}

Eigen::MatrixXd loss_velocity_grad(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt) {
  require_same_shape(pred, gt);
  require(pred.rows() >= 2, Errc::invalid_argument, "velocity loss needs at least two frames");
  Eigen::Index t = pred.rows() - 1;
  Eigen::MatrixXd dv = (pred.bottomRows(t) - pred.topRows(t)) - (gt.bottomRows(t) - gt.topRows(t));
  double norm = 2.0 / static_cast<double>(dv.size());
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(pred.rows(), pred.cols());
  grad.bottomRows(t) += norm * dv;
  grad.topRows(t) -= norm * dv;
  return grad;
}

double loss_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma) {
  require(mu.size() == sigma.size(), Errc::dim_mismatch, "mu and sigma sizes differ");
  require((sigma.array() > 0.0).all(), Errc::invalid_argument, "sigma must be strictly positive");
  return 0.5 * (mu.array().square() + sigma.array().square() - 1.0 -
                2.0 * sigma.array().log())
                   .sum();
}

void loss_kl_grad(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, Eigen::VectorXd& d_mu,
                  Eigen::VectorXd& d_sigma) {
  require(mu.size() == sigma.size(), Errc::dim_mismatch, "mu and sigma sizes differ");
  require((sigma.array() > 0.0).all(), Errc::invalid_argument, "sigma must be strictly positive");
  d_mu = mu;
  d_sigma = (sigma.array() - sigma.array().inverse()).matrix();
}

double loss_total(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt,
                  const LatentDistribution& dist, const LossWeights& weights) {
  weights.validate();
  return weights.lambda_r * loss_reconstruction(pred, gt) +
         weights.lambda_v * loss_velocity(pred, gt) + weights.lambda_k * loss_kl(dist.mu, dist.sigma);
}

double loss_reconstruction(const MotionSequence& pred, const MotionSequence& gt) {
  return loss_reconstruction(pred.to_matrix(), gt.to_matrix());
}

double loss_velocity(const MotionSequence& pred, const MotionSequence& gt) {
  return loss_velocity(pred.to_matrix(), gt.to_matrix());
}

double loss_kl(const LatentDistribution& dist) { return loss_kl(dist.mu, dist.sigma); }

double loss_total(const MotionSequence& pred, const MotionSequence& gt,
                  const LatentDistribution& dist, const LossWeights& weights) {
  return loss_total(pred.to_matrix(), gt.to_matrix(), dist, weights);
}

} // namespace facemotion
