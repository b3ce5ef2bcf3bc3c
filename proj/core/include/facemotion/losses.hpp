#pragma once

#include <Eigen/Core>

#include "facemotion/latent.hpp"
#include "facemotion/motion.hpp"

namespace facemotion {

// Training objective weights for reconstruction, velocity and KL terms.
struct LossWeights {
  double lambda_r = 1.0;
  double lambda_v = 1.0;
  double lambda_k = 1e-4;

  void validate() const;
};

// All losses are normalized by element count so values are scale-free
// across sequence lengths. The same mean-squared functional serves as the
// distance D used by the 3D evaluation metrics.

// Mean over all entries of the squared difference.
double loss_reconstruction(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt);
Eigen::MatrixXd loss_reconstruction_grad(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt);

// Mean squared difference between first-order frame differences (rows are
// frames); requires at least two frames.
double loss_velocity(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt);
Eigen::MatrixXd loss_velocity_grad(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt);

// KL divergence to the standard Gaussian, summed over dimensions:
// 1/2 * sum_i (mu_i^2 + sigma_i^2 - 1 - ln sigma_i^2).
double loss_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma);
void loss_kl_grad(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, Eigen::VectorXd& d_mu,
                  Eigen::VectorXd& d_sigma);

double loss_total(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt,
                  const LatentDistribution& dist, const LossWeights& weights);

// Convenience overloads on domain types.
double loss_reconstruction(const MotionSequence& pred, const MotionSequence& gt);
double loss_velocity(const MotionSequence& pred, const MotionSequence& gt);
double loss_kl(const LatentDistribution& dist);
double loss_total(const MotionSequence& pred, const MotionSequence& gt,
                  const LatentDistribution& dist, const LossWeights& weights);

} // namespace facemotion
