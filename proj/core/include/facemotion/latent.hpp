#pragma once

#include <Eigen/Core>

#include "facemotion/error.hpp"

namespace facemotion {

// Gaussian posterior over the latent space, parameterized by standard
// deviations (not variances).
struct LatentDistribution {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;

  LatentDistribution(Eigen::VectorXd mu_in, Eigen::VectorXd sigma_in)
      : mu(std::move(mu_in)), sigma(std::move(sigma_in)) {
    require(mu.size() == sigma.size(), Errc::dim_mismatch, "mu and sigma sizes differ");
    require(mu.allFinite() && sigma.allFinite(), Errc::invalid_argument,
            "latent distribution must be finite");
    require((sigma.array() > 0.0).all(), Errc::invalid_argument,
            "sigma must be strictly positive");
  }

  int dim() const { return static_cast<int>(mu.size()); }
};

struct LatentVector {
  Eigen::VectorXd z;

  explicit LatentVector(Eigen::VectorXd z_in) : z(std::move(z_in)) {
    require(z.allFinite(), Errc::invalid_argument, "latent vector must be finite");
  }

  int dim() const { return static_cast<int>(z.size()); }
};

} // namespace facemotion
