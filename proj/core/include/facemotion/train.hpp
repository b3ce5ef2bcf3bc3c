#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "facemotion/cvae.hpp"
#include "facemotion/losses.hpp"
#include "facemotion/motion.hpp"

namespace facemotion {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double learning_rate = 1e-4;
  double grad_clip = 1.0; // global gradient-norm clip; 0 disables
  std::uint64_t seed = 0;
  int checkpoint_every = 0;   // epochs between checkpoints; 0 disables
  std::string checkpoint_dir; // required when checkpoint_every > 0
  LossWeights weights;

  void validate() const;
};

// One (audio, shape, motion) triple. Audio features are at the backend's
// native rate and get aligned to the motion frame count internally.
struct TrainingItem {
  MotionSequence motion;
  ShapeParams shape;
  Eigen::MatrixXd audio_features;
};

struct EpochStats {
  int epoch;
  double loss_re;
  double loss_vel;
  double loss_kl;
  double total;
};

// Single-writer training loop: teacher-forced CVAE objective, Adam with
// global-norm clipping, counter-based noise/shuffle streams so a resumed run
// reproduces an uninterrupted one bit for bit.
class Trainer {
public:
  Trainer(CvaeModel& model, const TrainConfig& config);

  // Trains from the current epoch up to config.epochs and returns the
  // per-epoch component losses. Aborts with a divergence error on a
  // non-finite loss.
  std::vector<EpochStats> run(const std::vector<TrainingItem>& items);

  int epoch() const { return epoch_; }
  std::uint64_t step() const { return step_; }

  // Model parameters plus optimizer state and counters.
  void save_checkpoint(const std::string& path) const;
  // Restores optimizer state and counters captured by save_checkpoint; the
  // model itself is restored via load_checkpoint.
  void restore(const CheckpointExtras& extras);

private:
  void adam_step(std::vector<Eigen::MatrixXd>& grads);

  CvaeModel& model_;
  TrainConfig config_;
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> params_;
  std::vector<Eigen::MatrixXd> adam_m_, adam_v_;
  std::uint64_t step_ = 0;
  int epoch_ = 0;
};

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path);

// Human-readable `key = value` config covering the model and the training
// loop; the seed deliberately stays a command-line concern.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_string(const RunConfig& config);

} // namespace facemotion
