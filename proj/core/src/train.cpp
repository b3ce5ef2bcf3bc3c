#include "facemotion/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "facemotion/error.hpp"
#include "facemotion/features.hpp"
#include "facemotion/rng.hpp"

namespace facemotion {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

} // namespace

void TrainConfig::validate() const {
  require(epochs >= 1, Errc::invalid_argument, "epochs must be >= 1");
  require(batch_size >= 1, Errc::invalid_argument, "batch size must be >= 1");
  require(learning_rate > 0, Errc::invalid_argument, "learning rate must be positive");
  require(grad_clip >= 0, Errc::invalid_argument, "grad clip must be non-negative");
  require(checkpoint_every >= 0, Errc::invalid_argument, "checkpoint cadence must be >= 0");
  require(checkpoint_every == 0 || !checkpoint_dir.empty(), Errc::invalid_argument,
          "checkpoint_dir required when checkpointing is enabled");
  weights.validate();
}

Trainer::Trainer(CvaeModel& model, const TrainConfig& config)
    : model_(model), config_(config), params_(model.named_params()) {
  config_.validate();
  adam_m_.reserve(params_.size());
  adam_v_.reserve(params_.size());
  for (auto& [name, p] : params_) {
    adam_m_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    adam_v_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
  }
}

void Trainer::adam_step(std::vector<Eigen::MatrixXd>& grads) {
  if (config_.grad_clip > 0) {
    double sq = 0.0;
    for (const Eigen::MatrixXd& g : grads) sq += g.squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > config_.grad_clip) {
      double s = config_.grad_clip / norm;
      for (Eigen::MatrixXd& g : grads) g *= s;
    }
  }

  step_ += 1;
  double t = static_cast<double>(step_);
  double c1 = 1.0 - std::pow(kAdamBeta1, t);
  double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Eigen::MatrixXd& m = adam_m_[i];
    Eigen::MatrixXd& v = adam_v_[i];
    const Eigen::MatrixXd& g = grads[i];
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
    Eigen::ArrayXXd mhat = m.array() / c1;
    Eigen::ArrayXXd vhat = v.array() / c2;
    *params_[i].second -=
        (config_.learning_rate * mhat / (vhat.sqrt() + kAdamEps)).matrix();
  }
}

std::vector<EpochStats> Trainer::run(const std::vector<TrainingItem>& items) {
  require(!items.empty(), Errc::invalid_argument, "training dataset is empty");
  const ModelConfig& mc = model_.config();

  // Pre-pack motion and align audio once.
  std::vector<Eigen::MatrixXd> motion, audio;
  std::vector<Eigen::VectorXd> shape;
  for (const TrainingItem& item : items) {
    require(item.audio_features.cols() == mc.d_a, Errc::dim_mismatch,
            "training item audio width does not match the model's d_a");
    int t = item.motion.frame_count();
    if (config_.weights.lambda_v > 0)
      require(t >= 2, Errc::invalid_argument,
              "velocity loss requires at least two frames per sequence");
    motion.push_back(item.motion.to_matrix());
    AudioFeatureSequence seq{item.audio_features, 1.0};
    audio.push_back(align_to_frames(seq, t));
    shape.push_back(item.shape.as_vector());
  }

  const std::size_t n = items.size();
  std::vector<EpochStats> history;
  std::vector<Eigen::MatrixXd> grads(params_.size());

  for (; epoch_ < config_.epochs; ++epoch_) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(config_.seed, RngStream::shuffle, static_cast<std::uint64_t>(epoch_)));
    shuffle_rng.shuffle(order);

    double sum_re = 0.0, sum_vel = 0.0, sum_kl = 0.0;
    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(config_.batch_size)) {
      std::size_t batch_n = std::min(static_cast<std::size_t>(config_.batch_size), n - at);
      for (std::size_t i = 0; i < grads.size(); ++i)
        grads[i] = Eigen::MatrixXd::Zero(params_[i].second->rows(), params_[i].second->cols());

      for (std::size_t pos = 0; pos < batch_n; ++pos) {
        std::size_t idx = order[at + pos];
        Rng noise_rng(derive_seed(config_.seed, RngStream::noise, (step_ << 20) + pos));
        Eigen::VectorXd eps(mc.d);
        for (int i = 0; i < mc.d; ++i) eps[i] = noise_rng.normal();

        ad::Graph g;
        CvaeModel::GraphOutputs out =
            model_.build_training_graph(g, motion[idx], shape[idx], audio[idx], eps, &grads);
        ad::Var re = g.mean_sq_diff(out.motion, motion[idx]);
        ad::Var vel = config_.weights.lambda_v > 0
                          ? g.velocity_mean_sq_diff(out.motion, motion[idx])
                          : g.constant(Eigen::MatrixXd::Zero(1, 1));
        ad::Var kl = g.kl_standard_normal(out.mu, out.sigma);
        ad::Var total = g.weighted_sum({{config_.weights.lambda_r, re},
                                        {config_.weights.lambda_v, vel},
                                        {config_.weights.lambda_k, kl}});

        double re_v = g.value(re)(0, 0);
        double vel_v = g.value(vel)(0, 0);
        double kl_v = g.value(kl)(0, 0);
        require(std::isfinite(re_v) && std::isfinite(vel_v) && std::isfinite(kl_v),
                Errc::divergence,
                "non-finite loss at epoch " + std::to_string(epoch_) + ", step " +
                    std::to_string(step_) + " (re=" + std::to_string(re_v) +
                    " vel=" + std::to_string(vel_v) + " kl=" + std::to_string(kl_v) + ")");
        sum_re += re_v;
        sum_vel += vel_v;
        sum_kl += kl_v;

        // Average the batch gradient: scale each item's contribution.
        g.backward(g.scale(total, 1.0 / static_cast<double>(batch_n)));
      }
      adam_step(grads);
    }

    EpochStats stats;
    stats.epoch = epoch_;
    stats.loss_re = sum_re / static_cast<double>(n);
    stats.loss_vel = sum_vel / static_cast<double>(n);
    stats.loss_kl = sum_kl / static_cast<double>(n);
    stats.total = config_.weights.lambda_r * stats.loss_re +
                  config_.weights.lambda_v * stats.loss_vel +
                  config_.weights.lambda_k * stats.loss_kl;
    history.push_back(stats);

    if (config_.checkpoint_every > 0 && (epoch_ + 1) % config_.checkpoint_every == 0) {
      int done = epoch_ + 1;
      epoch_ += 1; // the saved state resumes after this epoch
      save_checkpoint(config_.checkpoint_dir + "/ckpt_epoch" + std::to_string(done) + ".fmck");
      epoch_ -= 1;
    }
  }
  return history;
}

void Trainer::save_checkpoint(const std::string& path) const {
  CheckpointExtras extras;
  extras.meta.emplace_back("opt_step", std::to_string(step_));
  extras.meta.emplace_back("opt_epoch", std::to_string(epoch_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    extras.arrays.emplace_back("opt.m." + params_[i].first, adam_m_[i]);
    extras.arrays.emplace_back("opt.v." + params_[i].first, adam_v_[i]);
  }
  facemotion::save_checkpoint(model_, path, &extras);
}

void Trainer::restore(const CheckpointExtras& extras) {
  std::uint64_t step = 0;
  int epoch = -1;
  for (const auto& [k, v] : extras.meta) {
    if (k == "opt_step") step = std::stoull(v);
    if (k == "opt_epoch") epoch = std::stoi(v);
  }
  require(epoch >= 0, Errc::corrupt_manifest, "checkpoint has no optimizer counters");

  auto find_array = [&](const std::string& name) -> const Eigen::MatrixXd* {
    for (const auto& [n, m] : extras.arrays)
      if (n == name) return &m;
    return nullptr;
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Eigen::MatrixXd* m = find_array("opt.m." + params_[i].first);
    const Eigen::MatrixXd* v = find_array("opt.v." + params_[i].first);
    require(m != nullptr && v != nullptr, Errc::corrupt_manifest,
            "checkpoint is missing optimizer state for '" + params_[i].first + "'");
    adam_m_[i] = *m;
    adam_v_[i] = *v;
  }
  step_ = step;
  epoch_ = epoch;
}

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), Errc::io, "cannot open '" + path + "' for writing");
  out << "epoch,loss_re,loss_vel,loss_kl,total\n";
  for (const EpochStats& s : history)
    out << s.epoch << "," << format_g17(s.loss_re) << "," << format_g17(s.loss_vel) << ","
        << format_g17(s.loss_kl) << "," << format_g17(s.total) << "\n";
  require(out.good(), Errc::io, "write failed for '" + path + "'");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = line;
    if (auto hash = s.find('#'); hash != std::string::npos) s.erase(hash);
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    if (s.empty()) continue;

    auto eq = s.find('=');
    require(eq != std::string::npos, Errc::invalid_argument,
            "config line " + std::to_string(line_no) + " is not 'key = value'");
    std::string key = s.substr(0, eq);
    std::string value = s.substr(eq + 1);
    key.erase(std::find_if(key.rbegin(), key.rend(), not_space).base(), key.end());
    value.erase(value.begin(), std::find_if(value.begin(), value.end(), not_space));
    require(!key.empty() && !value.empty(), Errc::invalid_argument,
            "config line " + std::to_string(line_no) + " is missing a key or value");

    try {
      if (key == "d") cfg.model.d = std::stoi(value);
      else if (key == "layers_enc") cfg.model.n_layers_enc = std::stoi(value);
      else if (key == "layers_dec") cfg.model.n_layers_dec = std::stoi(value);
      else if (key == "heads") cfg.model.n_heads = std::stoi(value);
      else if (key == "ppe_period") cfg.model.ppe_period = std::stoi(value);
      else if (key == "d_a") cfg.model.d_a = std::stoi(value);
      else if (key == "mask_band") cfg.model.mask_band = std::stoi(value);
      else if (key == "epochs") cfg.train.epochs = std::stoi(value);
      else if (key == "batch_size") cfg.train.batch_size = std::stoi(value);
      else if (key == "learning_rate") cfg.train.learning_rate = std::stod(value);
      else if (key == "grad_clip") cfg.train.grad_clip = std::stod(value);
      else if (key == "checkpoint_every") cfg.train.checkpoint_every = std::stoi(value);
      else if (key == "lambda_r") cfg.train.weights.lambda_r = std::stod(value);
      else if (key == "lambda_v") cfg.train.weights.lambda_v = std::stod(value);
      else if (key == "lambda_k") cfg.train.weights.lambda_k = std::stod(value);
      else
        fail(Errc::invalid_argument, "unknown config key '" + key + "'");
    } catch (const std::invalid_argument&) {
      fail(Errc::invalid_argument, "config key '" + key + "' has a malformed value");
    } catch (const std::out_of_range&) {
      fail(Errc::invalid_argument, "config key '" + key + "' has an out-of-range value");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io, "cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string run_config_to_string(const RunConfig& cfg) {
  std::ostringstream out;
  out << "d = " << cfg.model.d << "\n"
      << "layers_enc = " << cfg.model.n_layers_enc << "\n"
      << "layers_dec = " << cfg.model.n_layers_dec << "\n"
      << "heads = " << cfg.model.n_heads << "\n"
      << "ppe_period = " << cfg.model.ppe_period << "\n"
      << "d_a = " << cfg.model.d_a << "\n"
      << "mask_band = " << cfg.model.mask_band << "\n"
      << "epochs = " << cfg.train.epochs << "\n"
      << "batch_size = " << cfg.train.batch_size << "\n"
      << "learning_rate = " << format_g17(cfg.train.learning_rate) << "\n"
      << "grad_clip = " << format_g17(cfg.train.grad_clip) << "\n"
      << "checkpoint_every = " << cfg.train.checkpoint_every << "\n"
      << "lambda_r = " << format_g17(cfg.train.weights.lambda_r) << "\n"
      << "lambda_v = " << format_g17(cfg.train.weights.lambda_v) << "\n"
      << "lambda_k = " << format_g17(cfg.train.weights.lambda_k) << "\n";
  return out.str();
}

} // namespace facemotion
