#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "facemotion/autodiff.hpp"
#include "facemotion/latent.hpp"
#include "facemotion/motion.hpp"

namespace facemotion {

using BoolMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct ModelConfig {
  int d = 256;          // model width == latent width
  int n_layers_enc = 2; // encoder transformer depth
  int n_layers_dec = 2; // decoder transformer depth
  int n_heads = 4;
  int ppe_period = 30;  // one second at 30 fps
  int d_a = 80;         // audio feature width
  int mask_band = 0;    // cross-attention bandwidth; 0 = strict diagonal

  void validate() const;
};

// Periodic positional encoding: the standard sinusoid evaluated at
// (position mod period), so rows repeat exactly with the period.
Eigen::MatrixXd ppe(int frame_count, int dim, int period);

// Cross-attention mask aligning motion tokens to audio frames. The leading
// extra_tokens rows (mu/sigma tokens in the encoder, the shape token in the
// decoder) may attend everywhere; frame row t attends to audio columns within
// `band` of t. Query and key frame counts must match (audio is pre-aligned).
BoolMask alignment_mask(int query_frames, int key_frames, int extra_tokens, int band = 0);

// Transformer CVAE over packed motion frames, conditioned on an identity
// shape vector and per-frame audio features.
//
// Encoder tokens:  [mu, sigma, proj(m_t) + shape_embedding ...], PPE over all.
// Decoder tokens:  [shape_embedding, z, ..., z], PPE over all; the first
// output token is discarded and the rest project to motion frames.
class CvaeModel {
public:
  CvaeModel(const ModelConfig& config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }

  // audio_aligned must have one row per motion frame.
  LatentDistribution encode(const MotionSequence& motion, const ShapeParams& shape,
                            const Eigen::MatrixXd& audio_aligned) const;

  // z = mu + sigma * noise, elementwise.
  static LatentVector reparameterize(const LatentDistribution& dist,
                                     const Eigen::VectorXd& noise);

  MotionSequence decode(const LatentVector& z, const ShapeParams& shape,
                        const Eigen::MatrixXd& audio_aligned, int frame_count,
                        float fps = 30.0f) const;

  // Stable-order parameter registry used by the optimizer and checkpoints.
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> named_params();
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> named_params() const;

  struct GraphOutputs {
    ad::Var mu;     // 1 x d
    ad::Var sigma;  // 1 x d, strictly positive
    ad::Var motion; // T x kFrameDim
  };

  // Teacher-forced forward pass for one sequence: encoder, in-graph
  // reparameterization with the supplied noise, decoder. When grads is
  // non-null it must match named_params() in length; Graph::backward then
  // accumulates parameter gradients into it.
  GraphOutputs build_training_graph(ad::Graph& graph, const Eigen::MatrixXd& motion,
                                    const Eigen::VectorXd& shape, const Eigen::MatrixXd& audio,
                                    const Eigen::VectorXd& noise,
                                    std::vector<Eigen::MatrixXd>* grads) const;

  struct Binder; // parameter-to-node binding used while building graphs

private:
  struct Linear {
    Eigen::MatrixXd w; // in x out
    Eigen::MatrixXd b; // 1 x out
  };
  struct Norm {
    Eigen::MatrixXd gamma, beta; // 1 x d
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct Block {
    Norm ln1, ln2, ln3;
    Attention self_attn, cross_attn;
    Linear ff1, ff2;
  };
  struct Tower {
    Linear shape_embed; // kShapeDim x d
    Linear audio_proj;  // d_a x d
    std::vector<Block> blocks;
    Norm ln_out;
  };

  ad::Var run_encoder(ad::Graph& graph, Binder& binder, const Eigen::MatrixXd& motion,
                      const Eigen::VectorXd& shape, const Eigen::MatrixXd& audio,
                      ad::Var* sigma_out) const;
  ad::Var run_decoder(ad::Graph& graph, Binder& binder, ad::Var z_row,
                      const Eigen::VectorXd& shape, const Eigen::MatrixXd& audio,
                      int frame_count) const;
  void check_audio(const Eigen::MatrixXd& audio, int frame_count) const;

  ModelConfig config_;
  Linear motion_proj_;               // kFrameDim x d
  Eigen::MatrixXd mu_token_, sigma_token_; // 1 x d learnable tokens
  Tower encoder_;
  Tower decoder_;
  Linear out_proj_; // d x kFrameDim
};

// Checkpoints: model config + parameters, plus optional extra arrays such as
// optimizer state; float64 on disk so resumed training matches bit for bit.
struct CheckpointExtras {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;
};

void save_checkpoint(const CvaeModel& model, const std::string& path,
                     const CheckpointExtras* extras = nullptr);
CvaeModel load_checkpoint(const std::string& path, CheckpointExtras* extras = nullptr);

} // namespace facemotion
