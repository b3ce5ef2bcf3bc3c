#include "facemotion/cvae.hpp"

#include <cmath>
#include <unordered_map>

#include "facemotion/array_file.hpp"
#include "facemotion/error.hpp"
#include "facemotion/rng.hpp"

namespace facemotion {

void ModelConfig::validate() const {
  require(d > 0 && n_layers_enc > 0 && n_layers_dec > 0 && n_heads > 0 && d_a > 0,
          Errc::invalid_argument, "model dimensions must be positive");
  require(ppe_period >= 1, Errc::invalid_argument, "ppe_period must be >= 1");
  require(d % n_heads == 0, Errc::invalid_argument, "d must be divisible by n_heads");
  require(d % 2 == 0, Errc::invalid_argument, "d must be even for sinusoidal encodings");
  require(mask_band >= 0, Errc::invalid_argument, "mask_band must be >= 0");
}

Eigen::MatrixXd ppe(int frame_count, int dim, int period) {
  require(frame_count >= 1, Errc::invalid_argument, "ppe needs at least one position");
  require(dim >= 2 && dim % 2 == 0, Errc::invalid_argument, "ppe dim must be even");
  require(period >= 1, Errc::invalid_argument, "ppe period must be >= 1");
  Eigen::MatrixXd enc(frame_count, dim);
  for (int t = 0; t < frame_count; ++t) {
    double p = static_cast<double>(t % period);
    for (int i = 0; i < dim / 2; ++i) {
      double denom = std::pow(10000.0, 2.0 * i / static_cast<double>(dim));
      enc(t, 2 * i) = std::sin(p / denom);
      enc(t, 2 * i + 1) = std::cos(p / denom);
    }
  }
  return enc;
}

BoolMask alignment_mask(int query_frames, int key_frames, int extra_tokens, int band) {
  require(query_frames >= 1 && key_frames >= 1, Errc::invalid_argument,
          "mask needs at least one frame on each side");
  require(extra_tokens >= 0 && band >= 0, Errc::invalid_argument,
          "extra_tokens and band must be non-negative");
  require(query_frames == key_frames, Errc::dim_mismatch,
          "audio must be pre-aligned to the motion frame count");
  BoolMask mask = BoolMask::Constant(extra_tokens + query_frames, key_frames, false);
  for (int c = 0; c < key_frames; ++c)
    for (int r = 0; r < extra_tokens; ++r) mask(r, c) = true;
  for (int t = 0; t < query_frames; ++t) {
    int lo = std::max(0, t - band);
    int hi = std::min(key_frames - 1, t + band);
    for (int c = lo; c <= hi; ++c) mask(extra_tokens + t, c) = true;
  }
  return mask;
}

namespace {

void init_linear(Rng& rng, Eigen::MatrixXd& w, Eigen::MatrixXd& b, int in, int out) {
  w.resize(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.truncated_normal(0.02);
  b = Eigen::MatrixXd::Zero(1, out);
}

} // namespace

struct CvaeModel::Binder {
  std::unordered_map<const Eigen::MatrixXd*, ad::Var> cache;
  std::unordered_map<const Eigen::MatrixXd*, int> index;
  std::vector<Eigen::MatrixXd>* grads = nullptr;

  Binder(const CvaeModel& model, std::vector<Eigen::MatrixXd>* grads_in) : grads(grads_in) {
    if (grads) {
      auto params = model.named_params();
      require(grads->size() == params.size(), Errc::dim_mismatch,
              "gradient buffer count does not match parameter count");
      for (std::size_t i = 0; i < params.size(); ++i)
        index[params[i].second] = static_cast<int>(i);
    }
  }

  ad::Var bind(ad::Graph& g, const Eigen::MatrixXd& p) {
    auto it = cache.find(&p);
    if (it != cache.end()) return it->second;
    ad::Var v = grads ? g.leaf(p, &(*grads)[static_cast<std::size_t>(index.at(&p))])
                      : g.constant(p);
    cache.emplace(&p, v);
    return v;
  }
};

CvaeModel::CvaeModel(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Rng rng(derive_seed(init_seed, RngStream::init));
  const int d = config_.d;

  init_linear(rng, motion_proj_.w, motion_proj_.b, kFrameDim, d);
  mu_token_.resize(1, d);
  sigma_token_.resize(1, d);
  for (int i = 0; i < d; ++i) mu_token_(0, i) = rng.truncated_normal(0.02);
  for (int i = 0; i < d; ++i) sigma_token_(0, i) = rng.truncated_normal(0.02);

  auto init_tower = [&](Tower& tower, int layers) {
    init_linear(rng, tower.shape_embed.w, tower.shape_embed.b, kShapeDim, d);
    init_linear(rng, tower.audio_proj.w, tower.audio_proj.b, config_.d_a, d);
    tower.blocks.resize(static_cast<std::size_t>(layers));
    for (Block& blk : tower.blocks) {
      for (Norm* n : {&blk.ln1, &blk.ln2, &blk.ln3}) {
        n->gamma = Eigen::MatrixXd::Ones(1, d);
        n->beta = Eigen::MatrixXd::Zero(1, d);
      }
      for (Attention* att : {&blk.self_attn, &blk.cross_attn}) {
        init_linear(rng, att->q.w, att->q.b, d, d);
        init_linear(rng, att->k.w, att->k.b, d, d);
        init_linear(rng, att->v.w, att->v.b, d, d);
        init_linear(rng, att->o.w, att->o.b, d, d);
      }
      init_linear(rng, blk.ff1.w, blk.ff1.b, d, 4 * d);
      init_linear(rng, blk.ff2.w, blk.ff2.b, 4 * d, d);
    }
    tower.ln_out.gamma = Eigen::MatrixXd::Ones(1, d);
    tower.ln_out.beta = Eigen::MatrixXd::Zero(1, d);
  };
  init_tower(encoder_, config_.n_layers_enc);
  init_tower(decoder_, config_.n_layers_dec);

  init_linear(rng, out_proj_.w, out_proj_.b, d, kFrameDim);
}

namespace {

ad::Var apply_linear(ad::Graph& g, CvaeModel::Binder& b, ad::Var x, const Eigen::MatrixXd& w,
                     const Eigen::MatrixXd& bias) {
  return g.add_rowvec(g.matmul(x, b.bind(g, w)), b.bind(g, bias));
}

} // namespace

// Multi-head attention; kv == q for self-attention. The mask, when present,
// restricts each query row to its allowed key columns.
static ad::Var attention(ad::Graph& g, CvaeModel::Binder& b, ad::Var q_in, ad::Var kv_in,
                         const Eigen::MatrixXd& wq, const Eigen::MatrixXd& bq,
                         const Eigen::MatrixXd& wk, const Eigen::MatrixXd& bk,
                         const Eigen::MatrixXd& wv, const Eigen::MatrixXd& bv,
                         const Eigen::MatrixXd& wo, const Eigen::MatrixXd& bo, int heads,
                         const BoolMask* mask) {
  ad::Var q = apply_linear(g, b, q_in, wq, bq);
  ad::Var k = apply_linear(g, b, kv_in, wk, bk);
  ad::Var v = apply_linear(g, b, kv_in, wv, bv);
  const int d = static_cast<int>(g.value(q).cols());
  const int hd = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<ad::Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    ad::Var qh = g.slice_cols(q, h * hd, hd);
    ad::Var kh = g.slice_cols(k, h * hd, hd);
    ad::Var vh = g.slice_cols(v, h * hd, hd);
    ad::Var scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt);
    ad::Var attn = mask ? g.softmax_rows_masked(scores, *mask) : g.softmax_rows(scores);
    outs.push_back(g.matmul(attn, vh));
  }
  return apply_linear(g, b, g.concat_cols(outs), wo, bo);
}

// Block order in both towers is pre-norm self-attention, masked
// cross-attention to the audio stream, then feed-forward. The order carries
// the frame-level causality contract: self-attention reads only the
// (audio-free) block input, so with one layer an audio row reaches exactly
// one token.
ad::Var CvaeModel::run_encoder(ad::Graph& g, Binder& b, const Eigen::MatrixXd& motion,
                               const Eigen::VectorXd& shape, const Eigen::MatrixXd& audio,
                               ad::Var* sigma_out) const {
  const int t = static_cast<int>(motion.rows());
  require(motion.cols() == kFrameDim, Errc::dim_mismatch, "motion matrix width must be 100");
  check_audio(audio, t);

  ad::Var motion_in = g.constant(motion);
  ad::Var shape_in = g.constant(shape.transpose()); // 1 x kShapeDim
  ad::Var audio_in = g.constant(audio);

  ad::Var proj = apply_linear(g, b, motion_in, motion_proj_.w, motion_proj_.b);
  ad::Var shape_emb = apply_linear(g, b, shape_in, encoder_.shape_embed.w, encoder_.shape_embed.b);
  ad::Var frames = g.add_rowvec(proj, shape_emb); // shape embedding added to every frame token

  ad::Var tokens = g.concat_rows({b.bind(g, mu_token_), b.bind(g, sigma_token_), frames});
  tokens = g.add_const(tokens, ppe(t + 2, config_.d, config_.ppe_period));

  ad::Var audio_kv = apply_linear(g, b, audio_in, encoder_.audio_proj.w, encoder_.audio_proj.b);
  BoolMask mask = alignment_mask(t, t, 2, config_.mask_band);

  for (const Block& blk : encoder_.blocks) {
    ad::Var n1 = g.layer_norm(tokens, b.bind(g, blk.ln1.gamma), b.bind(g, blk.ln1.beta));
    tokens = g.add(tokens, attention(g, b, n1, n1, blk.self_attn.q.w, blk.self_attn.q.b,
                                     blk.self_attn.k.w, blk.self_attn.k.b, blk.self_attn.v.w,
                                     blk.self_attn.v.b, blk.self_attn.o.w, blk.self_attn.o.b,
                                     config_.n_heads, nullptr));
    ad::Var n2 = g.layer_norm(tokens, b.bind(g, blk.ln2.gamma), b.bind(g, blk.ln2.beta));
    tokens = g.add(tokens, attention(g, b, n2, audio_kv, blk.cross_attn.q.w, blk.cross_attn.q.b,
                                     blk.cross_attn.k.w, blk.cross_attn.k.b, blk.cross_attn.v.w,
                                     blk.cross_attn.v.b, blk.cross_attn.o.w, blk.cross_attn.o.b,
                                     config_.n_heads, &mask));
    ad::Var n3 = g.layer_norm(tokens, b.bind(g, blk.ln3.gamma), b.bind(g, blk.ln3.beta));
    ad::Var ff = apply_linear(g, b, g.gelu(apply_linear(g, b, n3, blk.ff1.w, blk.ff1.b)),
                              blk.ff2.w, blk.ff2.b);
    tokens = g.add(tokens, ff);
  }
  ad::Var out =
      g.layer_norm(tokens, b.bind(g, encoder_.ln_out.gamma), b.bind(g, encoder_.ln_out.beta));
  ad::Var mu = g.slice_rows(out, 0, 1);
  *sigma_out = g.softplus(g.slice_rows(out, 1, 1));
  return mu;
}

ad::Var CvaeModel::run_decoder(ad::Graph& g, Binder& b, ad::Var z_row,
                               const Eigen::VectorXd& shape, const Eigen::MatrixXd& audio,
                               int frame_count) const {
  require(frame_count >= 1, Errc::invalid_argument, "decoder needs at least one frame");
  check_audio(audio, frame_count);

  ad::Var shape_in = g.constant(shape.transpose());
  ad::Var audio_in = g.constant(audio);

  ad::Var shape_emb = apply_linear(g, b, shape_in, decoder_.shape_embed.w, decoder_.shape_embed.b);
  ad::Var tokens = g.concat_rows({shape_emb, g.repeat_row(z_row, frame_count)});
  tokens = g.add_const(tokens, ppe(frame_count + 1, config_.d, config_.ppe_period));

  ad::Var audio_kv = apply_linear(g, b, audio_in, decoder_.audio_proj.w, decoder_.audio_proj.b);
  BoolMask mask = alignment_mask(frame_count, frame_count, 1, config_.mask_band);

  for (const Block& blk : decoder_.blocks) {
    ad::Var n1 = g.layer_norm(tokens, b.bind(g, blk.ln1.gamma), b.bind(g, blk.ln1.beta));
    tokens = g.add(tokens, attention(g, b, n1, n1, blk.self_attn.q.w, blk.self_attn.q.b,
                                     blk.self_attn.k.w, blk.self_attn.k.b, blk.self_attn.v.w,
                                     blk.self_attn.v.b, blk.self_attn.o.w, blk.self_attn.o.b,
                                     config_.n_heads, nullptr));
    ad::Var n2 = g.layer_norm(tokens, b.bind(g, blk.ln2.gamma), b.bind(g, blk.ln2.beta));
    tokens = g.add(tokens, attention(g, b, n2, audio_kv, blk.cross_attn.q.w, blk.cross_attn.q.b,
                                     blk.cross_attn.k.w, blk.cross_attn.k.b, blk.cross_attn.v.w,
                                     blk.cross_attn.v.b, blk.cross_attn.o.w, blk.cross_attn.o.b,
                                     config_.n_heads, &mask));
    ad::Var n3 = g.layer_norm(tokens, b.bind(g, blk.ln3.gamma), b.bind(g, blk.ln3.beta));
    ad::Var ff = apply_linear(g, b, g.gelu(apply_linear(g, b, n3, blk.ff1.w, blk.ff1.b)),
                              blk.ff2.w, blk.ff2.b);
    tokens = g.add(tokens, ff);
  }
  ad::Var out =
      g.layer_norm(tokens, b.bind(g, decoder_.ln_out.gamma), b.bind(g, decoder_.ln_out.beta));
  ad::Var body = g.slice_rows(out, 1, frame_count); // drop the shape token
  return apply_linear(g, b, body, out_proj_.w, out_proj_.b);
}

void CvaeModel::check_audio(const Eigen::MatrixXd& audio, int frame_count) const {
  require(audio.rows() == frame_count, Errc::dim_mismatch,
          "audio must have exactly one row per motion frame");
  require(audio.cols() == config_.d_a, Errc::dim_mismatch,
          "audio feature width does not match the model's d_a");
  require(audio.allFinite(), Errc::invalid_argument, "audio features must be finite");
}

LatentDistribution CvaeModel::encode(const MotionSequence& motion, const ShapeParams& shape,
                                     const Eigen::MatrixXd& audio_aligned) const {
  ad::Graph g;
  Binder b(*this, nullptr);
  ad::Var sigma;
  ad::Var mu = run_encoder(g, b, motion.to_matrix(), shape.as_vector(), audio_aligned, &sigma);
  return LatentDistribution(g.value(mu).row(0).transpose(), g.value(sigma).row(0).transpose());
}

LatentVector CvaeModel::reparameterize(const LatentDistribution& dist,
                                       const Eigen::VectorXd& noise) {
  require(noise.size() == dist.mu.size(), Errc::dim_mismatch,
          "noise dimensionality differs from the latent dimension");
  return LatentVector(dist.mu + dist.sigma.cwiseProduct(noise));
}

MotionSequence CvaeModel::decode(const LatentVector& z, const ShapeParams& shape,
                                 const Eigen::MatrixXd& audio_aligned, int frame_count,
                                 float fps) const {
  require(z.dim() == config_.d, Errc::dim_mismatch, "latent dimension differs from model width");
  ad::Graph g;
  Binder b(*this, nullptr);
  ad::Var z_row = g.constant(z.z.transpose());
  ad::Var motion = run_decoder(g, b, z_row, shape.as_vector(), audio_aligned, frame_count);
  return MotionSequence::from_matrix(g.value(motion), fps);
}

CvaeModel::GraphOutputs CvaeModel::build_training_graph(
    ad::Graph& g, const Eigen::MatrixXd& motion, const Eigen::VectorXd& shape,
    const Eigen::MatrixXd& audio, const Eigen::VectorXd& noise,
    std::vector<Eigen::MatrixXd>* grads) const {
  require(noise.size() == config_.d, Errc::dim_mismatch,
          "noise dimensionality differs from the latent dimension");
  Binder b(*this, grads);
  ad::Var sigma;
  ad::Var mu = run_encoder(g, b, motion, shape, audio, &sigma);
  ad::Var z = g.add(mu, g.hadamard_const(sigma, noise.transpose()));
  ad::Var pred =
      run_decoder(g, b, z, shape, audio, static_cast<int>(motion.rows()));
  return GraphOutputs{mu, sigma, pred};
}

std::vector<std::pair<std::string, Eigen::MatrixXd*>> CvaeModel::named_params() {
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> out;
  auto add_linear = [&](const std::string& name, Linear& l) {
    out.emplace_back(name + ".w", &l.w);
    out.emplace_back(name + ".b", &l.b);
  };
  auto add_norm = [&](const std::string& name, Norm& n) {
    out.emplace_back(name + ".gamma", &n.gamma);
    out.emplace_back(name + ".beta", &n.beta);
  };
  auto add_tower = [&](const std::string& prefix, Tower& tower) {
    add_linear(prefix + ".shape_embed", tower.shape_embed);
    add_linear(prefix + ".audio_proj", tower.audio_proj);
    for (std::size_t i = 0; i < tower.blocks.size(); ++i) {
      std::string bp = prefix + ".blk" + std::to_string(i);
      Block& blk = tower.blocks[i];
      add_norm(bp + ".ln1", blk.ln1);
      add_norm(bp + ".ln2", blk.ln2);
      add_norm(bp + ".ln3", blk.ln3);
      for (auto [an, att] : {std::pair<const char*, Attention*>{"self", &blk.self_attn},
                             std::pair<const char*, Attention*>{"cross", &blk.cross_attn}}) {
        add_linear(bp + "." + an + ".q", att->q);
        add_linear(bp + "." + an + ".k", att->k);
        add_linear(bp + "." + an + ".v", att->v);
        add_linear(bp + "." + an + ".o", att->o);
      }
      add_linear(bp + ".ff1", blk.ff1);
      add_linear(bp + ".ff2", blk.ff2);
    }
    add_norm(prefix + ".ln_out", tower.ln_out);
  };

  add_linear("motion_proj", motion_proj_);
  out.emplace_back("mu_token", &mu_token_);
  out.emplace_back("sigma_token", &sigma_token_);
  add_tower("enc", encoder_);
  add_tower("dec", decoder_);
  add_linear("out_proj", out_proj_);
  return out;
}

std::vector<std::pair<std::string, const Eigen::MatrixXd*>> CvaeModel::named_params() const {
  auto mutable_params = const_cast<CvaeModel*>(this)->named_params();
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> out;
  out.reserve(mutable_params.size());
  for (auto& [name, ptr] : mutable_params) out.emplace_back(name, ptr);
  return out;
}

namespace {

const char* kConfigKeys[] = {"d", "n_layers_enc", "n_layers_dec", "n_heads",
                             "ppe_period", "d_a", "mask_band"};

bool is_config_key(const std::string& key) {
  for (const char* k : kConfigKeys)
    if (key == k) return true;
  return key == "format";
}

} // namespace

void save_checkpoint(const CvaeModel& model, const std::string& path,
                     const CheckpointExtras* extras) {
  ArrayFile file;
  const ModelConfig& c = model.config();
  file.add_meta("format", "cvae-checkpoint-1");
  file.add_meta("d", std::to_string(c.d));
  file.add_meta("n_layers_enc", std::to_string(c.n_layers_enc));
  file.add_meta("n_layers_dec", std::to_string(c.n_layers_dec));
  file.add_meta("n_heads", std::to_string(c.n_heads));
  file.add_meta("ppe_period", std::to_string(c.ppe_period));
  file.add_meta("d_a", std::to_string(c.d_a));
  file.add_meta("mask_band", std::to_string(c.mask_band));
  if (extras)
    for (const auto& [k, v] : extras->meta) file.add_meta(k, v);

  for (const auto& [name, p] : model.named_params()) file.add_matrix(name, *p, Dtype::f64);
  if (extras)
    for (const auto& [name, m] : extras->arrays) file.add_matrix(name, m, Dtype::f64);
  save_arrays(file, path);
}

CvaeModel load_checkpoint(const std::string& path, CheckpointExtras* extras) {
  ArrayFile file = load_arrays(path);
  require(file.meta_at("format") == "cvae-checkpoint-1", Errc::corrupt_manifest,
          "not a cvae checkpoint");
  ModelConfig c;
  c.d = std::stoi(file.meta_at("d"));
  c.n_layers_enc = std::stoi(file.meta_at("n_layers_enc"));
  c.n_layers_dec = std::stoi(file.meta_at("n_layers_dec"));
  c.n_heads = std::stoi(file.meta_at("n_heads"));
  c.ppe_period = std::stoi(file.meta_at("ppe_period"));
  c.d_a = std::stoi(file.meta_at("d_a"));
  c.mask_band = std::stoi(file.meta_at("mask_band"));

  CvaeModel model(c, 0);
  std::vector<std::string> param_names;
  for (auto& [name, p] : model.named_params()) {
    Eigen::MatrixXd stored = file.matrix_at(name);
    require(stored.rows() == p->rows() && stored.cols() == p->cols(), Errc::dim_mismatch,
            "checkpoint array '" + name + "' has the wrong shape");
    *p = stored;
    param_names.push_back(name);
  }

  if (extras) {
    extras->meta.clear();
    extras->arrays.clear();
    for (const auto& [k, v] : file.meta)
      if (!is_config_key(k)) extras->meta.emplace_back(k, v);
    for (const ArrayEntry& e : file.arrays) {
      bool is_param = false;
      for (const std::string& n : param_names)
        if (n == e.name) {
          is_param = true;
          break;
        }
      if (!is_param) extras->arrays.emplace_back(e.name, file.matrix_at(e.name));
    }
  }
  return model;
}

} // namespace facemotion
