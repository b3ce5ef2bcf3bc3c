#include "facemotion/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "facemotion/error.hpp"
#include "facemotion/losses.hpp"

namespace facemotion::ad {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

} // namespace

Var Graph::make(Eigen::MatrixXd value, bool needs_grad, std::function<void(Graph&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) {
    n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    n.back = std::move(back);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(int id, const Eigen::MatrixXd& g) {
  Node& n = nodes_[id];
  if (n.needs_grad) n.grad += g;
}

Var Graph::constant(Eigen::MatrixXd value) { return make(std::move(value), false, nullptr); }

Var Graph::leaf(const Eigen::MatrixXd& value, Eigen::MatrixXd* grad_sink) {
  Var v = make(value, true, nullptr);
  nodes_[v.id].sink = grad_sink;
  return v;
}

void Graph::backward(Var root) {
  require(root.valid() && root.id < static_cast<int>(nodes_.size()), Errc::invalid_argument,
          "backward from an invalid node");
  Node& r = nodes_[root.id];
  require(r.value.rows() == 1 && r.value.cols() == 1, Errc::invalid_argument,
          "backward requires a scalar root");
  require(r.needs_grad, Errc::invalid_argument, "root does not depend on any tracked leaf");
  r.grad(0, 0) += 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.back) n.back(*this);
  }
  for (Node& n : nodes_) {
    if (n.sink != nullptr) {
      if (n.sink->size() == 0) *n.sink = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
      *n.sink += n.grad;
    }
  }
}

Var Graph::matmul(Var a, Var b) {
  const Eigen::MatrixXd& av = value(a);
  const Eigen::MatrixXd& bv = value(b);
  require(av.cols() == bv.rows(), Errc::dim_mismatch, "matmul inner dimensions differ");
  bool ng = tracked(a) || tracked(b);
  Var out = make(av * bv, ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id, pb = b.id;
    nodes_[self].back = [self, pa, pb](Graph& g) {
      const Eigen::MatrixXd& go = g.nodes_[self].grad;
      g.accumulate(pa, go * g.nodes_[pb].value.transpose());
      g.accumulate(pb, g.nodes_[pa].value.transpose() * go);
    };
  }
  return out;
}

Var Graph::add(Var a, Var b) {
  const Eigen::MatrixXd& av = value(a);
  const Eigen::MatrixXd& bv = value(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), Errc::dim_mismatch,
          "add shapes differ");
  bool ng = tracked(a) || tracked(b);
  Var out = make(av + bv, ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id, pb = b.id;
    nodes_[self].back = [self, pa, pb](Graph& g) {
      g.accumulate(pa, g.nodes_[self].grad);
      g.accumulate(pb, g.nodes_[self].grad);
    };
  }
  return out;
}

Var Graph::add_rowvec(Var m, Var row) {
  const Eigen::MatrixXd& mv = value(m);
  const Eigen::MatrixXd& rv = value(row);
  require(rv.rows() == 1 && rv.cols() == mv.cols(), Errc::dim_mismatch,
          "row vector does not match matrix width");
  bool ng = tracked(m) || tracked(row);
  Var out = make(mv.rowwise() + rv.row(0), ng, nullptr);
  if (ng) {
    int self = out.id, pm = m.id, pr = row.id;
    nodes_[self].back = [self, pm, pr](Graph& g) {
      const Eigen::MatrixXd& go = g.nodes_[self].grad;
      g.accumulate(pm, go);
      g.accumulate(pr, go.colwise().sum());
    };
  }
  return out;
}

Var Graph::add_const(Var a, const Eigen::MatrixXd& c) {
  const Eigen::MatrixXd& av = value(a);
  require(av.rows() == c.rows() && av.cols() == c.cols(), Errc::dim_mismatch,
          "add_const shapes differ");
  bool ng = tracked(a);
  Var out = make(av + c, ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id;
    nodes_[self].back = [self, pa](Graph& g) { g.accumulate(pa, g.nodes_[self].grad); };
  }
  return out;
}

Var Graph::scale(Var a, double s) {
  bool ng = tracked(a);
  Var out = make(value(a) * s, ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id;
    nodes_[self].back = [self, pa, s](Graph& g) { g.accumulate(pa, s * g.nodes_[self].grad); };
  }
  return out;
}

Var Graph::hadamard(Var a, Var b) {
  const Eigen::MatrixXd& av = value(a);
  const Eigen::MatrixXd& bv = value(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), Errc::dim_mismatch,
          "hadamard shapes differ");
  bool ng = tracked(a) || tracked(b);
  Var out = make(av.cwiseProduct(bv), ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id, pb = b.id;
    nodes_[self].back = [self, pa, pb](Graph& g) {
      const Eigen::MatrixXd& go = g.nodes_[self].grad;
      g.accumulate(pa, go.cwiseProduct(g.nodes_[pb].value));
      g.accumulate(pb, go.cwiseProduct(g.nodes_[pa].value));
    };
  }
  return out;
}

Var Graph::hadamard_const(Var a, const Eigen::MatrixXd& c) {
  const Eigen::MatrixXd& av = value(a);
  require(av.rows() == c.rows() && av.cols() == c.cols(), Errc::dim_mismatch,
          "hadamard_const shapes differ");
  bool ng = tracked(a);
  Var out = make(av.cwiseProduct(c), ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id;
    Eigen::MatrixXd cc = c;
    nodes_[self].back = [self, pa, cc](Graph& g) {
      g.accumulate(pa, g.nodes_[self].grad.cwiseProduct(cc));
    };
  }
  return out;
}

Var Graph::transpose(Var a) {
  bool ng = tracked(a);
  Var out = make(value(a).transpose(), ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id;
    nodes_[self].back = [self, pa](Graph& g) {
      g.accumulate(pa, g.nodes_[self].grad.transpose());
    };
  }
  return out;
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), Errc::invalid_argument, "concat_rows needs at least one part");
  Eigen::Index cols = value(parts[0]).cols();
  Eigen::Index rows = 0;
  bool ng = false;
  for (Var p : parts) {
    require(value(p).cols() == cols, Errc::dim_mismatch, "concat_rows widths differ");
    rows += value(p).rows();
    ng = ng || tracked(p);
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  Var out = make(std::move(v), ng, nullptr);
  if (ng) {
    int self = out.id;
    std::vector<int> ids;
    for (Var p : parts) ids.push_back(p.id);
    nodes_[self].back = [self, ids](Graph& g) {
      const Eigen::MatrixXd& go = g.nodes_[self].grad;
      Eigen::Index at2 = 0;
      for (int id : ids) {
        Eigen::Index r = g.nodes_[id].value.rows();
        g.accumulate(id, go.middleRows(at2, r));
        at2 += r;
      }
    };
  }
  return out;
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), Errc::invalid_argument, "concat_cols needs at least one part");
  Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (Var p : parts) {
    require(value(p).rows() == rows, Errc::dim_mismatch, "concat_cols heights differ");
    cols += value(p).cols();
    ng = ng || tracked(p);
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  Var out = make(std::move(v), ng, nullptr);
  if (ng) {
    int self = out.id;
    std::vector<int> ids;
    for (Var p : parts) ids.push_back(p.id);
    nodes_[self].back = [self, ids](Graph& g) {
      const Eigen::MatrixXd& go = g.nodes_[self].grad;
      Eigen::Index at2 = 0;
      for (int id : ids) {
        Eigen::Index c = g.nodes_[id].value.cols();
        g.accumulate(id, go.middleCols(at2, c));
        at2 += c;
      }
    };
  }
  return out;
}

Var Graph::slice_rows(Var a, int first, int count) {
  const Eigen::MatrixXd& av = value(a);
  require(first >= 0 && count >= 1 && first + count <= av.rows(), Errc::dim_mismatch,
          "slice_rows out of range");
  bool ng = tracked(a);
  Var out = make(av.middleRows(first, count), ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id;
    nodes_[self].back = [self, pa, first, count](Graph& g) {
      Node& p = g.nodes_[pa];
      if (p.needs_grad) p.grad.middleRows(first, count) += g.nodes_[self].grad;
    };
  }
  return out;
}

Var Graph::slice_cols(Var a, int first, int count) {
  const Eigen::MatrixXd& av = value(a);
  require(first >= 0 && count >= 1 && first + count <= av.cols(), Errc::dim_mismatch,
          "slice_cols out of range");
  bool ng = tracked(a);
  Var out = make(av.middleCols(first, count), ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id;
    nodes_[self].back = [self, pa, first, count](Graph& g) {
      Node& p = g.nodes_[pa];
      if (p.needs_grad) p.grad.middleCols(first, count) += g.nodes_[self].grad;
    };
  }
  return out;
}

Var Graph::repeat_row(Var row, int count) {
  const Eigen::MatrixXd& rv = value(row);
  require(rv.rows() == 1, Errc::dim_mismatch, "repeat_row expects a 1xN input");
  require(count >= 1, Errc::invalid_argument, "repeat_row count must be >= 1");
  bool ng = tracked(row);
  Eigen::MatrixXd v(count, rv.cols());
  for (int r = 0; r < count; ++r) v.row(r) = rv.row(0);
  Var out = make(std::move(v), ng, nullptr);
  if (ng) {
    int self = out.id, pr = row.id;
    nodes_[self].back = [self, pr](Graph& g) {
      g.accumulate(pr, g.nodes_[self].grad.colwise().sum());
    };
  }
  return out;
}

Var Graph::layer_norm(Var a, Var gamma, Var beta, double eps) {
  const Eigen::MatrixXd& x = value(a);
  const Eigen::MatrixXd& gm = value(gamma);
  const Eigen::MatrixXd& bt = value(beta);
  require(gm.rows() == 1 && bt.rows() == 1 && gm.cols() == x.cols() && bt.cols() == x.cols(),
          Errc::dim_mismatch, "layer_norm parameter shapes differ from input width");

  const Eigen::Index rows = x.rows(), cols = x.cols();
  Eigen::MatrixXd xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  Eigen::MatrixXd y(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double mean = x.row(r).mean();
    double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(cols);
    double s = 1.0 / std::sqrt(var + eps);
    inv_std[r] = s;
    xhat.row(r) = (x.row(r).array() - mean) * s;
    y.row(r) = xhat.row(r).cwiseProduct(gm.row(0)) + bt.row(0);
  }

  bool ng = tracked(a) || tracked(gamma) || tracked(beta);
  Var out = make(std::move(y), ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id, pg = gamma.id, pb = beta.id;
    nodes_[self].back = [self, pa, pg, pb, xhat, inv_std](Graph& g) {
      const Eigen::MatrixXd& go = g.nodes_[self].grad;
      const Eigen::MatrixXd& gm2 = g.nodes_[pg].value;
      const Eigen::Index rows2 = go.rows(), cols2 = go.cols();

      g.accumulate(pg, (go.array() * xhat.array()).colwise().sum().matrix());
      g.accumulate(pb, go.colwise().sum());

      if (g.nodes_[pa].needs_grad) {
        Eigen::MatrixXd dx(rows2, cols2);
        using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
        for (Eigen::Index r = 0; r < rows2; ++r) {
          RowArray dxhat = go.row(r).array() * gm2.row(0).array();
          RowArray xh = xhat.row(r).array();
          double m1 = dxhat.mean();
          double m2 = (dxhat * xh).mean();
          dx.row(r) = ((dxhat - m1 - xh * m2) * inv_std[r]).matrix();
        }
        g.accumulate(pa, dx);
      }
    };
  }
  return out;
}

Var Graph::softmax_rows_masked(Var a,
                               const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& allowed) {
  const Eigen::MatrixXd& x = value(a);
  require(allowed.rows() == x.rows() && allowed.cols() == x.cols(), Errc::dim_mismatch,
          "mask shape differs from input");
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < cols; ++c)
      if (allowed(r, c) && x(r, c) > m) m = x(r, c);
    require(std::isfinite(m), Errc::invalid_argument,
            "attention mask leaves a row with no allowed entries");
    double sum = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (allowed(r, c)) {
        double e = std::exp(x(r, c) - m);
        y(r, c) = e;
        sum += e;
      }
    }
    y.row(r) /= sum;
  }
  bool ng = tracked(a);
  Var out = make(std::move(y), ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id;
    nodes_[self].back = [self, pa](Graph& g) {
      const Eigen::MatrixXd& go = g.nodes_[self].grad;
      const Eigen::MatrixXd& yv = g.nodes_[self].value;
      Eigen::MatrixXd dx(go.rows(), go.cols());
      for (Eigen::Index r = 0; r < go.rows(); ++r) {
        double dot = go.row(r).dot(yv.row(r));
        dx.row(r) = yv.row(r).array() * (go.row(r).array() - dot);
      }
      g.accumulate(pa, dx);
    };
  }
  return out;
}

Var Graph::softmax_rows(Var a) {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> all =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(value(a).rows(),
                                                                   value(a).cols(), true);
  return softmax_rows_masked(a, all);
}

Var Graph::gelu(Var a) {
  const Eigen::MatrixXd& x = value(a);
  Eigen::MatrixXd y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double v = x(i);
    double u = kGeluC * (v + kGeluA * v * v * v);
    y(i) = 0.5 * v * (1.0 + std::tanh(u));
  }
  bool ng = tracked(a);
  Var out = make(std::move(y), ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id;
    nodes_[self].back = [self, pa](Graph& g) {
      const Eigen::MatrixXd& x2 = g.nodes_[pa].value;
      const Eigen::MatrixXd& go = g.nodes_[self].grad;
      Eigen::MatrixXd dx(x2.rows(), x2.cols());
      for (Eigen::Index i = 0; i < x2.size(); ++i) {
        double v = x2(i);
        double u = kGeluC * (v + kGeluA * v * v * v);
        double t = std::tanh(u);
        double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        dx(i) = (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du) * go(i);
      }
      g.accumulate(pa, dx);
    };
  }
  return out;
}

Var Graph::softplus(Var a) {
  const Eigen::MatrixXd& x = value(a);
  Eigen::MatrixXd y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double v = x(i);
    double sp = v > 30.0 ? v : std::log1p(std::exp(v));
    y(i) = std::max(sp, 1e-300); // keep the result strictly positive
  }
  bool ng = tracked(a);
  Var out = make(std::move(y), ng, nullptr);
  if (ng) {
    int self = out.id, pa = a.id;
    nodes_[self].back = [self, pa](Graph& g) {
      const Eigen::MatrixXd& x2 = g.nodes_[pa].value;
      const Eigen::MatrixXd& go = g.nodes_[self].grad;
      Eigen::MatrixXd dx(x2.rows(), x2.cols());
      for (Eigen::Index i = 0; i < x2.size(); ++i) dx(i) = sigmoid(x2(i)) * go(i);
      g.accumulate(pa, dx);
    };
  }
  return out;
}

Var Graph::mean_sq_diff(Var pred, const Eigen::MatrixXd& target) {
  double v = loss_reconstruction(value(pred), target);
  bool ng = tracked(pred);
  Var out = make(Eigen::MatrixXd::Constant(1, 1, v), ng, nullptr);
  if (ng) {
    int self = out.id, pp = pred.id;
    Eigen::MatrixXd tgt = target;
    nodes_[self].back = [self, pp, tgt](Graph& g) {
      double go = g.nodes_[self].grad(0, 0);
      g.accumulate(pp, go * loss_reconstruction_grad(g.nodes_[pp].value, tgt));
    };
  }
  return out;
}

Var Graph::velocity_mean_sq_diff(Var pred, const Eigen::MatrixXd& target) {
  double v = loss_velocity(value(pred), target);
  bool ng = tracked(pred);
  Var out = make(Eigen::MatrixXd::Constant(1, 1, v), ng, nullptr);
  if (ng) {
    int self = out.id, pp = pred.id;
    Eigen::MatrixXd tgt = target;
    nodes_[self].back = [self, pp, tgt](Graph& g) {
      double go = g.nodes_[self].grad(0, 0);
      g.accumulate(pp, go * loss_velocity_grad(g.nodes_[pp].value, tgt));
    };
  }
  return out;
}

Var Graph::kl_standard_normal(Var mu, Var sigma) {
  const Eigen::MatrixXd& mv = value(mu);
  const Eigen::MatrixXd& sv = value(sigma);
  require(mv.rows() == 1 && sv.rows() == 1 && mv.cols() == sv.cols(), Errc::dim_mismatch,
          "kl expects 1xd mu and sigma rows");
  double v = loss_kl(mv.row(0).transpose(), sv.row(0).transpose());
  bool ng = tracked(mu) || tracked(sigma);
  Var out = make(Eigen::MatrixXd::Constant(1, 1, v), ng, nullptr);
  if (ng) {
    int self = out.id, pm = mu.id, ps = sigma.id;
    nodes_[self].back = [self, pm, ps](Graph& g) {
      double go = g.nodes_[self].grad(0, 0);
      Eigen::VectorXd d_mu, d_sigma;
      loss_kl_grad(g.nodes_[pm].value.row(0).transpose(),
                   g.nodes_[ps].value.row(0).transpose(), d_mu, d_sigma);
      g.accumulate(pm, go * d_mu.transpose());
      g.accumulate(ps, go * d_sigma.transpose());
    };
  }
  return out;
}

Var Graph::weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
  require(!terms.empty(), Errc::invalid_argument, "weighted_sum needs at least one term");
  double v = 0.0;
  bool ng = false;
  for (const auto& [w, t] : terms) {
    const Eigen::MatrixXd& tv = value(t);
    require(tv.rows() == 1 && tv.cols() == 1, Errc::dim_mismatch,
            "weighted_sum expects scalar terms");
    v += w * tv(0, 0);
    ng = ng || tracked(t);
  }
  Var out = make(Eigen::MatrixXd::Constant(1, 1, v), ng, nullptr);
  if (ng) {
    int self = out.id;
    std::vector<std::pair<double, int>> ws;
    for (const auto& [w, t] : terms) ws.emplace_back(w, t.id);
    nodes_[self].back = [self, ws](Graph& g) {
      double go = g.nodes_[self].grad(0, 0);
      for (const auto& [w, id] : ws)
        g.accumulate(id, Eigen::MatrixXd::Constant(1, 1, w * go));
    };
  }
  return out;
}

} // namespace facemotion::ad
