#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

namespace facemotion::ad {

// Handle into a Graph's node list.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense double matrices. A graph is built afresh for
// every forward pass; backward() walks the tape in reverse creation order,
// which is a valid topological order by construction.
//
// The op set is exactly what the transformer CVAE and its losses need; all
// backward formulas are exercised by finite-difference tests.
class Graph {
public:
  // Leaf with no gradient tracking.
  Var constant(Eigen::MatrixXd value);
  // Leaf whose gradient is accumulated (+=) into *grad_sink by backward().
  // grad_sink may be null to track the gradient on the tape only.
  Var leaf(const Eigen::MatrixXd& value, Eigen::MatrixXd* grad_sink = nullptr);

  const Eigen::MatrixXd& value(Var v) const { return nodes_[v.id].value; }
  const Eigen::MatrixXd& grad(Var v) const { return nodes_[v.id].grad; }

  // Reverse accumulation from a 1x1 root.
  void backward(Var root);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);                            // same shape
  Var add_rowvec(Var m, Var row);                   // broadcast 1xN over rows
  Var add_const(Var a, const Eigen::MatrixXd& c);
  Var scale(Var a, double s);
  Var hadamard(Var a, Var b);
  Var hadamard_const(Var a, const Eigen::MatrixXd& c);
  Var transpose(Var a);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_rows(Var a, int first, int count);
  Var slice_cols(Var a, int first, int count);
  Var repeat_row(Var row, int count);               // 1xN -> count x N
  Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
  // Row-wise softmax over entries where allowed(r, c) is true; disallowed
  // entries are exactly zero and contribute nothing, so a row's result is
  // bit-independent of masked columns.
  Var softmax_rows_masked(Var a, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& allowed);
  Var softmax_rows(Var a);
  Var gelu(Var a);
  Var softplus(Var a);

  // Scalar (1x1) loss nodes; forward/backward share the closed forms in
  // losses.hpp.
  Var mean_sq_diff(Var pred, const Eigen::MatrixXd& target);
  Var velocity_mean_sq_diff(Var pred, const Eigen::MatrixXd& target);
  Var kl_standard_normal(Var mu, Var sigma); // mu, sigma are 1xd rows
  Var weighted_sum(const std::vector<std::pair<double, Var>>& terms);

  std::size_t node_count() const { return nodes_.size(); }

private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    std::function<void(Graph&)> back;
    Eigen::MatrixXd* sink = nullptr;
    bool needs_grad = false;
  };

  Var make(Eigen::MatrixXd value, bool needs_grad, std::function<void(Graph&)> back);
  void accumulate(int id, const Eigen::MatrixXd& g);
  bool tracked(Var v) const { return nodes_[v.id].needs_grad; }

  std::vector<Node> nodes_;
};

} // namespace facemotion::ad
