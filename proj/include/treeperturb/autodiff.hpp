#pragma once

#include <functional>
#include <string>
#include <vector>

#include "treeperturb/common.hpp"

namespace treeperturb::ad {

// A learnable array. The gradient buffer is mutable scratch so models can
// be passed around const during inference and attack.
struct Param {
  Mat w;
  mutable Mat g;
  std::string name;

  Param() = default;
  Param(std::string n, int r, int c) : w(r, c), g(r, c), name(std::move(n)) {}
  void zero_grad() const { g.zero(); }
  int rows() const { return w.rows; }
  int cols() const { return w.cols; }
};

struct Var {
  int i = -1;
  bool ok() const { return i >= 0; }
};

// Reverse-mode tape over vector-valued nodes. One tape per forward pass;
// backward() walks the nodes in reverse. When track_params is false the
// closures skip parameter-gradient accumulation entirely, which makes
// concurrent attack workers safe against shared read-only models.
class Tape {
 public:
  explicit Tape(bool track_params = true) : track_params_(track_params) {}

  Var input(Vec v);     // differentiable leaf
  Var constant(Vec v);  // leaf whose gradient nobody reads

  const Vec& val(Var x) const { return nodes_[x.i].val; }
  const Vec& grad_of(Var x) const { return nodes_[x.i].grad; }
  double scalar(Var x) const { return nodes_[x.i].val[0]; }
  int size_of(Var x) const { return int(nodes_[x.i].val.size()); }
  bool track_params() const { return track_params_; }
  size_t node_count() const { return nodes_.size(); }

  void backward(Var root);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double s);
  Var smul(Var a, Var s);  // vector a scaled by scalar node s
  Var matvec(const Param& w, Var x);
  Var affine(const Param& w, const Param& b, Var x);  // w x + b
  Var row(const Param& table, int r);
  Var mix_rows(const Param& table, Var weights);  // table^T weights
  Var concat(const std::vector<Var>& xs);
  Var slice(Var a, int off, int len);
  Var sigmoid(Var a);
  Var tanh_(Var a);
  Var softmax_t(Var a, double tau);
  Var sum(Var a);
  Var mean(Var a);
  Var dot(Var a, Var b);
  Var norm(Var a, int p);                 // p in {1, 2}
  Var pick(Var a, int idx);               // scalar a[idx]
  Var max_excluding(Var a, int excl);     // scalar max over i != excl
  Var max_with(Var a, double floor_val);  // scalar max(a, floor)
  Var nll_logits(Var logits, int gold);   // -log softmax(logits)[gold]

 private:
  struct Node {
    Vec val;
    Vec grad;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
  bool track_params_;

  Var push(Vec v, std::function<void()> back);
  Vec& g(int i) {
    Node& n = nodes_[i];
    if (n.grad.size() != n.val.size()) n.grad.assign(n.val.size(), 0.0);
    return n.grad;
  }
};

// Adam state for one flat parameter vector.
struct AdamState {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Vec m, v;
  long t = 0;

  explicit AdamState(double lr_ = 1e-3) : lr(lr_) {}
  void step(Vec& x, const Vec& grad);
};

// Adam over a set of named parameters.
class Adam {
 public:
  Adam(std::vector<const Param*> params, double lr);
  void zero_grads();
  void step();

 private:
  std::vector<const Param*> params_;
  std::vector<AdamState> state_;
};

}  // namespace treeperturb::ad
