#include "treeperturb/autodiff.hpp"

#include <cassert>
#include <cmath>

#include "treeperturb/kernels.hpp"

namespace treeperturb::ad {

Var Tape::push(Vec v, std::function<void()> back) {
  nodes_.push_back(Node{std::move(v), {}, std::move(back)});
  return Var{int(nodes_.size() - 1)};
}

Var Tape::input(Vec v) { return push(std::move(v), nullptr); }
Var Tape::constant(Vec v) { return push(std::move(v), nullptr); }

void Tape::backward(Var root) {
  if (nodes_[root.i].val.size() != 1)
    throw RuntimeFailure("backward requires a scalar root node");
  g(root.i).assign(1, 1.0);
  for (int i = root.i; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.back) continue;
    n.back();
  }
}

Var Tape::add(Var a, Var b) {
  const Vec& va = val(a);
  const Vec& vb = val(b);
  assert(va.size() == vb.size());
  Vec out(va.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  int oi = int(nodes_.size());
  return push(std::move(out), [this, ai = a.i, bi = b.i, oi] {
    const Vec& go = nodes_[oi].grad;
    Vec& ga = g(ai);
    Vec& gb = g(bi);
    for (size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] += go[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Vec& va = val(a);
  const Vec& vb = val(b);
  assert(va.size() == vb.size());
  Vec out(va.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  int oi = int(nodes_.size());
  return push(std::move(out), [this, ai = a.i, bi = b.i, oi] {
    const Vec& go = nodes_[oi].grad;
    Vec& ga = g(ai);
    Vec& gb = g(bi);
    for (size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] -= go[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Vec& va = val(a);
  const Vec& vb = val(b);
  assert(va.size() == vb.size());
  Vec out(va.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  int oi = int(nodes_.size());
  return push(std::move(out), [this, ai = a.i, bi = b.i, oi] {
    const Vec& go = nodes_[oi].grad;
    const Vec& va2 = nodes_[ai].val;
    const Vec& vb2 = nodes_[bi].val;
    Vec& ga = g(ai);
    Vec& gb = g(bi);
    for (size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i] * vb2[i];
      gb[i] += go[i] * va2[i];
    }
  });
}

Var Tape::scale(Var a, double s) {
  Vec out = val(a);
  for (double& x : out) x *= s;
  int oi = int(nodes_.size());
  return push(std::move(out), [this, ai = a.i, oi, s] {
    const Vec& go = nodes_[oi].grad;
    Vec& ga = g(ai);
    for (size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
  });
}

Var Tape::smul(Var a, Var s) {
  if (val(s).size() != 1) throw RuntimeFailure("smul scale must be scalar");
  const double sv = scalar(s);
  Vec out = val(a);
  for (double& x : out) x *= sv;
  int oi = int(nodes_.size());
  return push(std::move(out), [this, ai = a.i, si = s.i, oi] {
    const Vec& go = nodes_[oi].grad;
    const Vec& va = nodes_[ai].val;
    const double sv2 = nodes_[si].val[0];
    Vec& ga = g(ai);
    Vec& gs = g(si);
    for (size_t i = 0; i < go.size(); ++i) {
      ga[i] += sv2 * go[i];
      gs[0] += va[i] * go[i];
    }
  });
}

Var Tape::matvec(const Param& w, Var x) {
  if (w.cols() != size_of(x)) throw ConfigError("matvec: shape mismatch for " + w.name);
  Vec out(w.rows());
  kern::matvec(w.w, val(x).data(), out.data());
  int oi = int(nodes_.size());
  return push(std::move(out), [this, &w, xi = x.i, oi] {
    const Vec& go = nodes_[oi].grad;
    Vec& gx = g(xi);
    Vec tmp(w.cols());
    kern::matvec_t(w.w, go.data(), tmp.data());
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
    if (track_params_) {
      const Vec& vx = nodes_[xi].val;
      for (int r = 0; r < w.rows(); ++r) {
        if (go[r] == 0.0) continue;
        double* grow = w.g.row(r);
        for (int c = 0; c < w.cols(); ++c) grow[c] += go[r] * vx[c];
      }
    }
  });
}

Var Tape::affine(const Param& w, const Param& b, Var x) {
  if (w.cols() != size_of(x) || b.rows() != 1 || b.cols() != w.rows())
    throw ConfigError("affine: shape mismatch for " + w.name);
  Vec out(w.rows());
  kern::matvec(w.w, val(x).data(), out.data());
  for (int r = 0; r < w.rows(); ++r) out[r] += b.w.a[r];
  int oi = int(nodes_.size());
  return push(std::move(out), [this, &w, &b, xi = x.i, oi] {
    const Vec& go = nodes_[oi].grad;
    Vec& gx = g(xi);
    Vec tmp(w.cols());
    kern::matvec_t(w.w, go.data(), tmp.data());
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
    if (track_params_) {
      const Vec& vx = nodes_[xi].val;
      for (int r = 0; r < w.rows(); ++r) {
        b.g.a[r] += go[r];
        if (go[r] == 0.0) continue;
        double* grow = w.g.row(r);
        for (int c = 0; c < w.cols(); ++c) grow[c] += go[r] * vx[c];
      }
    }
  });
}

Var Tape::row(const Param& table, int r) {
  Vec out(table.w.row(r), table.w.row(r) + table.cols());
  int oi = int(nodes_.size());
  return push(std::move(out), [this, &table, r, oi] {
    if (!track_params_) return;
    const Vec& go = nodes_[oi].grad;
    double* grow = table.g.row(r);
    for (size_t c = 0; c < go.size(); ++c) grow[c] += go[c];
  });
}

Var Tape::mix_rows(const Param& table, Var weights) {
  if (table.rows() != size_of(weights))
    throw ConfigError("mix_rows: shape mismatch for " + table.name);
  Vec out(table.cols());
  kern::weighted_rowsum(table.w, val(weights).data(), out.data());
  int oi = int(nodes_.size());
  return push(std::move(out), [this, &table, wi = weights.i, oi] {
    const Vec& go = nodes_[oi].grad;
    Vec& gw = g(wi);
    Vec tmp(table.rows());
    kern::matvec(table.w, go.data(), tmp.data());
    for (size_t i = 0; i < gw.size(); ++i) gw[i] += tmp[i];
    if (track_params_) {
      const Vec& vw = nodes_[wi].val;
      for (int r = 0; r < table.rows(); ++r) {
        if (vw[r] == 0.0) continue;
        double* grow = table.g.row(r);
        for (int c = 0; c < table.cols(); ++c) grow[c] += vw[r] * go[c];
      }
    }
  });
}

Var Tape::concat(const std::vector<Var>& xs) {
  Vec out;
  std::vector<int> idx, off;
  for (Var x : xs) {
    idx.push_back(x.i);
    off.push_back(int(out.size()));
    const Vec& v = val(x);
    out.insert(out.end(), v.begin(), v.end());
  }
  int oi = int(nodes_.size());
  return push(std::move(out), [this, idx, off, oi] {
    const Vec& go = nodes_[oi].grad;
    for (size_t k = 0; k < idx.size(); ++k) {
      Vec& gx = g(idx[k]);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[off[k] + i];
    }
  });
}

Var Tape::slice(Var a, int off, int len) {
  const Vec& va = val(a);
  if (off < 0 || off + len > int(va.size())) throw RuntimeFailure("slice out of range");
  Vec out(va.begin() + off, va.begin() + off + len);
  int oi = int(nodes_.size());
  return push(std::move(out), [this, ai = a.i, off, len, oi] {
    const Vec& go = nodes_[oi].grad;
    Vec& ga = g(ai);
    for (int i = 0; i < len; ++i) ga[off + i] += go[i];
  });
}

Var Tape::sigmoid(Var a) {
  Vec out = val(a);
  for (double& x : out) x = 1.0 / (1.0 + std::exp(-x));
  int oi = int(nodes_.size());
  return push(std::move(out), [this, ai = a.i, oi] {
    const Vec& go = nodes_[oi].grad;
    const Vec& vo = nodes_[oi].val;
    Vec& ga = g(ai);
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * vo[i] * (1.0 - vo[i]);
  });
}

Var Tape::tanh_(Var a) {
  Vec out = val(a);
  for (double& x : out) x = std::tanh(x);
  int oi = int(nodes_.size());
  return push(std::move(out), [this, ai = a.i, oi] {
    const Vec& go = nodes_[oi].grad;
    const Vec& vo = nodes_[oi].val;
    Vec& ga = g(ai);
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (1.0 - vo[i] * vo[i]);
  });
}

Var Tape::softmax_t(Var a, double tau) {
  if (!(tau > 0.0)) throw ConfigError("softmax temperature must be positive");
  const Vec& va = val(a);
  Vec out(va.size());
  kern::softmax(va.data(), int(va.size()), tau, out.data());
  int oi = int(nodes_.size());
  return push(std::move(out), [this, ai = a.i, oi, tau] {
    const Vec& go = nodes_[oi].grad;
    const Vec& y = nodes_[oi].val;
    Vec& ga = g(ai);
    double inner = 0.0;
    for (size_t i = 0; i < go.size(); ++i) inner += go[i] * y[i];
    for (size_t i = 0; i < go.size(); ++i) ga[i] += y[i] * (go[i] - inner) / tau;
  });
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double x : val(a)) s += x;
  int oi = int(nodes_.size());
  return push(Vec{s}, [this, ai = a.i, oi] {
    double go = nodes_[oi].grad[0];
    Vec& ga = g(ai);
    for (double& x : ga) x += go;
  });
}

Var Tape::mean(Var a) {
  const size_t n = val(a).size();
  double s = 0.0;
  for (double x : val(a)) s += x;
  s /= double(n);
  int oi = int(nodes_.size());
  return push(Vec{s}, [this, ai = a.i, oi, n] {
    double go = nodes_[oi].grad[0] / double(n);
    Vec& ga = g(ai);
    for (double& x : ga) x += go;
  });
}

Var Tape::dot(Var a, Var b) {
  const Vec& va = val(a);
  const Vec& vb = val(b);
  assert(va.size() == vb.size());
  double s = 0.0;
  for (size_t i = 0; i < va.size(); ++i) s += va[i] * vb[i];
  int oi = int(nodes_.size());
  return push(Vec{s}, [this, ai = a.i, bi = b.i, oi] {
    double go = nodes_[oi].grad[0];
    const Vec& va2 = nodes_[ai].val;
    const Vec& vb2 = nodes_[bi].val;
    Vec& ga = g(ai);
    Vec& gb = g(bi);
    for (size_t i = 0; i < va2.size(); ++i) {
      ga[i] += go * vb2[i];
      gb[i] += go * va2[i];
    }
  });
}

Var Tape::norm(Var a, int p) {
  const Vec& va = val(a);
  double s = 0.0;
  if (p == 1) {
    for (double x : va) s += std::abs(x);
  } else if (p == 2) {
    for (double x : va) s += x * x;
    s = std::sqrt(s);
  } else {
    throw ConfigError("norm order must be 1 or 2");
  }
  int oi = int(nodes_.size());
  return push(Vec{s}, [this, ai = a.i, oi, p] {
    double go = nodes_[oi].grad[0];
    const Vec& va2 = nodes_[ai].val;
    const double nv = nodes_[oi].val[0];
    Vec& ga = g(ai);
    if (p == 1) {
      for (size_t i = 0; i < va2.size(); ++i) {
        double sg = (va2[i] > 0.0) ? 1.0 : (va2[i] < 0.0 ? -1.0 : 0.0);
        ga[i] += go * sg;
      }
    } else {
      if (nv > 1e-12)
        for (size_t i = 0; i < va2.size(); ++i) ga[i] += go * va2[i] / nv;
    }
  });
}

Var Tape::pick(Var a, int idx) {
  const Vec& va = val(a);
  if (idx < 0 || idx >= int(va.size())) throw RuntimeFailure("pick out of range");
  int oi = int(nodes_.size());
  return push(Vec{va[idx]},
              [this, ai = a.i, idx, oi] { g(ai)[idx] += nodes_[oi].grad[0]; });
}

Var Tape::max_excluding(Var a, int excl) {
  const Vec& va = val(a);
  int arg = -1;
  for (int i = 0; i < int(va.size()); ++i) {
    if (i == excl) continue;
    if (arg < 0 || va[i] > va[arg]) arg = i;
  }
  if (arg < 0) throw ConfigError("max_excluding: need at least two entries");
  int oi = int(nodes_.size());
  return push(Vec{va[arg]},
              [this, ai = a.i, arg, oi] { g(ai)[arg] += nodes_[oi].grad[0]; });
}

Var Tape::max_with(Var a, double floor_val) {
  double v = scalar(a);
  double out = std::max(v, floor_val);
  bool from_a = v > floor_val;
  int oi = int(nodes_.size());
  return push(Vec{out}, [this, ai = a.i, from_a, oi] {
    if (from_a) g(ai)[0] += nodes_[oi].grad[0];
  });
}

Var Tape::nll_logits(Var logits, int gold) {
  const Vec& z = val(logits);
  if (gold < 0 || gold >= int(z.size())) throw RuntimeFailure("nll_logits: gold out of range");
  double mx = z[0];
  for (double x : z) mx = std::max(mx, x);
  double lse = 0.0;
  for (double x : z) lse += std::exp(x - mx);
  lse = mx + std::log(lse);
  int oi = int(nodes_.size());
  return push(Vec{lse - z[gold]}, [this, li = logits.i, gold, oi] {
    double go = nodes_[oi].grad[0];
    const Vec& z2 = nodes_[li].val;
    Vec p(z2.size());
    kern::softmax(z2.data(), int(z2.size()), 1.0, p.data());
    Vec& gl = g(li);
    for (size_t i = 0; i < z2.size(); ++i)
      gl[i] += go * (p[i] - (int(i) == gold ? 1.0 : 0.0));
  });
}

void AdamState::step(Vec& x, const Vec& grad) {
  if (m.size() != x.size()) {
    m.assign(x.size(), 0.0);
    v.assign(x.size(), 0.0);
  }
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, double(t));
  const double bc2 = 1.0 - std::pow(beta2, double(t));
  for (size_t i = 0; i < x.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    x[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

Adam::Adam(std::vector<const Param*> params, double lr) : params_(std::move(params)) {
  state_.reserve(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) state_.emplace_back(lr);
}

void Adam::zero_grads() {
  for (const Param* p : params_) p->zero_grad();
}

void Adam::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    // Param::w is logically owned by the trainer; the const view exists for
    // shared inference. Updating through it here is the single-writer path.
    auto* p = const_cast<Param*>(params_[i]);
    state_[i].step(p->w.a, p->g.a);
  }
}

}  // namespace treeperturb::ad
