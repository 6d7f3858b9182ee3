#include "treeperturb/attack.hpp"

#include <atomic>
#include <cmath>

namespace treeperturb::attack {

QAMode qa_mode_from_string(const std::string& s) {
  if (s == "position") return QAMode::Position;
  if (s == "answer") return QAMode::Answer;
  throw ConfigError("unknown qa target mode: " + s + " (expected position|answer)");
}

std::string to_string(QAMode m) { return m == QAMode::Position ? "position" : "answer"; }

double f_cls(const Vec& logits, int target, double kappa) {
  if (logits.size() < 2) throw ConfigError("f_cls needs at least two classes");
  if (target < 0 || target >= int(logits.size())) throw ConfigError("f_cls: target out of range");
  double best_other = -1e300;
  for (int i = 0; i < int(logits.size()); ++i)
    if (i != target) best_other = std::max(best_other, logits[size_t(i)]);
  return std::max(best_other - logits[size_t(target)], -kappa);
}

double f_qa(const Vec& z1, const Vec& z2, int t1, int t2, double kappa) {
  if (t1 < 0 || t1 >= int(z1.size()) || t2 < 0 || t2 >= int(z2.size()))
    throw ConfigError("f_qa: targeted positions out of range");
  auto term = [&](const Vec& z, int t) {
    double best_other = -1e300;
    for (int i = 0; i < int(z.size()); ++i)
      if (i != t) best_other = std::max(best_other, z[size_t(i)]);
    return std::max(best_other - z[size_t(t)], -kappa);
  };
  return term(z1, t1) + term(z2, t2);
}

ad::Var f_cls_tape(ad::Tape& tape, ad::Var logits, int target, double kappa) {
  if (tape.size_of(logits) < 2) throw ConfigError("f_cls needs at least two classes");
  ad::Var ell = tape.max_excluding(logits, target);
  return tape.max_with(tape.sub(ell, tape.pick(logits, target)), -kappa);
}

ad::Var f_qa_tape(ad::Tape& tape, ad::Var z1, ad::Var z2, int t1, int t2, double kappa) {
  if (t1 < 0 || t1 >= tape.size_of(z1) || t2 < 0 || t2 >= tape.size_of(z2))
    throw ConfigError("f_qa: targeted positions out of range");
  ad::Var a = tape.max_with(tape.sub(tape.max_excluding(z1, t1), tape.pick(z1, t1)), -kappa);
  ad::Var b = tape.max_with(tape.sub(tape.max_excluding(z2, t2), tape.pick(z2, t2)), -kappa);
  return tape.add(a, b);
}

namespace {
Vec flatten(const std::vector<Vec>& vs) {
  Vec out;
  for (const Vec& v : vs) out.insert(out.end(), v.begin(), v.end());
  return out;
}

double norm_p(const Vec& v, int p) {
  double s = 0.0;
  if (p == 1) {
    for (double x : v) s += std::abs(x);
    return s;
  }
  if (p == 2) {
    for (double x : v) s += x * x;
    return std::sqrt(s);
  }
  throw ConfigError("norm order must be 1 or 2");
}
}  // namespace

double total_objective(const std::vector<Vec>& zstar, double f_value, int p, double c) {
  return norm_p(flatten(zstar), p) + c * f_value;
}

std::vector<Vec> apply_gate(const std::vector<Vec>& rows, const std::vector<int>& original_ids,
                            int span_start, int span_end, double g1, double g2) {
  if (span_start < 0 || span_end >= int(rows.size()) || span_start > span_end)
    throw DataError("apply_gate: span out of bounds");
  if (int(original_ids.size()) != span_end - span_start + 1)
    throw DataError("apply_gate: original tokens do not cover the span");
  std::vector<Vec> out = rows;
  if (g1 == 1.0 && g2 == 0.0) return out;
  for (int i = span_start; i <= span_end; ++i) {
    Vec& r = out[size_t(i)];
    const int oid = original_ids[size_t(i - span_start)];
    for (size_t v = 0; v < r.size(); ++v)
      r[v] = g1 * r[v] + g2 * (int(v) == oid ? 1.0 : 0.0);
  }
  return out;
}

std::vector<ad::Var> apply_gate_tape(ad::Tape& tape, const std::vector<ad::Var>& rows,
                                     const std::vector<int>& original_ids, int span_start,
                                     int span_end, double g1, double g2, int vocab_size) {
  if (span_start < 0 || span_end >= int(rows.size()) || span_start > span_end)
    throw DataError("apply_gate: span out of bounds");
  if (int(original_ids.size()) != span_end - span_start + 1)
    throw DataError("apply_gate: original tokens do not cover the span");
  std::vector<ad::Var> out = rows;
  if (g1 == 1.0 && g2 == 0.0) return out;
  for (int i = span_start; i <= span_end; ++i) {
    const int oid = original_ids[size_t(i - span_start)];
    Vec xr = victims::one_hot(oid, vocab_size);
    for (double& x : xr) x *= g2;
    out[size_t(i)] = tape.add(tape.scale(rows[size_t(i)], g1), tape.constant(std::move(xr)));
  }
  return out;
}

void apply_gate_hard(std::vector<int>& ids, const std::vector<int>& original_ids, int span_start,
                     int span_end, double g1, double g2) {
  if (span_start < 0 || span_end >= int(ids.size()) || span_start > span_end)
    throw DataError("apply_gate: span out of bounds");
  if (int(original_ids.size()) != span_end - span_start + 1)
    throw DataError("apply_gate: original tokens do not cover the span");
  // Hard tokens only switch when the original side dominates the blend.
  if (g2 > g1)
    for (int i = span_start; i <= span_end; ++i)
      ids[size_t(i)] = original_ids[size_t(i - span_start)];
}

std::vector<int> place_tokens(const std::vector<int>& adv, const std::vector<int>& paragraph,
                              const Placement& placement) {
  std::vector<int> out;
  out.reserve(adv.size() + paragraph.size());
  switch (placement.kind) {
    case Placement::Prepend:
      out = adv;
      out.insert(out.end(), paragraph.begin(), paragraph.end());
      break;
    case Placement::Append:
      out = paragraph;
      out.insert(out.end(), adv.begin(), adv.end());
      break;
    case Placement::Index: {
      int at = std::max(0, std::min(placement.index, int(paragraph.size())));
      out.assign(paragraph.begin(), paragraph.begin() + at);
      out.insert(out.end(), adv.begin(), adv.end());
      out.insert(out.end(), paragraph.begin() + at, paragraph.end());
      break;
    }
  }
  return out;
}

namespace {
std::atomic<long> g_optimize_calls{0};

int adv_offset_of(const Placement& placement, int para_len) {
  switch (placement.kind) {
    case Placement::Prepend:
      return 0;
    case Placement::Append:
      return para_len;
    case Placement::Index:
      return std::max(0, std::min(placement.index, para_len));
  }
  return 0;
}
}  // namespace

long optimize_calls() { return g_optimize_calls.load(); }

OptimizeResult optimize(const autoenc::LatentCode& code, const treeio::DepTree& tree,
                        const autoenc::AutoencoderParams& ae, const AttackContext& ctx,
                        const AttackTarget& target, const AttackConfig& cfg,
                        const std::vector<Vec>* initial_zstar, const StepObserver& observer) {
  g_optimize_calls.fetch_add(1);
  if (cfg.steps < 1) throw ConfigError("optimize: steps must be >= 1");
  if (!(cfg.c > 0.0)) throw ConfigError("optimize: c must be positive");
  if (cfg.kappa < 0.0) throw ConfigError("optimize: kappa must be >= 0");
  if (!(cfg.tau_start > 0.0) || !(cfg.tau_end > 0.0))
    throw ConfigError("optimize: temperatures must be positive");
  if (target.task == Task::Classification && ctx.cls_victim == nullptr)
    throw ConfigError("optimize: classification target without a classifier");
  if (target.task == Task::QA && ctx.qa_victim == nullptr)
    throw ConfigError("optimize: qa target without a span model");

  const int H = ae.dims.hidden;
  const int V = ae.vocab.size();
  const int n_payload = int(code.payload.size());

  std::vector<Vec> zstar(code.payload.size());
  for (size_t i = 0; i < zstar.size(); ++i) zstar[i].assign(code.payload[i].size(), 0.0);
  if (initial_zstar) {
    if (initial_zstar->size() != zstar.size())
      throw ConfigError("optimize: initial perturbation shape mismatch");
    zstar = *initial_zstar;
  }

  Vec zflat_v = flatten(zstar);
  ad::AdamState adam(cfg.lr);

  OptimizeResult res;
  res.trace.reserve(size_t(cfg.steps) + 1);
  bool have_best = false;

  auto tau_at = [&](int t) {
    if (cfg.steps == 1) return cfg.tau_end;
    const double frac = double(t) / double(cfg.steps - 1);
    return cfg.tau_start * std::pow(cfg.tau_end / cfg.tau_start, frac);
  };

  auto unflatten = [&](const Vec& flat) {
    std::vector<Vec> out(zstar.size());
    size_t off = 0;
    for (size_t i = 0; i < zstar.size(); ++i) {
      out[i].assign(flat.begin() + long(off), flat.begin() + long(off + code.payload[i].size()));
      off += code.payload[i].size();
    }
    return out;
  };

  // One evaluation of the relaxed objective; fills the gradient when asked.
  auto evaluate = [&](const Vec& flat, double tau, Vec* grad_out, double* f_out,
                      double* norm_out) {
    ad::Tape tape(false);
    ad::Var z = tape.input(flat);
    ad::Var root;
    if (code.mode == autoenc::Mode::Sentence) {
      root = tape.add(tape.constant(code.payload[0]), z);
    } else {
      std::vector<ad::Var> hs;
      hs.reserve(size_t(n_payload));
      for (int i = 0; i < n_payload; ++i)
        hs.push_back(tape.add(tape.constant(code.payload[size_t(i)]), tape.slice(z, i * H, H)));
      root = autoenc::reencode_tape(tape, tree, hs, ae);
    }
    autoenc::SoftDecode dec = autoenc::decode_soft_tape(
        tape, root, tree, ae, tau,
        ctx.banned_token_ids.empty() ? nullptr : &ctx.banned_token_ids);
    std::vector<ad::Var> adv_rows = dec.rows;
    if (target.task == Task::QA && target.gate_start >= 0)
      adv_rows = apply_gate_tape(tape, adv_rows, target.answer_ids, target.gate_start,
                                 target.gate_end, cfg.g1, cfg.g2, V);

    std::vector<ad::Var> para_rows;
    para_rows.reserve(ctx.paragraph_ids.size());
    for (int id : ctx.paragraph_ids) para_rows.push_back(tape.constant(victims::one_hot(id, V)));

    std::vector<ad::Var> all_rows;
    const int at = adv_offset_of(cfg.placement, int(para_rows.size()));
    all_rows.insert(all_rows.end(), para_rows.begin(), para_rows.begin() + at);
    all_rows.insert(all_rows.end(), adv_rows.begin(), adv_rows.end());
    all_rows.insert(all_rows.end(), para_rows.begin() + at, para_rows.end());

    ad::Var f;
    if (target.task == Task::Classification) {
      ad::Var logits = victims::cls_logits_tape(tape, *ctx.cls_victim, all_rows);
      f = f_cls_tape(tape, logits, target.target_class, cfg.kappa);
    } else {
      auto [z1, z2] = victims::qa_logits_tape(tape, *ctx.qa_victim, all_rows, ctx.question_ids);
      f = f_qa_tape(tape, z1, z2, target.t1, target.t2, cfg.kappa);
    }
    ad::Var nrm = tape.norm(z, cfg.p);
    ad::Var obj = tape.add(nrm, tape.scale(f, cfg.c));
    const double obj_v = tape.scalar(obj);
    if (f_out) *f_out = tape.scalar(f);
    if (norm_out) *norm_out = tape.scalar(nrm);
    if (grad_out) {
      tape.backward(obj);
      *grad_out = tape.grad_of(z);
    }
    return obj_v;
  };

  for (int t = 0; t < cfg.steps; ++t) {
    const double tau = tau_at(t);
    Vec grad;
    double f_v = 0.0, norm_v = 0.0;
    const double obj_v = evaluate(zflat_v, tau, &grad, &f_v, &norm_v);
    if (!std::isfinite(obj_v))
      throw RuntimeFailure("optimize: non-finite objective at step " + std::to_string(t));
    res.trace.push_back(TraceRow{t, obj_v, f_v, norm_v, tau});
    if (t == 0) res.initial_objective = obj_v;
    if (!have_best || obj_v < res.best_objective) {
      res.best_objective = obj_v;
      res.zstar = unflatten(zflat_v);
      have_best = true;
    }
    adam.step(zflat_v, grad);
    if (observer) observer(t, unflatten(zflat_v));
  }
  // Consider the final iterate too.
  {
    double f_v = 0.0, norm_v = 0.0;
    const double obj_v = evaluate(zflat_v, cfg.tau_end, nullptr, &f_v, &norm_v);
    if (std::isfinite(obj_v)) {
      res.trace.push_back(TraceRow{cfg.steps, obj_v, f_v, norm_v, cfg.tau_end});
      if (obj_v < res.best_objective) {
        res.best_objective = obj_v;
        res.zstar = unflatten(zflat_v);
      }
    }
  }
  return res;
}

namespace {
BisectResult bisect(const std::function<bool(double)>& run, double lo, double hi, int rounds,
                    bool seek_min) {
  if (!(lo < hi)) throw ConfigError("binary search requires lo < hi");
  if (rounds < 1) throw ConfigError("binary search requires rounds >= 1");
  BisectResult res;
  for (int r = 0; r < rounds; ++r) {
    const double mid = 0.5 * (lo + hi);
    bool ok;
    try {
      ok = run(mid);
    } catch (const Error& e) {
      throw RuntimeFailure("binary search closure failed at value " + std::to_string(mid) +
                           ": " + e.what());
    }
    ++res.evaluations;
    if (ok) {
      if (!res.success || (seek_min ? mid < res.value : mid > res.value)) res.value = mid;
      res.success = true;
      if (seek_min)
        hi = mid;
      else
        lo = mid;
    } else {
      if (seek_min)
        lo = mid;
      else
        hi = mid;
    }
  }
  return res;
}
}  // namespace

BisectResult binary_search_constant(const std::function<bool(double)>& run, double lo, double hi,
                                    int rounds) {
  return bisect(run, lo, hi, rounds, true);
}

BisectResult binary_search_constant_max(const std::function<bool(double)>& run, double lo,
                                        double hi, int rounds) {
  return bisect(run, lo, hi, rounds, false);
}

}  // namespace treeperturb::attack
