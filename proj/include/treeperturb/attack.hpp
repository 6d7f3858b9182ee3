#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "treeperturb/autoenc.hpp"
#include "treeperturb/victims.hpp"

namespace treeperturb::attack {

enum class Task { Classification, QA };
enum class QAMode { Position, Answer };

QAMode qa_mode_from_string(const std::string& s);
std::string to_string(QAMode m);

struct AttackTarget {
  Task task = Task::Classification;
  int target_class = 0;
  QAMode qa_mode = QAMode::Position;
  int t1 = 0, t2 = 0;              // targeted positions in the final paragraph
  int gate_start = -1, gate_end = -1;  // same span, local to the adversarial sentence
  std::vector<int> answer_ids;     // fixed tokens for the answer-targeted gate
};

struct Placement {
  enum Kind { Prepend, Append, Index } kind = Prepend;
  int index = 0;  // token position for Kind::Index
};

struct AttackConfig {
  autoenc::Mode mode = autoenc::Mode::Word;
  int p = 2;
  double c = 1000.0;
  double kappa = 0.0;
  double lr = 0.6;
  int steps = 100;
  int outer_max = 10;
  double tau_start = 5.0, tau_end = 0.01;  // geometric schedule over the inner steps
  double g1 = 1.0, g2 = 0.0;
  Placement placement{Placement::Prepend, 0};
  bool save_trace = false;
  bool restart_on_filter_fail = false;
};

// Carlini-Wagner style margin objectives. Both saturate at their floor
// once every targeted margin exceeds kappa.
double f_cls(const Vec& logits, int target, double kappa);
double f_qa(const Vec& z1, const Vec& z2, int t1, int t2, double kappa);
ad::Var f_cls_tape(ad::Tape& tape, ad::Var logits, int target, double kappa);
ad::Var f_qa_tape(ad::Tape& tape, ad::Var z1, ad::Var z2, int t1, int t2, double kappa);

double total_objective(const std::vector<Vec>& zstar, double f_value, int p, double c);

// y <- g1*y + g2*onehot(original) on [span_start, span_end] (0-based, inclusive).
std::vector<Vec> apply_gate(const std::vector<Vec>& rows, const std::vector<int>& original_ids,
                            int span_start, int span_end, double g1, double g2);
std::vector<ad::Var> apply_gate_tape(ad::Tape& tape, const std::vector<ad::Var>& rows,
                                     const std::vector<int>& original_ids, int span_start,
                                     int span_end, double g1, double g2, int vocab_size);
void apply_gate_hard(std::vector<int>& ids, const std::vector<int>& original_ids, int span_start,
                     int span_end, double g1, double g2);

struct AttackContext {
  const victims::SentimentModel* cls_victim = nullptr;
  const victims::SpanQAModel* qa_victim = nullptr;
  std::vector<int> paragraph_ids;
  std::vector<int> question_ids;       // QA only
  std::vector<int> banned_token_ids;   // kept out of decoded sentences
};

struct TraceRow {
  int step = 0;
  double objective = 0.0, f = 0.0, norm = 0.0, tau = 0.0;
};

struct OptimizeResult {
  std::vector<Vec> zstar;  // best-objective iterate
  double best_objective = 0.0;
  double initial_objective = 0.0;
  std::vector<TraceRow> trace;
};

using StepObserver = std::function<void(int step, const std::vector<Vec>& zstar)>;

// Runs cfg.steps Adam updates on z*, soft-decoding at the scheduled
// temperature, gating, placing the adversarial rows and querying the
// victim each evaluation. Returns the best iterate seen.
OptimizeResult optimize(const autoenc::LatentCode& code, const treeio::DepTree& tree,
                        const autoenc::AutoencoderParams& ae, const AttackContext& ctx,
                        const AttackTarget& target, const AttackConfig& cfg,
                        const std::vector<Vec>* initial_zstar = nullptr,
                        const StepObserver& observer = nullptr);

// How many times optimize() ran in this process; the transfer harness
// asserts this stays flat during re-scoring.
long optimize_calls();

struct BisectResult {
  bool success = false;
  double value = 0.0;
  int evaluations = 0;
};

// Bisection that records midpoint successes and keeps searching downward,
// returning the smallest passing constant (used for c).
BisectResult binary_search_constant(const std::function<bool(double)>& run, double lo, double hi,
                                    int rounds);
// The mirror image: keeps searching upward, returning the largest passing
// constant (used for kappa).
BisectResult binary_search_constant_max(const std::function<bool(double)>& run, double lo,
                                        double hi, int rounds);

// Assembles [adv; paragraph], [paragraph; adv] or an insertion at a token
// index, following the placement.
std::vector<int> place_tokens(const std::vector<int>& adv, const std::vector<int>& paragraph,
                              const Placement& placement);

}  // namespace treeperturb::attack
