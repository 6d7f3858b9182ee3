#pragma once

#include <map>
#include <string>
#include <vector>

#include "treeperturb/pipeline.hpp"

namespace treeperturb::eval {

using Json = nlohmann::ordered_json;

// SQuAD-style answer normalisation: lowercase, drop punctuation characters,
// drop articles, collapse whitespace.
std::string squad_normalize(const std::string& s);
int squad_em(const std::string& prediction, const std::vector<std::string>& golds);
double squad_f1(const std::string& prediction, const std::vector<std::string>& golds);

struct ScoreReport {
  std::string task;
  std::string model_id;
  int count = 0;
  double targeted_rate = 0.0;
  double untargeted_rate = 0.0;
  // QA only
  double em = 0.0, f1 = 0.0;
  double targeted_em = 0.0, targeted_f1 = 0.0;
  int unk_tokens = 0;  // transfer: tokens outside the blackbox vocab

  Json to_json() const;
  std::string to_table() const;
  bool operator==(const ScoreReport&) const = default;
};

std::pair<double, double> success_rates(const std::vector<pipeline::AttackResult>& results);

// Whitebox report straight from the stored records.
ScoreReport score_results(const std::vector<pipeline::AttackResult>& results,
                          const std::string& model_id);

// Re-scores every stored adversarial paragraph under another model; no
// re-optimisation happens here.
ScoreReport transfer_eval(const std::vector<pipeline::AttackResult>& results,
                          const victims::SentimentModel& blackbox);
ScoreReport transfer_eval(const std::vector<pipeline::AttackResult>& results,
                          const victims::SpanQAModel& blackbox);

// Re-inserts each stored adversarial sentence at the front, after half the
// sentences, and at the back, then re-scores.
struct AblationReport {
  std::map<std::string, ScoreReport> by_position;  // front | mid | back
  std::string best_position;
  int collapsed_mid = 0;  // single-sentence paragraphs where mid == front

  Json to_json() const;
  std::string to_table() const;
};

AblationReport position_ablation(const std::vector<pipeline::AttackResult>& results,
                                 const victims::SentimentModel& model);
AblationReport position_ablation(const std::vector<pipeline::AttackResult>& results,
                                 const victims::SpanQAModel& model);

}  // namespace treeperturb::eval
