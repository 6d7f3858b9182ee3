#pragma once

#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "treeperturb/attack.hpp"
#include "treeperturb/seedgen.hpp"

namespace treeperturb::pipeline {

using Json = nlohmann::ordered_json;

struct Stopwords {
  std::unordered_set<std::string> words;

  bool is_stop(const std::string& token) const;
  static Stopwords load(const std::string& path);
  static Stopwords builtin();
};

// Case-folded tokens with stopwords and punctuation-only tokens removed.
std::vector<std::string> content_words(const std::vector<std::string>& tokens,
                                       const Stopwords& sw);

struct FilterResult {
  bool pass = false;
  std::vector<std::string> overlap;  // sorted, unique
};

// Passes iff the adversarial sentence and the answer sentence share no
// content words; the overlap is reported on failure.
FilterResult contradiction_filter(const std::vector<std::string>& adv_tokens,
                                  const std::vector<std::string>& answer_sentence,
                                  const Stopwords& sw);

// Opposite-extreme target rule: high classes attack to 0, low (and middle)
// classes attack to K-1.
int opposite_extreme(int label, int num_classes);

struct ClsExample {
  std::string id;
  std::vector<treeio::DepTree> sentences;
  int label = 0;

  std::vector<std::string> paragraph_tokens() const;
  std::vector<int> sentence_lens() const;
};

struct QAExample {
  std::string id;
  std::vector<treeio::DepTree> sentences;
  std::vector<std::string> question;
  int answer_sentence = 0;          // index into sentences
  int answer_start = 0, answer_end = 0;  // flattened paragraph positions
  std::string answer_text;

  std::vector<std::string> paragraph_tokens() const;
  std::vector<int> sentence_lens() const;
};

std::vector<ClsExample> load_cls_examples(const std::string& path);
std::vector<QAExample> load_qa_examples(const std::string& path);

struct SpanPred {
  int start = 0, end = 0;
  std::string text;
};

struct AttackResult {
  std::string id;
  std::string task;      // "cls" | "qa"
  std::string mode;      // "sent" | "word"
  std::string strategy;  // seed strategy
  std::string placement; // "prepend" | "append" | integer index as string
  std::vector<std::string> adv_tokens;
  int outer_iterations = 0;
  bool success_targeted = false;
  bool success_untargeted = false;
  std::string failure_reason;
  double wall_clock_s = 0.0;

  // classification
  int gold_label = -1;
  int target_class = -1;
  int pred_before_label = -1;
  int pred_after_label = -1;

  // qa
  std::string qa_target_mode;  // "position" | "answer"
  int t1 = -1, t2 = -1;
  std::string gold_answer;
  std::string targeted_answer;
  SpanPred pred_before_span;
  SpanPred pred_after_span;
  int answer_sentence_index = -1;
  std::vector<std::string> question_tokens;

  // context for transfer and ablation
  std::vector<std::string> paragraph_tokens;
  std::vector<int> sentence_lens;
  std::vector<std::string> adv_paragraph_tokens;

  std::vector<attack::TraceRow> trace;  // only kept when requested

  Json to_json(bool include_timing, bool include_trace) const;
  static AttackResult from_json(const Json& j);
};

constexpr int kResultSchemaVersion = 1;

std::vector<AttackResult> load_results(const std::string& path, Json* header = nullptr);

struct PipelineOptions {
  seedgen::RuleTable rules = seedgen::RuleTable::builtin();
  Stopwords stopwords = Stopwords::builtin();
  const treeio::EmbeddingTable* embeddings = nullptr;  // for fake-answer crafting
  std::string qa_strategy = "question-based";
  attack::QAMode qa_mode = attack::QAMode::Position;
  std::vector<std::string> targeted_answer;  // required for answer mode
};

AttackResult attack_classification(const ClsExample& example,
                                   const victims::SentimentModel& victim,
                                   const autoenc::AutoencoderParams& ae,
                                   const attack::AttackConfig& cfg, uint64_t seed);

AttackResult attack_qa(const QAExample& example, const victims::SpanQAModel& victim,
                       const autoenc::AutoencoderParams& ae, const attack::AttackConfig& cfg,
                       const PipelineOptions& opts, uint64_t seed);

}  // namespace treeperturb::pipeline
