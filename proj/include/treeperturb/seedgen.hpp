#pragma once

#include <random>
#include <string>
#include <vector>

#include "treeperturb/treeio.hpp"

namespace treeperturb::seedgen {

struct SeedSpec {
  std::string strategy;  // "random-sentence" | "question-based" | "answer-based"
  std::vector<std::string> tokens;
  int answer_start = -1, answer_end = -1;  // 0-based inclusive offsets, QA only
  bool fallback_used = false;
  std::vector<std::string> warnings;

  std::vector<std::string> answer_tokens() const;
};

// Uniformly selects a paragraph sentence with at least three tokens.
SeedSpec seed_cls(const std::vector<std::vector<std::string>>& sentences, std::mt19937_64& rng);

// Question-rewrite rules: a token pattern with $1/$2 capture slots mapped to
// a template that may also splice $ANS. First matching rule wins.
struct RuleTable {
  struct Rule {
    std::vector<std::string> pattern;
    std::vector<std::string> templ;
  };
  std::vector<Rule> rules;

  static RuleTable load(const std::string& path);
  static RuleTable builtin();
  std::string serialize() const;
};

// Rewrites a question into a declarative statement carrying the target
// answer. Unrecognised questions fall back to "<answer> <question words> ."
// with a warning flag.
SeedSpec question_to_statement(const std::vector<std::string>& question,
                               const std::vector<std::string>& target_answer,
                               const RuleTable& rules);

// Copies the answer sentence, replacing the answer span either with the
// supplied targeted answer or with each token's nearest embedding
// neighbour.
SeedSpec answer_based_seed(const std::vector<std::string>& answer_sentence, int span_start,
                           int span_end, const treeio::EmbeddingTable& table,
                           const std::vector<std::string>* targeted_answer);

// How many times `needle` occurs as a contiguous subsequence (case-folded).
int count_occurrences(const std::vector<std::string>& haystack,
                      const std::vector<std::string>& needle);

// Deterministic stub parse for generated statements: the token after a
// leading answer span is treated as the main verb and everything else
// attaches around it; falls back to a left-attaching chain when the shape
// does not fit.
treeio::DepTree statement_tree(const std::vector<std::string>& tokens, int answer_start,
                               int answer_end);

}  // namespace treeperturb::seedgen
