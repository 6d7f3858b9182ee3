#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "treeperturb/autodiff.hpp"
#include "treeperturb/treeio.hpp"

namespace treeperturb::victims {

// Per-position probability rows over the shared vocabulary. Hard tokens
// are one-hot rows.
struct SoftText {
  std::vector<Vec> rows;

  static SoftText from_ids(const std::vector<int>& ids, int vocab_size);
};

Vec one_hot(int id, int n);

// ---------------------------------------------------------------------------
// Sentiment classifier: embedding table, a pooling layer (self-attention or
// a recurrent encoder depending on arch) and a linear head with K logits.

struct SentimentModel {
  std::string arch = "attn";  // "attn" | "recurrent"
  std::string model_id;
  int num_classes = 2;
  int emb_dim = 32;
  int hidden = 32;
  treeio::Vocab vocab;

  ad::Param emb;                  // V x Ev
  ad::Param att_w, att_b, att_v;  // attn arch
  ad::Param lw_i, lb_i, lw_f, lb_f, lw_o, lb_o, lw_u, lb_u;  // recurrent arch
  ad::Param head_w, head_b;

  std::vector<const ad::Param*> all_params() const;
  void init(std::mt19937_64& rng, double scale = 0.2);
  void save(const std::string& path) const;
  static SentimentModel load(const std::string& path);
  static SentimentModel make(const std::string& arch, int num_classes, int emb_dim, int hidden,
                             treeio::Vocab vocab);
};

ad::Var cls_logits_tape(ad::Tape& tape, const SentimentModel& m,
                        const std::vector<ad::Var>& rows);
Vec cls_logits(const SentimentModel& m, const SoftText& input);
Vec cls_logits_hard(const SentimentModel& m, const std::vector<int>& ids);
int cls_predict(const SentimentModel& m, const std::vector<int>& ids);

// ---------------------------------------------------------------------------
// Extractive span model: embedding table, a question pooler, a paragraph
// encoder (sliding window or bidirectional recurrence depending on arch),
// a bilinear question-paragraph interaction and two per-position heads.

struct SpanQAModel {
  std::string arch = "window";  // "window" | "bilstm"
  std::string model_id;
  int emb_dim = 32;
  int hidden = 32;  // paragraph feature size (per direction for bilstm)
  int max_span = 15;
  treeio::Vocab vocab;

  ad::Param emb;
  ad::Param qat_w, qat_b, qat_v;  // question attention pooling
  ad::Param q_w, q_b;             // pooled question -> interaction space
  ad::Param win_w, win_b;         // window arch
  ad::Param fw_i, fb_i, fw_f, fb_f, fw_o, fb_o, fw_u, fb_u;  // bilstm fwd
  ad::Param bw_i, bb_i, bw_f, bb_f, bw_o, bb_o, bw_u, bb_u;  // bilstm bwd
  ad::Param bil_start, bil_end;  // P x Q bilinear forms
  ad::Param lin_start, lin_end;  // 1 x P linear terms

  int para_dim() const { return arch == "bilstm" ? 2 * hidden : hidden; }
  std::vector<const ad::Param*> all_params() const;
  void init(std::mt19937_64& rng, double scale = 0.2);
  void save(const std::string& path) const;
  static SpanQAModel load(const std::string& path);
  static SpanQAModel make(const std::string& arch, int emb_dim, int hidden,
                          treeio::Vocab vocab);
};

std::pair<ad::Var, ad::Var> qa_logits_tape(ad::Tape& tape, const SpanQAModel& m,
                                           const std::vector<ad::Var>& para_rows,
                                           const std::vector<int>& question_ids);
std::pair<Vec, Vec> qa_logits(const SpanQAModel& m, const SoftText& paragraph,
                              const SoftText& question);
std::pair<Vec, Vec> qa_logits_hard(const SpanQAModel& m, const std::vector<int>& para_ids,
                                   const std::vector<int>& question_ids);
// Best (start, end) with start <= end <= start + max_span by Z1+Z2.
std::pair<int, int> qa_predict(const SpanQAModel& m, const std::vector<int>& para_ids,
                               const std::vector<int>& question_ids);

// ---------------------------------------------------------------------------
// Fixture datasets and training.

struct ClsItem {
  std::string id;
  std::vector<std::string> tokens;
  int label = 0;
};

struct QAItem {
  std::string id;
  std::vector<std::string> paragraph;
  std::vector<std::string> question;
  int answer_start = 0;  // inclusive paragraph positions
  int answer_end = 0;
};

std::vector<ClsItem> load_cls_jsonl(const std::string& path);
std::vector<QAItem> load_qa_jsonl(const std::string& path);

struct VictimTrainConfig {
  int epochs = 12;
  double lr = 5e-3;
  uint64_t seed = 42;
  double cls_accuracy_floor = 0.85;
  double qa_em_floor = 60.0;
};

SentimentModel train_sentiment(const std::vector<ClsItem>& train,
                               const std::vector<ClsItem>& heldout, const std::string& arch,
                               int num_classes, const treeio::Vocab& vocab,
                               const VictimTrainConfig& cfg);
SpanQAModel train_qa(const std::vector<QAItem>& train, const std::vector<QAItem>& heldout,
                     const std::string& arch, const treeio::Vocab& vocab,
                     const VictimTrainConfig& cfg);

double cls_accuracy(const SentimentModel& m, const std::vector<ClsItem>& items);
double qa_exact_match(const SpanQAModel& m, const std::vector<QAItem>& items);  // 0..100

}  // namespace treeperturb::victims
