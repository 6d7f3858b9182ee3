#include "treeperturb/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

namespace treeperturb::pipeline {

namespace {

const char* kBuiltinStopwords[] = {
    "a",    "an",    "the",   "and",  "or",   "but",  "if",    "of",    "at",   "by",
    "for",  "with",  "about", "on",   "in",   "to",   "from",  "up",    "down", "out",
    "over", "under", "again", "then", "once", "here", "there", "is",    "are",  "was",
    "were", "be",    "been",  "being", "am",  "it",   "its",   "this",  "that", "these",
    "those", "he",   "she",   "they", "them", "his",  "her",   "their", "i",    "you",
    "we",   "me",    "him",   "us",   "my",   "your", "our",   "who",   "whom", "whose",
    "what", "which", "when",  "where", "why", "how",  "did",   "do",    "does", "done",
    "have", "has",   "had",   "will", "would", "can",  "could", "shall", "should", "may",
    "might", "must", "not",   "no",   "nor",  "so",   "too",   "very",  "s",    "t",
    "as",   "than",  "because", "while", "during", "into", "through", "some", "such",
    "only", "own",   "same",  "just", "now"};

bool all_punct(const std::string& s) {
  if (s.empty()) return true;
  for (char c : s)
    if (std::isalnum(static_cast<unsigned char>(c))) return false;
  return true;
}

double now_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

std::vector<int> to_ids(const treeio::Vocab& vocab, const std::vector<std::string>& toks) {
  std::vector<int> ids;
  ids.reserve(toks.size());
  for (const std::string& t : toks) ids.push_back(vocab.id(lower(t)));
  return ids;
}

std::string join_span(const std::vector<std::string>& toks, int s, int e) {
  std::vector<std::string> out;
  for (int i = s; i <= e && i < int(toks.size()); ++i)
    if (i >= 0) out.push_back(toks[size_t(i)]);
  return join(out, " ");
}

// Used by caller-facing success checks; mirrors the eval-module SQuAD
// normalisation so the two agree (lowercase, drop punctuation characters,
// drop articles, collapse whitespace).
std::string normalize_answer(const std::string& s) {
  std::string low = lower(s);
  std::string nopunct;
  for (char c : low)
    if (!std::ispunct(static_cast<unsigned char>(c))) nopunct.push_back(c);
  std::vector<std::string> toks = split_ws(nopunct);
  std::vector<std::string> kept;
  for (const std::string& t : toks)
    if (t != "a" && t != "an" && t != "the") kept.push_back(t);
  return join(kept, " ");
}

treeio::DepTree tree_from_json(const Json& j) {
  return treeio::DepTree::from_tokens(j.at("tokens").get<std::vector<std::string>>(),
                                      j.at("head").get<std::vector<int>>(),
                                      j.at("deprel").get<std::vector<std::string>>());
}

}  // namespace

bool Stopwords::is_stop(const std::string& token) const {
  const std::string t = lower(token);
  return all_punct(t) || words.count(t) > 0;
}

Stopwords Stopwords::load(const std::string& path) {
  Stopwords sw;
  for (const std::string& line : split_lines(read_file(path)))
    for (const std::string& w : split_ws(line)) sw.words.insert(lower(w));
  if (sw.words.empty()) throw DataError("stopword list is empty: " + path);
  return sw;
}

Stopwords Stopwords::builtin() {
  Stopwords sw;
  for (const char* w : kBuiltinStopwords) sw.words.insert(w);
  return sw;
}

std::vector<std::string> content_words(const std::vector<std::string>& tokens,
                                       const Stopwords& sw) {
  std::set<std::string> out;
  for (const std::string& t : tokens) {
    const std::string low = lower(t);
    if (!sw.is_stop(low)) out.insert(low);
  }
  return std::vector<std::string>(out.begin(), out.end());
}

FilterResult contradiction_filter(const std::vector<std::string>& adv_tokens,
                                  const std::vector<std::string>& answer_sentence,
                                  const Stopwords& sw) {
  const auto a = content_words(adv_tokens, sw);
  const auto b = content_words(answer_sentence, sw);
  FilterResult res;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                        std::back_inserter(res.overlap));
  res.pass = res.overlap.empty();
  return res;
}

int opposite_extreme(int label, int num_classes) {
  if (num_classes < 2) throw ConfigError("opposite_extreme needs at least two classes");
  const int mid = (num_classes + 1) / 2;
  return label >= mid ? 0 : num_classes - 1;
}

std::vector<std::string> ClsExample::paragraph_tokens() const {
  std::vector<std::string> out;
  for (const auto& s : sentences) {
    auto t = s.surface_tokens();
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

std::vector<int> ClsExample::sentence_lens() const {
  std::vector<int> out;
  for (const auto& s : sentences) out.push_back(s.size());
  return out;
}

std::vector<std::string> QAExample::paragraph_tokens() const {
  std::vector<std::string> out;
  for (const auto& s : sentences) {
    auto t = s.surface_tokens();
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

std::vector<int> QAExample::sentence_lens() const {
  std::vector<int> out;
  for (const auto& s : sentences) out.push_back(s.size());
  return out;
}

std::vector<ClsExample> load_cls_examples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open attack dataset: " + path);
  std::vector<ClsExample> out;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(ln) + ": bad json: " + e.what());
    }
    ClsExample ex;
    ex.id = j.value("id", "cls-" + std::to_string(ln));
    ex.label = j.at("label").get<int>();
    for (const Json& s : j.at("sentences")) {
      treeio::DepTree t = tree_from_json(s);
      auto bad = treeio::validate(t);
      if (!bad.empty())
        throw DataError(path + ": example " + ex.id + " has an invalid parse: " +
                        join(bad, "; "));
      ex.sentences.push_back(std::move(t));
    }
    if (ex.sentences.empty()) throw DataError(path + ": example " + ex.id + " has no sentences");
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<QAExample> load_qa_examples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open attack dataset: " + path);
  std::vector<QAExample> out;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(ln) + ": bad json: " + e.what());
    }
    QAExample ex;
    ex.id = j.value("id", "qa-" + std::to_string(ln));
    for (const Json& s : j.at("sentences")) {
      treeio::DepTree t = tree_from_json(s);
      auto bad = treeio::validate(t);
      if (!bad.empty())
        throw DataError(path + ": example " + ex.id + " has an invalid parse: " +
                        join(bad, "; "));
      ex.sentences.push_back(std::move(t));
    }
    ex.question = j.at("question").get<std::vector<std::string>>();
    ex.answer_sentence = j.at("answer_sentence").get<int>();
    ex.answer_start = j.at("answer_start").get<int>();
    ex.answer_end = j.at("answer_end").get<int>();
    ex.answer_text = j.at("answer_text").get<std::string>();
    const int n = int(ex.paragraph_tokens().size());
    if (ex.answer_sentence < 0 || ex.answer_sentence >= int(ex.sentences.size()) ||
        ex.answer_start < 0 || ex.answer_end < ex.answer_start || ex.answer_end >= n)
      throw DataError(path + ": example " + ex.id + " has an out-of-range answer");
    out.push_back(std::move(ex));
  }
  return out;
}

Json AttackResult::to_json(bool include_timing, bool include_trace) const {
  Json j;
  j["id"] = id;
  j["task"] = task;
  j["mode"] = mode;
  j["strategy"] = strategy;
  j["placement"] = placement;
  j["adv_tokens"] = adv_tokens;
  j["outer_iterations"] = outer_iterations;
  j["success_targeted"] = success_targeted;
  j["success_untargeted"] = success_untargeted;
  j["failure_reason"] = failure_reason;
  if (include_timing) j["wall_clock_s"] = wall_clock_s;
  if (task == "cls") {
    j["gold_label"] = gold_label;
    j["target_class"] = target_class;
    j["pred_before"] = pred_before_label;
    j["pred_after"] = pred_after_label;
  } else {
    j["qa_target_mode"] = qa_target_mode;
    j["t1"] = t1;
    j["t2"] = t2;
    j["gold_answer"] = gold_answer;
    j["targeted_answer"] = targeted_answer;
    j["pred_before"] = Json{{"start", pred_before_span.start},
                            {"end", pred_before_span.end},
                            {"text", pred_before_span.text}};
    j["pred_after"] = Json{{"start", pred_after_span.start},
                           {"end", pred_after_span.end},
                           {"text", pred_after_span.text}};
    j["answer_sentence_index"] = answer_sentence_index;
    j["question_tokens"] = question_tokens;
  }
  j["paragraph_tokens"] = paragraph_tokens;
  j["sentence_lens"] = sentence_lens;
  j["adv_paragraph_tokens"] = adv_paragraph_tokens;
  if (include_trace && !trace.empty()) {
    Json rows = Json::array();
    for (const attack::TraceRow& r : trace)
      rows.push_back(Json{{"step", r.step},
                          {"objective", r.objective},
                          {"f", r.f},
                          {"norm", r.norm},
                          {"tau", r.tau}});
    j["trace"] = rows;
  }
  return j;
}

AttackResult AttackResult::from_json(const Json& j) {
  AttackResult r;
  r.id = j.at("id").get<std::string>();
  r.task = j.at("task").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.strategy = j.value("strategy", "");
  r.placement = j.value("placement", "");
  r.adv_tokens = j.at("adv_tokens").get<std::vector<std::string>>();
  r.outer_iterations = j.value("outer_iterations", 0);
  r.success_targeted = j.at("success_targeted").get<bool>();
  r.success_untargeted = j.at("success_untargeted").get<bool>();
  r.failure_reason = j.value("failure_reason", "");
  r.wall_clock_s = j.value("wall_clock_s", 0.0);
  if (r.task == "cls") {
    r.gold_label = j.at("gold_label").get<int>();
    r.target_class = j.at("target_class").get<int>();
    r.pred_before_label = j.at("pred_before").get<int>();
    r.pred_after_label = j.at("pred_after").get<int>();
  } else {
    r.qa_target_mode = j.value("qa_target_mode", "position");
    r.t1 = j.value("t1", -1);
    r.t2 = j.value("t2", -1);
    r.gold_answer = j.value("gold_answer", "");
    r.targeted_answer = j.value("targeted_answer", "");
    const Json& pb = j.at("pred_before");
    r.pred_before_span = SpanPred{pb.at("start").get<int>(), pb.at("end").get<int>(),
                                  pb.at("text").get<std::string>()};
    const Json& pa = j.at("pred_after");
    r.pred_after_span = SpanPred{pa.at("start").get<int>(), pa.at("end").get<int>(),
                                 pa.at("text").get<std::string>()};
    r.answer_sentence_index = j.value("answer_sentence_index", -1);
    r.question_tokens = j.value("question_tokens", std::vector<std::string>{});
  }
  r.paragraph_tokens = j.at("paragraph_tokens").get<std::vector<std::string>>();
  r.sentence_lens = j.at("sentence_lens").get<std::vector<int>>();
  r.adv_paragraph_tokens = j.at("adv_paragraph_tokens").get<std::vector<std::string>>();
  return r;
}

std::vector<AttackResult> load_results(const std::string& path, Json* header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open results file: " + path);
  std::vector<AttackResult> out;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(ln) + ": bad json: " + e.what());
    }
    if (j.contains("schema_version") && !j.contains("id")) {
      if (header) *header = j;
      continue;
    }
    out.push_back(AttackResult::from_json(j));
  }
  return out;
}

namespace {

std::string placement_name(const attack::Placement& p) {
  switch (p.kind) {
    case attack::Placement::Prepend:
      return "prepend";
    case attack::Placement::Append:
      return "append";
    case attack::Placement::Index:
      return std::to_string(p.index);
  }
  return "prepend";
}

std::vector<std::string> place_strings(const std::vector<std::string>& adv,
                                       const std::vector<std::string>& para,
                                       const attack::Placement& placement) {
  std::vector<std::string> out;
  switch (placement.kind) {
    case attack::Placement::Prepend:
      out = adv;
      out.insert(out.end(), para.begin(), para.end());
      break;
    case attack::Placement::Append:
      out = para;
      out.insert(out.end(), adv.begin(), adv.end());
      break;
    case attack::Placement::Index: {
      int at = std::max(0, std::min(placement.index, int(para.size())));
      out.assign(para.begin(), para.begin() + at);
      out.insert(out.end(), adv.begin(), adv.end());
      out.insert(out.end(), para.begin() + at, para.end());
      break;
    }
  }
  return out;
}

}  // namespace

AttackResult attack_classification(const ClsExample& example,
                                   const victims::SentimentModel& victim,
                                   const autoenc::AutoencoderParams& ae,
                                   const attack::AttackConfig& cfg, uint64_t seed) {
  const double t_start = now_seconds();
  std::mt19937_64 rng(mix_seed(seed, "attack-cls-" + example.id));

  AttackResult res;
  res.id = example.id;
  res.task = "cls";
  res.mode = autoenc::to_string(cfg.mode);
  res.gold_label = example.label;
  res.target_class = opposite_extreme(example.label, victim.num_classes);
  res.paragraph_tokens = example.paragraph_tokens();
  res.sentence_lens = example.sentence_lens();

  attack::AttackConfig cfg_local = cfg;
  cfg_local.placement = attack::Placement{attack::Placement::Prepend, 0};
  res.placement = placement_name(cfg_local.placement);

  // Seed: a random qualifying paragraph sentence, along with its parse.
  std::vector<std::vector<std::string>> sent_tokens;
  for (const auto& s : example.sentences) sent_tokens.push_back(s.surface_tokens());
  seedgen::SeedSpec seed_spec = seedgen::seed_cls(sent_tokens, rng);
  res.strategy = seed_spec.strategy;
  int seed_idx = -1;
  for (size_t i = 0; i < sent_tokens.size(); ++i)
    if (sent_tokens[i] == seed_spec.tokens) {
      seed_idx = int(i);
      break;
    }
  const treeio::DepTree& tree = example.sentences[size_t(seed_idx)];

  const std::vector<int> para_ids = to_ids(victim.vocab, res.paragraph_tokens);
  res.pred_before_label = victims::cls_predict(victim, para_ids);

  autoenc::NodeStates states = autoenc::encode(tree, ae);
  autoenc::LatentCode code = autoenc::make_latent(states, tree, cfg.mode);

  attack::AttackContext ctx;
  ctx.cls_victim = &victim;
  ctx.paragraph_ids = para_ids;

  attack::AttackTarget target;
  target.task = attack::Task::Classification;
  target.target_class = res.target_class;

  // Evaluates one perturbation candidate end to end on the discrete path
  // and records the outcome.
  auto evaluate = [&](const std::vector<Vec>& zs) {
    autoenc::LatentCode perturbed = code;
    for (size_t i = 0; i < perturbed.payload.size(); ++i)
      for (size_t k = 0; k < perturbed.payload[i].size(); ++k)
        perturbed.payload[i][k] += zs[i][k];
    autoenc::HardDecode dec = autoenc::decode_hard(perturbed, tree, ae);
    res.adv_tokens = dec.tokens(ae);
    const std::vector<int> adv_ids = to_ids(victim.vocab, res.adv_tokens);
    const std::vector<int> full = attack::place_tokens(adv_ids, para_ids, cfg_local.placement);
    res.pred_after_label = victims::cls_predict(victim, full);
    res.success_targeted = res.pred_after_label == res.target_class;
    res.success_untargeted = res.pred_after_label != res.gold_label;
    return res.success_targeted;
  };

  std::vector<Vec> zstar;
  bool first_round = true;
  for (int round = 1; round <= cfg.outer_max; ++round) {
    res.outer_iterations = round;
    // The relaxed objective can pass through a working discrete decode and
    // move on, so candidates are probed during the descent as well.
    bool snap_found = false;
    std::vector<Vec> snap;
    attack::StepObserver observer = [&](int step, const std::vector<Vec>& zs) {
      if (snap_found || step % 5 != 4) return;
      if (evaluate(zs)) {
        snap_found = true;
        snap = zs;
      }
    };
    attack::OptimizeResult opt = attack::optimize(code, tree, ae, ctx, target, cfg_local,
                                                  first_round ? nullptr : &zstar, observer);
    first_round = false;
    zstar = snap_found ? snap : opt.zstar;
    if (cfg.save_trace)
      res.trace.insert(res.trace.end(), opt.trace.begin(), opt.trace.end());
    if (evaluate(zstar)) break;
  }
  res.adv_paragraph_tokens = place_strings(res.adv_tokens, res.paragraph_tokens,
                                           cfg_local.placement);
  if (!res.success_targeted)
    res.failure_reason = res.success_untargeted
                             ? "budget exhausted before the targeted class was reached "
                               "(untargeted flip achieved)"
                             : "budget exhausted without changing the prediction";
  res.wall_clock_s = now_seconds() - t_start;
  return res;
}

namespace {

// Replace seed tokens that collide with the answer sentence's content
// words by embedding neighbours, so the contradiction filter starts clean.
void decollide(seedgen::SeedSpec& seed, const std::vector<std::string>& answer_sentence,
               const treeio::EmbeddingTable* table, const Stopwords& sw, bool skip_span) {
  const auto blocked_vec = content_words(answer_sentence, sw);
  std::unordered_set<std::string> blocked(blocked_vec.begin(), blocked_vec.end());
  for (int i = 0; i < int(seed.tokens.size()); ++i) {
    if (skip_span && i >= seed.answer_start && i <= seed.answer_end) continue;
    std::string low = lower(seed.tokens[size_t(i)]);
    if (!blocked.count(low)) continue;
    bool replaced = false;
    if (table && table->contains(low)) {
      for (const std::string& cand : treeio::nearest_neighbors(low, *table, 5)) {
        if (!blocked.count(cand)) {
          seed.tokens[size_t(i)] = cand;
          replaced = true;
          break;
        }
      }
    }
    if (!replaced)
      seed.warnings.push_back("seed token '" + low + "' collides with the answer sentence");
  }
}

}  // namespace

AttackResult attack_qa(const QAExample& example, const victims::SpanQAModel& victim,
                       const autoenc::AutoencoderParams& ae, const attack::AttackConfig& cfg,
                       const PipelineOptions& opts, uint64_t seed) {
  const double t_start = now_seconds();
  std::mt19937_64 rng(mix_seed(seed, "attack-qa-" + example.id));

  AttackResult res;
  res.id = example.id;
  res.task = "qa";
  res.mode = autoenc::to_string(cfg.mode);
  res.qa_target_mode = attack::to_string(opts.qa_mode);
  res.gold_answer = example.answer_text;
  res.paragraph_tokens = example.paragraph_tokens();
  res.sentence_lens = example.sentence_lens();
  res.question_tokens = example.question;
  res.answer_sentence_index = example.answer_sentence;

  if (opts.qa_mode == attack::QAMode::Answer && opts.targeted_answer.empty())
    throw ConfigError("answer-targeted attack requires a targeted answer");

  attack::AttackConfig cfg_local = cfg;
  cfg_local.placement = attack::Placement{attack::Placement::Append, 0};
  if (opts.qa_mode == attack::QAMode::Answer) {
    cfg_local.g1 = 0.0;
    cfg_local.g2 = 1.0;
  } else {
    cfg_local.g1 = 1.0;
    cfg_local.g2 = 0.0;
  }
  res.placement = placement_name(cfg_local.placement);

  const std::vector<int> para_ids = to_ids(victim.vocab, res.paragraph_tokens);
  const std::vector<int> q_ids = to_ids(victim.vocab, example.question);
  {
    auto [s, e] = victims::qa_predict(victim, para_ids, q_ids);
    res.pred_before_span = SpanPred{s, e, join_span(res.paragraph_tokens, s, e)};
  }

  // The sentence holding the model's current prediction seeds the
  // answer-based strategies; the gold answer sentence guards the filter.
  const std::vector<std::string> answer_sentence_tokens =
      example.sentences[size_t(example.answer_sentence)].surface_tokens();

  int pred_sent = 0, pred_local_start = 0, pred_local_end = 0;
  {
    int off = 0;
    for (size_t si = 0; si < example.sentences.size(); ++si) {
      const int len = example.sentences[si].size();
      if (res.pred_before_span.start < off + len) {
        pred_sent = int(si);
        pred_local_start = std::max(0, res.pred_before_span.start - off);
        pred_local_end = std::min(len - 1, res.pred_before_span.end - off);
        break;
      }
      off += len;
    }
  }

  // Fake answer: the targeted answer in answer mode, otherwise the model's
  // predicted answer with each token moved to its nearest embedding neighbour.
  std::vector<std::string> fake_answer;
  if (opts.qa_mode == attack::QAMode::Answer) {
    fake_answer = opts.targeted_answer;
  } else {
    // Prefer substitutes that appear nowhere in the paragraph, so the
    // targeted span is the only place the fake answer can be found.
    std::unordered_set<std::string> in_paragraph;
    for (const std::string& t : res.paragraph_tokens) in_paragraph.insert(lower(t));
    const auto pred_sentence_tokens =
        example.sentences[size_t(pred_sent)].surface_tokens();
    for (int i = pred_local_start; i <= pred_local_end; ++i) {
      const std::string w = lower(pred_sentence_tokens[size_t(i)]);
      std::string sub = w;
      if (opts.embeddings && opts.embeddings->contains(w)) {
        const auto nn = treeio::nearest_neighbors(w, *opts.embeddings, 8);
        for (const std::string& cand : nn)
          if (!in_paragraph.count(cand)) {
            sub = cand;
            break;
          }
        if (sub == w && !nn.empty()) sub = nn[0];
      }
      fake_answer.push_back(sub);
    }
  }
  if (fake_answer.empty()) fake_answer.push_back("something");

  seedgen::SeedSpec seed_spec;
  if (opts.qa_strategy == "question-based") {
    seed_spec = seedgen::question_to_statement(example.question, fake_answer, opts.rules);
  } else if (opts.qa_strategy == "answer-based") {
    const auto pred_sentence_tokens = example.sentences[size_t(pred_sent)].surface_tokens();
    if (opts.qa_mode == attack::QAMode::Answer) {
      seed_spec = seedgen::answer_based_seed(pred_sentence_tokens, pred_local_start,
                                             pred_local_end, *opts.embeddings, &fake_answer);
    } else {
      if (!opts.embeddings)
        throw ConfigError("answer-based seeds need an embedding table");
      seed_spec = seedgen::answer_based_seed(pred_sentence_tokens, pred_local_start,
                                             pred_local_end, *opts.embeddings, nullptr);
    }
  } else if (opts.qa_strategy == "random-sentence") {
    std::vector<std::vector<std::string>> pool;
    for (size_t si = 0; si < example.sentences.size(); ++si)
      if (int(si) != example.answer_sentence)
        pool.push_back(example.sentences[si].surface_tokens());
    if (pool.empty()) pool.push_back(example.sentences[0].surface_tokens());
    seedgen::SeedSpec base = seedgen::seed_cls(pool, rng);
    seed_spec.strategy = "random-sentence";
    seed_spec.tokens = base.tokens;
    if (!seed_spec.tokens.empty() && all_punct(seed_spec.tokens.back()))
      seed_spec.tokens.pop_back();
    seed_spec.answer_start = int(seed_spec.tokens.size());
    seed_spec.tokens.insert(seed_spec.tokens.end(), fake_answer.begin(), fake_answer.end());
    seed_spec.answer_end = int(seed_spec.tokens.size()) - 1;
    seed_spec.tokens.push_back(".");
  } else {
    throw ConfigError("unknown qa seed strategy: " + opts.qa_strategy);
  }
  res.strategy = seed_spec.strategy;

  decollide(seed_spec, answer_sentence_tokens, opts.embeddings, opts.stopwords,
            opts.qa_mode == attack::QAMode::Answer);

  res.targeted_answer = join(fake_answer, " ");

  const treeio::DepTree tree =
      seedgen::statement_tree(seed_spec.tokens, seed_spec.answer_start, seed_spec.answer_end);
  autoenc::NodeStates states = autoenc::encode(tree, ae);
  autoenc::LatentCode code = autoenc::make_latent(states, tree, cfg.mode);

  attack::AttackContext ctx;
  ctx.qa_victim = &victim;
  ctx.paragraph_ids = para_ids;
  ctx.question_ids = q_ids;
  // Keeping the protected sentence's content words out of the decode makes
  // the iterate-until-disjoint loop converge instead of circling back into
  // the filter.
  for (const std::string& w : content_words(answer_sentence_tokens, opts.stopwords)) {
    const int id = ae.vocab.id(w);
    if (id > treeio::Vocab::kUnk) ctx.banned_token_ids.push_back(id);
  }

  attack::AttackTarget target;
  target.task = attack::Task::QA;
  target.qa_mode = opts.qa_mode;
  target.gate_start = seed_spec.answer_start;
  target.gate_end = seed_spec.answer_end;
  target.t1 = int(para_ids.size()) + seed_spec.answer_start;
  target.t2 = int(para_ids.size()) + seed_spec.answer_end;
  res.t1 = target.t1;
  res.t2 = target.t2;
  for (const std::string& t : fake_answer) target.answer_ids.push_back(victim.vocab.id(lower(t)));
  if (opts.qa_mode == attack::QAMode::Position) target.gate_start = target.gate_end = -1;

  const std::string gold_norm = normalize_answer(example.answer_text);

  bool last_filter_failed = false;
  auto evaluate = [&](const std::vector<Vec>& zs) {
    autoenc::LatentCode perturbed = code;
    for (size_t i = 0; i < perturbed.payload.size(); ++i)
      for (size_t k = 0; k < perturbed.payload[i].size(); ++k)
        perturbed.payload[i][k] += zs[i][k];
    autoenc::HardDecode dec = autoenc::decode_hard(
        perturbed, tree, ae,
        ctx.banned_token_ids.empty() ? nullptr : &ctx.banned_token_ids);
    std::vector<int> adv_ids = dec.ids;
    if (opts.qa_mode == attack::QAMode::Answer)
      attack::apply_gate_hard(adv_ids, target.answer_ids, seed_spec.answer_start,
                              seed_spec.answer_end, cfg_local.g1, cfg_local.g2);
    res.adv_tokens.clear();
    for (int id : adv_ids) res.adv_tokens.push_back(ae.vocab.word(id));

    const std::vector<int> adv_victim_ids = to_ids(victim.vocab, res.adv_tokens);
    const std::vector<int> full =
        attack::place_tokens(adv_victim_ids, para_ids, cfg_local.placement);
    auto [s, e] = victims::qa_predict(victim, full, q_ids);
    std::vector<std::string> full_tokens = res.paragraph_tokens;
    full_tokens.insert(full_tokens.end(), res.adv_tokens.begin(), res.adv_tokens.end());
    res.pred_after_span = SpanPred{s, e, join_span(full_tokens, s, e)};

    const std::string pred_norm = normalize_answer(res.pred_after_span.text);
    bool targeted_ok = false;
    if (opts.qa_mode == attack::QAMode::Position)
      targeted_ok = (s == target.t1 && e == target.t2);
    else
      targeted_ok = (pred_norm == normalize_answer(res.targeted_answer));
    res.success_untargeted = pred_norm != gold_norm;

    // Success is only declared once the decoded sentence is compatible
    // with the protected answer sentence.
    FilterResult filter =
        contradiction_filter(res.adv_tokens, answer_sentence_tokens, opts.stopwords);
    res.success_targeted = targeted_ok && filter.pass;
    last_filter_failed = !filter.pass;
    if (!filter.pass)
      res.failure_reason = "contradiction filter overlap: {" + join(filter.overlap, ", ") + "}";
    else if (!targeted_ok)
      res.failure_reason = "targeted span not reached";
    return res.success_targeted;
  };

  std::vector<Vec> zstar;
  bool first_round = true;
  for (int round = 1; round <= cfg.outer_max; ++round) {
    res.outer_iterations = round;
    bool snap_found = false;
    std::vector<Vec> snap;
    attack::StepObserver observer = [&](int step, const std::vector<Vec>& zs) {
      if (snap_found || step % 5 != 4) return;
      if (evaluate(zs)) {
        snap_found = true;
        snap = zs;
      }
    };
    attack::OptimizeResult opt = attack::optimize(code, tree, ae, ctx, target, cfg_local,
                                                  first_round ? nullptr : &zstar, observer);
    first_round = false;
    zstar = snap_found ? snap : opt.zstar;
    if (cfg.save_trace)
      res.trace.insert(res.trace.end(), opt.trace.begin(), opt.trace.end());
    if (evaluate(zstar)) break;
    if (cfg.restart_on_filter_fail && last_filter_failed)
      for (Vec& v : zstar) std::fill(v.begin(), v.end(), 0.0);
  }
  if (res.success_targeted) res.failure_reason.clear();

  // Position mode reports the final content at the targeted span as the
  // fake answer it ended up asserting.
  if (opts.qa_mode == attack::QAMode::Position && seed_spec.answer_start >= 0 &&
      seed_spec.answer_end < int(res.adv_tokens.size())) {
    std::vector<std::string> final_fake(res.adv_tokens.begin() + seed_spec.answer_start,
                                        res.adv_tokens.begin() + seed_spec.answer_end + 1);
    res.targeted_answer = join(final_fake, " ");
  }

  res.adv_paragraph_tokens =
      place_strings(res.adv_tokens, res.paragraph_tokens, cfg_local.placement);
  res.wall_clock_s = now_seconds() - t_start;
  return res;
}

}  // namespace treeperturb::pipeline
