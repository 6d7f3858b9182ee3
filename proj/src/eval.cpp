#include "treeperturb/eval.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

namespace treeperturb::eval {

std::string squad_normalize(const std::string& s) {
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

int squad_em(const std::string& prediction, const std::vector<std::string>& golds) {
  const std::string p = squad_normalize(prediction);
  for (const std::string& g : golds)
    if (p == squad_normalize(g)) return 1;
  return 0;
}

namespace {
double f1_single(const std::string& pred_norm, const std::string& gold_norm) {
  const std::vector<std::string> p = split_ws(pred_norm);
  const std::vector<std::string> g = split_ws(gold_norm);
  if (p.empty() || g.empty()) return p == g ? 1.0 : 0.0;
  std::map<std::string, int> counts;
  for (const std::string& t : g) counts[t]++;
  int same = 0;
  for (const std::string& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      ++same;
      --it->second;
    }
  }
  if (same == 0) return 0.0;
  const double precision = double(same) / double(p.size());
  const double recall = double(same) / double(g.size());
  return 2.0 * precision * recall / (precision + recall);
}
}  // namespace

double squad_f1(const std::string& prediction, const std::vector<std::string>& golds) {
  const std::string p = squad_normalize(prediction);
  double best = 0.0;
  for (const std::string& g : golds) best = std::max(best, f1_single(p, squad_normalize(g)));
  return best;
}

std::pair<double, double> success_rates(const std::vector<pipeline::AttackResult>& results) {
  if (results.empty()) throw DataError("success_rates: no results");
  double t = 0.0, u = 0.0;
  for (const auto& r : results) {
    t += r.success_targeted ? 1.0 : 0.0;
    u += r.success_untargeted ? 1.0 : 0.0;
  }
  return {t / double(results.size()), u / double(results.size())};
}

Json ScoreReport::to_json() const {
  Json j;
  j["task"] = task;
  j["model_id"] = model_id;
  j["count"] = count;
  j["targeted_rate"] = targeted_rate;
  j["untargeted_rate"] = untargeted_rate;
  if (task == "qa") {
    j["em"] = em;
    j["f1"] = f1;
    j["targeted_em"] = targeted_em;
    j["targeted_f1"] = targeted_f1;
  }
  j["unk_tokens"] = unk_tokens;
  return j;
}

std::string ScoreReport::to_table() const {
  std::ostringstream out;
  char buf[160];
  out << "model " << model_id << "  task " << task << "  n=" << count << "\n";
  std::snprintf(buf, sizeof(buf), "  %-10s %8.3f\n", "target", targeted_rate);
  out << buf;
  std::snprintf(buf, sizeof(buf), "  %-10s %8.3f\n", "untarget", untargeted_rate);
  out << buf;
  if (task == "qa") {
    std::snprintf(buf, sizeof(buf), "  %-10s %8.1f\n", "EM", em);
    out << buf;
    std::snprintf(buf, sizeof(buf), "  %-10s %8.1f\n", "F1", f1);
    out << buf;
    std::snprintf(buf, sizeof(buf), "  %-10s %8.1f\n", "target EM", targeted_em);
    out << buf;
    std::snprintf(buf, sizeof(buf), "  %-10s %8.1f\n", "target F1", targeted_f1);
    out << buf;
  }
  return out.str();
}

namespace {

struct QAOutcome {
  bool targeted = false;
  bool untargeted = false;
  double em = 0.0, f1 = 0.0, tem = 0.0, tf1 = 0.0;
};

ScoreReport aggregate_cls(const std::string& model_id, int count, int targeted, int untargeted,
                          int unks) {
  ScoreReport rep;
  rep.task = "cls";
  rep.model_id = model_id;
  rep.count = count;
  rep.targeted_rate = count ? double(targeted) / count : 0.0;
  rep.untargeted_rate = count ? double(untargeted) / count : 0.0;
  rep.unk_tokens = unks;
  return rep;
}

ScoreReport aggregate_qa(const std::string& model_id, const std::vector<QAOutcome>& outs,
                         int unks) {
  ScoreReport rep;
  rep.task = "qa";
  rep.model_id = model_id;
  rep.count = int(outs.size());
  for (const QAOutcome& o : outs) {
    rep.targeted_rate += o.targeted ? 1.0 : 0.0;
    rep.untargeted_rate += o.untargeted ? 1.0 : 0.0;
    rep.em += o.em;
    rep.f1 += o.f1;
    rep.targeted_em += o.tem;
    rep.targeted_f1 += o.tf1;
  }
  if (!outs.empty()) {
    const double n = double(outs.size());
    rep.targeted_rate /= n;
    rep.untargeted_rate /= n;
    rep.em = 100.0 * rep.em / n;
    rep.f1 = 100.0 * rep.f1 / n;
    rep.targeted_em = 100.0 * rep.targeted_em / n;
    rep.targeted_f1 = 100.0 * rep.targeted_f1 / n;
  }
  rep.unk_tokens = unks;
  return rep;
}

std::vector<int> ids_with_unks(const treeio::Vocab& vocab,
                               const std::vector<std::string>& toks, int* unks) {
  std::vector<int> ids;
  ids.reserve(toks.size());
  for (const std::string& t : toks) {
    const int id = vocab.id(lower(t));
    if (id == treeio::Vocab::kUnk && unks) ++*unks;
    ids.push_back(id);
  }
  return ids;
}

}  // namespace

ScoreReport score_results(const std::vector<pipeline::AttackResult>& results,
                          const std::string& model_id) {
  if (results.empty()) throw DataError("score_results: no results");
  if (results[0].task == "cls") {
    int t = 0, u = 0;
    for (const auto& r : results) {
      t += r.success_targeted ? 1 : 0;
      u += r.success_untargeted ? 1 : 0;
    }
    return aggregate_cls(model_id, int(results.size()), t, u, 0);
  }
  std::vector<QAOutcome> outs;
  for (const auto& r : results) {
    QAOutcome o;
    o.targeted = r.success_targeted;
    o.untargeted = r.success_untargeted;
    o.em = squad_em(r.pred_after_span.text, {r.gold_answer});
    o.f1 = squad_f1(r.pred_after_span.text, {r.gold_answer});
    o.tem = squad_em(r.pred_after_span.text, {r.targeted_answer});
    o.tf1 = squad_f1(r.pred_after_span.text, {r.targeted_answer});
    outs.push_back(o);
  }
  return aggregate_qa(model_id, outs, 0);
}

ScoreReport transfer_eval(const std::vector<pipeline::AttackResult>& results,
                          const victims::SentimentModel& blackbox) {
  if (results.empty()) throw DataError("transfer_eval: no results");
  int t = 0, u = 0, unks = 0;
  for (const auto& r : results) {
    if (r.task != "cls") throw DataError("transfer_eval: expected classification results");
    const std::vector<int> ids = ids_with_unks(blackbox.vocab, r.adv_paragraph_tokens, &unks);
    const int pred = victims::cls_predict(blackbox, ids);
    t += (pred == r.target_class) ? 1 : 0;
    u += (pred != r.gold_label) ? 1 : 0;
  }
  return aggregate_cls(blackbox.model_id, int(results.size()), t, u, unks);
}

ScoreReport transfer_eval(const std::vector<pipeline::AttackResult>& results,
                          const victims::SpanQAModel& blackbox) {
  if (results.empty()) throw DataError("transfer_eval: no results");
  std::vector<QAOutcome> outs;
  int unks = 0;
  for (const auto& r : results) {
    if (r.task != "qa") throw DataError("transfer_eval: expected qa results");
    const std::vector<int> ids = ids_with_unks(blackbox.vocab, r.adv_paragraph_tokens, &unks);
    const std::vector<int> q = ids_with_unks(blackbox.vocab, r.question_tokens, &unks);
    auto [s, e] = victims::qa_predict(blackbox, ids, q);
    std::vector<std::string> span;
    for (int i = s; i <= e && i < int(r.adv_paragraph_tokens.size()); ++i)
      span.push_back(r.adv_paragraph_tokens[size_t(i)]);
    const std::string pred = join(span, " ");
    QAOutcome o;
    o.targeted = (r.qa_target_mode == "position")
                     ? (s == r.t1 && e == r.t2)
                     : (squad_normalize(pred) == squad_normalize(r.targeted_answer));
    o.untargeted = squad_normalize(pred) != squad_normalize(r.gold_answer);
    o.em = squad_em(pred, {r.gold_answer});
    o.f1 = squad_f1(pred, {r.gold_answer});
    o.tem = squad_em(pred, {r.targeted_answer});
    o.tf1 = squad_f1(pred, {r.targeted_answer});
    outs.push_back(o);
  }
  return aggregate_qa(blackbox.model_id, outs, unks);
}

namespace {

// Token index where the adversarial sentence lands for a given position
// label, along with the rebuilt paragraph.
std::vector<std::string> reinsert(const pipeline::AttackResult& r, const std::string& position,
                                  int* adv_at, bool* collapsed) {
  const int n_sent = int(r.sentence_lens.size());
  int sent_boundary = 0;  // number of leading sentences before the insertion
  if (position == "front") {
    sent_boundary = 0;
  } else if (position == "mid") {
    sent_boundary = (n_sent + 1) / 2;
    if (n_sent <= 1) {
      sent_boundary = 0;
      if (collapsed) *collapsed = true;
    }
  } else {
    sent_boundary = n_sent;
  }
  int at = 0;
  for (int i = 0; i < sent_boundary; ++i) at += r.sentence_lens[size_t(i)];
  std::vector<std::string> out(r.paragraph_tokens.begin(), r.paragraph_tokens.begin() + at);
  out.insert(out.end(), r.adv_tokens.begin(), r.adv_tokens.end());
  out.insert(out.end(), r.paragraph_tokens.begin() + at, r.paragraph_tokens.end());
  if (adv_at) *adv_at = at;
  return out;
}

}  // namespace

Json AblationReport::to_json() const {
  Json j;
  for (const auto& [pos, rep] : by_position) j[pos] = rep.to_json();
  j["best_position"] = best_position;
  j["collapsed_mid"] = collapsed_mid;
  return j;
}

std::string AblationReport::to_table() const {
  std::ostringstream out;
  for (const auto& [pos, rep] : by_position) {
    out << "[" << pos << "]\n" << rep.to_table();
  }
  out << "best position: " << best_position << "\n";
  if (collapsed_mid)
    out << "note: " << collapsed_mid << " single-sentence paragraphs collapse mid to front\n";
  return out.str();
}

AblationReport position_ablation(const std::vector<pipeline::AttackResult>& results,
                                 const victims::SentimentModel& model) {
  if (results.empty()) throw DataError("position_ablation: no results");
  AblationReport rep;
  for (const std::string pos : {"front", "mid", "back"}) {
    int t = 0, u = 0, collapsed = 0;
    for (const auto& r : results) {
      bool c = false;
      const auto toks = reinsert(r, pos, nullptr, &c);
      collapsed += c ? 1 : 0;
      const int pred = victims::cls_predict(model, ids_with_unks(model.vocab, toks, nullptr));
      t += (pred == r.target_class) ? 1 : 0;
      u += (pred != r.gold_label) ? 1 : 0;
    }
    rep.by_position[pos] = aggregate_cls(model.model_id, int(results.size()), t, u, 0);
    if (pos == "mid") rep.collapsed_mid = collapsed;
  }
  double best = -1.0;
  for (const auto& [pos, sc] : rep.by_position)
    if (sc.targeted_rate > best) {
      best = sc.targeted_rate;
      rep.best_position = pos;
    }
  return rep;
}

AblationReport position_ablation(const std::vector<pipeline::AttackResult>& results,
                                 const victims::SpanQAModel& model) {
  if (results.empty()) throw DataError("position_ablation: no results");
  AblationReport rep;
  for (const std::string pos : {"front", "mid", "back"}) {
    std::vector<QAOutcome> outs;
    int collapsed = 0;
    for (const auto& r : results) {
      bool c = false;
      int adv_at = 0;
      const auto toks = reinsert(r, pos, &adv_at, &c);
      collapsed += c ? 1 : 0;
      const std::vector<int> ids = ids_with_unks(model.vocab, toks, nullptr);
      const std::vector<int> q = ids_with_unks(model.vocab, r.question_tokens, nullptr);
      auto [s, e] = victims::qa_predict(model, ids, q);
      std::vector<std::string> span;
      for (int i = s; i <= e && i < int(toks.size()); ++i) span.push_back(toks[size_t(i)]);
      const std::string pred = join(span, " ");
      // Targeted positions move with the insertion point.
      const int span_in_adv_start = r.t1 - int(r.paragraph_tokens.size());
      QAOutcome o;
      if (r.qa_target_mode == "position" && span_in_adv_start >= 0) {
        const int nt1 = adv_at + span_in_adv_start;
        const int nt2 = adv_at + (r.t2 - int(r.paragraph_tokens.size()));
        o.targeted = (s == nt1 && e == nt2);
      } else {
        o.targeted = squad_normalize(pred) == squad_normalize(r.targeted_answer);
      }
      o.untargeted = squad_normalize(pred) != squad_normalize(r.gold_answer);
      o.em = squad_em(pred, {r.gold_answer});
      o.f1 = squad_f1(pred, {r.gold_answer});
      o.tem = squad_em(pred, {r.targeted_answer});
      o.tf1 = squad_f1(pred, {r.targeted_answer});
      outs.push_back(o);
    }
    rep.by_position[pos] = aggregate_qa(model.model_id, outs, 0);
    if (pos == "mid") rep.collapsed_mid = collapsed;
  }
  double best = -1.0;
  for (const auto& [pos, sc] : rep.by_position)
    if (sc.targeted_rate > best) {
      best = sc.targeted_rate;
      rep.best_position = pos;
    }
  return rep;
}

}  // namespace treeperturb::eval
