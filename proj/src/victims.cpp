#include "treeperturb/victims.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "treeperturb/checkpoint.hpp"
#include "treeperturb/kernels.hpp"

namespace treeperturb::victims {

using Json = nlohmann::ordered_json;

Vec one_hot(int id, int n) {
  Vec v(size_t(n), 0.0);
  v[size_t(id)] = 1.0;
  return v;
}

SoftText SoftText::from_ids(const std::vector<int>& ids, int vocab_size) {
  SoftText t;
  t.rows.reserve(ids.size());
  for (int id : ids) t.rows.push_back(one_hot(id, vocab_size));
  return t;
}

namespace {

void init_params(const std::vector<const ad::Param*>& ps, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (const ad::Param* cp : ps) {
    auto* p = const_cast<ad::Param*>(cp);
    for (double& x : p->w.a) x = u(rng);
    p->zero_grad();
  }
}

uint64_t params_hash(const std::vector<const ad::Param*>& ps) {
  uint64_t h = 1469598103934665603ull;
  for (const ad::Param* p : ps)
    h = fnv1a(p->w.a.data(), p->w.a.size() * sizeof(double), h);
  return h;
}

int argmax_lowest(const Vec& v) {
  int best = 0;
  for (int i = 1; i < int(v.size()); ++i)
    if (v[size_t(i)] > v[size_t(best)]) best = i;
  return best;
}

// Plain helpers mirroring the tape ops element for element, so one-hot
// soft passes and hard passes agree bitwise.
Vec plain_affine(const ad::Param& w, const ad::Param& b, const Vec& x) {
  Vec out(size_t(w.rows()), 0.0);
  kern::matvec(w.w, x.data(), out.data());
  for (int r = 0; r < w.rows(); ++r) out[size_t(r)] += b.w.a[size_t(r)];
  return out;
}

Vec plain_tanh(Vec v) {
  for (double& x : v) x = std::tanh(x);
  return v;
}

Vec plain_sigmoid(Vec v) {
  for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
  return v;
}

Vec embed_row(const ad::Param& emb, int id) {
  const double* r = emb.w.row(id);
  return Vec(r, r + emb.cols());
}

// Plain LSTM step matching the tape layout: inp = [e; h_prev].
void plain_lstm_step(const ad::Param& wi, const ad::Param& bi, const ad::Param& wf,
                     const ad::Param& bf, const ad::Param& wo, const ad::Param& bo,
                     const ad::Param& wu, const ad::Param& bu, const Vec& e, Vec& h, Vec& c) {
  Vec inp(e);
  inp.insert(inp.end(), h.begin(), h.end());
  const Vec gi = plain_sigmoid(plain_affine(wi, bi, inp));
  const Vec gf = plain_sigmoid(plain_affine(wf, bf, inp));
  const Vec go = plain_sigmoid(plain_affine(wo, bo, inp));
  const Vec gu = plain_tanh(plain_affine(wu, bu, inp));
  for (size_t j = 0; j < h.size(); ++j) {
    c[j] = gf[j] * c[j] + gi[j] * gu[j];
    h[j] = go[j] * std::tanh(c[j]);
  }
}

ad::Var lstm_step_tape(ad::Tape& tape, const ad::Param& wi, const ad::Param& bi,
                       const ad::Param& wf, const ad::Param& bf, const ad::Param& wo,
                       const ad::Param& bo, const ad::Param& wu, const ad::Param& bu,
                       ad::Var e, ad::Var h_prev, ad::Var c_prev, ad::Var* c_out) {
  ad::Var inp = tape.concat({e, h_prev});
  ad::Var gi = tape.sigmoid(tape.affine(wi, bi, inp));
  ad::Var gf = tape.sigmoid(tape.affine(wf, bf, inp));
  ad::Var go = tape.sigmoid(tape.affine(wo, bo, inp));
  ad::Var gu = tape.tanh_(tape.affine(wu, bu, inp));
  ad::Var c = tape.add(tape.mul(gf, c_prev), tape.mul(gi, gu));
  *c_out = c;
  return tape.mul(go, tape.tanh_(c));
}

// Attention pooling over embedded positions: softmax(v^T tanh(W e + b)).
ad::Var attention_pool_tape(ad::Tape& tape, const ad::Param& w, const ad::Param& b,
                            const ad::Param& v, const std::vector<ad::Var>& embs) {
  std::vector<ad::Var> scores;
  scores.reserve(embs.size());
  for (ad::Var e : embs) scores.push_back(tape.matvec(v, tape.tanh_(tape.affine(w, b, e))));
  ad::Var alpha = tape.softmax_t(tape.concat(scores), 1.0);
  ad::Var pooled = tape.smul(embs[0], tape.pick(alpha, 0));
  for (size_t i = 1; i < embs.size(); ++i)
    pooled = tape.add(pooled, tape.smul(embs[size_t(i)], tape.pick(alpha, int(i))));
  return pooled;
}

Vec attention_pool_plain(const ad::Param& w, const ad::Param& b, const ad::Param& v,
                         const std::vector<Vec>& embs) {
  Vec scores(embs.size());
  for (size_t i = 0; i < embs.size(); ++i) {
    const Vec t = plain_tanh(plain_affine(w, b, embs[i]));
    Vec s(1);
    kern::matvec(v.w, t.data(), s.data());
    scores[i] = s[0];
  }
  Vec alpha(embs.size());
  kern::softmax(scores.data(), int(scores.size()), 1.0, alpha.data());
  Vec pooled(embs[0].size(), 0.0);
  for (size_t i = 0; i < embs.size(); ++i) {
    Vec scaled(embs[i]);
    for (double& x : scaled) x *= alpha[i];
    for (size_t j = 0; j < pooled.size(); ++j)
      pooled[j] = (i == 0) ? scaled[j] : pooled[j] + scaled[j];
  }
  return pooled;
}

}  // namespace

// ---------------------------------------------------------------------------
// Sentiment model

SentimentModel SentimentModel::make(const std::string& arch, int num_classes, int emb_dim,
                                    int hidden, treeio::Vocab vocab) {
  if (arch != "attn" && arch != "recurrent")
    throw ConfigError("unknown sentiment arch: " + arch);
  SentimentModel m;
  m.arch = arch;
  m.num_classes = num_classes;
  m.emb_dim = emb_dim;
  m.hidden = hidden;
  m.vocab = std::move(vocab);
  const int V = m.vocab.size();
  m.emb = ad::Param("emb", V, emb_dim);
  if (arch == "attn") {
    m.att_w = ad::Param("att_w", hidden, emb_dim);
    m.att_b = ad::Param("att_b", 1, hidden);
    m.att_v = ad::Param("att_v", 1, hidden);
    m.head_w = ad::Param("head_w", num_classes, emb_dim);
  } else {
    m.lw_i = ad::Param("lw_i", hidden, emb_dim + hidden);
    m.lb_i = ad::Param("lb_i", 1, hidden);
    m.lw_f = ad::Param("lw_f", hidden, emb_dim + hidden);
    m.lb_f = ad::Param("lb_f", 1, hidden);
    m.lw_o = ad::Param("lw_o", hidden, emb_dim + hidden);
    m.lb_o = ad::Param("lb_o", 1, hidden);
    m.lw_u = ad::Param("lw_u", hidden, emb_dim + hidden);
    m.lb_u = ad::Param("lb_u", 1, hidden);
    m.head_w = ad::Param("head_w", num_classes, hidden);
  }
  m.head_b = ad::Param("head_b", 1, num_classes);
  return m;
}

std::vector<const ad::Param*> SentimentModel::all_params() const {
  if (arch == "attn") return {&emb, &att_w, &att_b, &att_v, &head_w, &head_b};
  return {&emb,  &lw_i, &lb_i, &lw_f,   &lb_f,   &lw_o, &lb_o,
          &lw_u, &lb_u, &head_w, &head_b};
}

void SentimentModel::init(std::mt19937_64& rng, double scale) {
  init_params(all_params(), rng, scale);
}

ad::Var cls_logits_tape(ad::Tape& tape, const SentimentModel& m,
                        const std::vector<ad::Var>& rows) {
  if (rows.empty()) throw DataError("cls_logits: empty input");
  std::vector<ad::Var> embs;
  embs.reserve(rows.size());
  for (ad::Var r : rows) embs.push_back(tape.mix_rows(m.emb, r));
  if (m.arch == "attn") {
    ad::Var pooled = attention_pool_tape(tape, m.att_w, m.att_b, m.att_v, embs);
    return tape.affine(m.head_w, m.head_b, pooled);
  }
  ad::Var h = tape.constant(Vec(size_t(m.hidden), 0.0));
  ad::Var c = tape.constant(Vec(size_t(m.hidden), 0.0));
  for (ad::Var e : embs)
    h = lstm_step_tape(tape, m.lw_i, m.lb_i, m.lw_f, m.lb_f, m.lw_o, m.lb_o, m.lw_u, m.lb_u, e,
                       h, c, &c);
  return tape.affine(m.head_w, m.head_b, h);
}

Vec cls_logits(const SentimentModel& m, const SoftText& input) {
  ad::Tape tape(false);
  std::vector<ad::Var> rows;
  rows.reserve(input.rows.size());
  for (const Vec& r : input.rows) {
    if (int(r.size()) != m.vocab.size()) throw DataError("cls_logits: row width != vocab");
    rows.push_back(tape.constant(r));
  }
  return tape.val(cls_logits_tape(tape, m, rows));
}

Vec cls_logits_hard(const SentimentModel& m, const std::vector<int>& ids) {
  if (ids.empty()) throw DataError("cls_logits: empty input");
  std::vector<Vec> embs;
  embs.reserve(ids.size());
  for (int id : ids) embs.push_back(embed_row(m.emb, id));
  if (m.arch == "attn") {
    const Vec pooled = attention_pool_plain(m.att_w, m.att_b, m.att_v, embs);
    return plain_affine(m.head_w, m.head_b, pooled);
  }
  Vec h(size_t(m.hidden), 0.0), c(size_t(m.hidden), 0.0);
  for (const Vec& e : embs)
    plain_lstm_step(m.lw_i, m.lb_i, m.lw_f, m.lb_f, m.lw_o, m.lb_o, m.lw_u, m.lb_u, e, h, c);
  return plain_affine(m.head_w, m.head_b, h);
}

int cls_predict(const SentimentModel& m, const std::vector<int>& ids) {
  return argmax_lowest(cls_logits_hard(m, ids));
}

// ---------------------------------------------------------------------------
// Span QA model

SpanQAModel SpanQAModel::make(const std::string& arch, int emb_dim, int hidden,
                              treeio::Vocab vocab) {
  if (arch != "window" && arch != "bilstm") throw ConfigError("unknown qa arch: " + arch);
  SpanQAModel m;
  m.arch = arch;
  m.emb_dim = emb_dim;
  m.hidden = hidden;
  m.vocab = std::move(vocab);
  const int V = m.vocab.size();
  m.emb = ad::Param("emb", V, emb_dim);
  m.qat_w = ad::Param("qat_w", hidden, emb_dim);
  m.qat_b = ad::Param("qat_b", 1, hidden);
  m.qat_v = ad::Param("qat_v", 1, hidden);
  m.q_w = ad::Param("q_w", hidden, emb_dim);
  m.q_b = ad::Param("q_b", 1, hidden);
  if (arch == "window") {
    m.win_w = ad::Param("win_w", hidden, 9 * emb_dim);
    m.win_b = ad::Param("win_b", 1, hidden);
  } else {
    auto mk = [&](const char* n) { return ad::Param(n, hidden, emb_dim + hidden); };
    auto mb = [&](const char* n) { return ad::Param(n, 1, hidden); };
    m.fw_i = mk("fw_i"); m.fb_i = mb("fb_i");
    m.fw_f = mk("fw_f"); m.fb_f = mb("fb_f");
    m.fw_o = mk("fw_o"); m.fb_o = mb("fb_o");
    m.fw_u = mk("fw_u"); m.fb_u = mb("fb_u");
    m.bw_i = mk("bw_i"); m.bb_i = mb("bb_i");
    m.bw_f = mk("bw_f"); m.bb_f = mb("bb_f");
    m.bw_o = mk("bw_o"); m.bb_o = mb("bb_o");
    m.bw_u = mk("bw_u"); m.bb_u = mb("bb_u");
  }
  const int P = m.para_dim();
  m.bil_start = ad::Param("bil_start", P, hidden);
  m.bil_end = ad::Param("bil_end", P, hidden);
  m.lin_start = ad::Param("lin_start", 1, P);
  m.lin_end = ad::Param("lin_end", 1, P);
  return m;
}

std::vector<const ad::Param*> SpanQAModel::all_params() const {
  std::vector<const ad::Param*> ps{&emb, &qat_w, &qat_b, &qat_v, &q_w, &q_b};
  if (arch == "window") {
    ps.push_back(&win_w);
    ps.push_back(&win_b);
  } else {
    for (const ad::Param* p : {&fw_i, &fb_i, &fw_f, &fb_f, &fw_o, &fb_o, &fw_u, &fb_u,
                               &bw_i, &bb_i, &bw_f, &bb_f, &bw_o, &bb_o, &bw_u, &bb_u})
      ps.push_back(p);
  }
  for (const ad::Param* p : {&bil_start, &bil_end, &lin_start, &lin_end}) ps.push_back(p);
  return ps;
}

void SpanQAModel::init(std::mt19937_64& rng, double scale) {
  init_params(all_params(), rng, scale);
}

namespace {

std::vector<ad::Var> para_features_tape(ad::Tape& tape, const SpanQAModel& m,
                                        const std::vector<ad::Var>& embs) {
  const int n = int(embs.size());
  std::vector<ad::Var> feats;
  feats.reserve(size_t(n));
  if (m.arch == "window") {
    ad::Var zero = tape.constant(Vec(size_t(m.emb_dim), 0.0));
    auto at = [&](int i) { return (i >= 0 && i < n) ? embs[size_t(i)] : zero; };
    for (int i = 0; i < n; ++i) {
      std::vector<ad::Var> window;
      for (int d = -4; d <= 4; ++d) window.push_back(d == 0 ? embs[size_t(i)] : at(i + d));
      feats.push_back(tape.tanh_(tape.affine(m.win_w, m.win_b, tape.concat(window))));
    }
    return feats;
  }
  std::vector<ad::Var> hf(size_t(n), ad::Var{}), hb(size_t(n), ad::Var{});
  ad::Var h = tape.constant(Vec(size_t(m.hidden), 0.0));
  ad::Var c = tape.constant(Vec(size_t(m.hidden), 0.0));
  for (int i = 0; i < n; ++i) {
    h = lstm_step_tape(tape, m.fw_i, m.fb_i, m.fw_f, m.fb_f, m.fw_o, m.fb_o, m.fw_u, m.fb_u,
                       embs[size_t(i)], h, c, &c);
    hf[size_t(i)] = h;
  }
  h = tape.constant(Vec(size_t(m.hidden), 0.0));
  c = tape.constant(Vec(size_t(m.hidden), 0.0));
  for (int i = n - 1; i >= 0; --i) {
    h = lstm_step_tape(tape, m.bw_i, m.bb_i, m.bw_f, m.bb_f, m.bw_o, m.bb_o, m.bw_u, m.bb_u,
                       embs[size_t(i)], h, c, &c);
    hb[size_t(i)] = h;
  }
  for (int i = 0; i < n; ++i) feats.push_back(tape.concat({hf[size_t(i)], hb[size_t(i)]}));
  return feats;
}

std::vector<Vec> para_features_plain(const SpanQAModel& m, const std::vector<Vec>& embs) {
  const int n = int(embs.size());
  std::vector<Vec> feats;
  feats.reserve(size_t(n));
  if (m.arch == "window") {
    const Vec zero(size_t(m.emb_dim), 0.0);
    auto at = [&](int i) -> const Vec& { return (i >= 0 && i < n) ? embs[size_t(i)] : zero; };
    for (int i = 0; i < n; ++i) {
      Vec win(at(i - 4));
      for (int d = -3; d <= 4; ++d) {
        const Vec& part = at(i + d);
        win.insert(win.end(), part.begin(), part.end());
      }
      feats.push_back(plain_tanh(plain_affine(m.win_w, m.win_b, win)));
    }
    return feats;
  }
  std::vector<Vec> hf(size_t(n), Vec{}), hb(size_t(n), Vec{});
  Vec h(size_t(m.hidden), 0.0), c(size_t(m.hidden), 0.0);
  for (int i = 0; i < n; ++i) {
    plain_lstm_step(m.fw_i, m.fb_i, m.fw_f, m.fb_f, m.fw_o, m.fb_o, m.fw_u, m.fb_u,
                    embs[size_t(i)], h, c);
    hf[size_t(i)] = h;
  }
  h.assign(size_t(m.hidden), 0.0);
  c.assign(size_t(m.hidden), 0.0);
  for (int i = n - 1; i >= 0; --i) {
    plain_lstm_step(m.bw_i, m.bb_i, m.bw_f, m.bb_f, m.bw_o, m.bb_o, m.bw_u, m.bb_u,
                    embs[size_t(i)], h, c);
    hb[size_t(i)] = h;
  }
  for (int i = 0; i < n; ++i) {
    Vec f(hf[size_t(i)]);
    f.insert(f.end(), hb[size_t(i)].begin(), hb[size_t(i)].end());
    feats.push_back(std::move(f));
  }
  return feats;
}

}  // namespace

std::pair<ad::Var, ad::Var> qa_logits_tape(ad::Tape& tape, const SpanQAModel& m,
                                           const std::vector<ad::Var>& para_rows,
                                           const std::vector<int>& question_ids) {
  if (para_rows.empty() || question_ids.empty()) throw DataError("qa_logits: empty input");
  std::vector<ad::Var> p_embs;
  p_embs.reserve(para_rows.size());
  for (ad::Var r : para_rows) p_embs.push_back(tape.mix_rows(m.emb, r));
  std::vector<ad::Var> q_embs;
  q_embs.reserve(question_ids.size());
  for (int id : question_ids) q_embs.push_back(tape.row(m.emb, id));

  ad::Var q = tape.tanh_(tape.affine(m.q_w, m.q_b, attention_pool_tape(tape, m.qat_w, m.qat_b, m.qat_v, q_embs)));
  std::vector<ad::Var> feats = para_features_tape(tape, m, p_embs);
  ad::Var bq_s = tape.matvec(m.bil_start, q);
  ad::Var bq_e = tape.matvec(m.bil_end, q);
  std::vector<ad::Var> z1, z2;
  z1.reserve(feats.size());
  z2.reserve(feats.size());
  for (ad::Var p : feats) {
    z1.push_back(tape.add(tape.dot(p, bq_s), tape.matvec(m.lin_start, p)));
    z2.push_back(tape.add(tape.dot(p, bq_e), tape.matvec(m.lin_end, p)));
  }
  return {tape.concat(z1), tape.concat(z2)};
}

std::pair<Vec, Vec> qa_logits(const SpanQAModel& m, const SoftText& paragraph,
                              const SoftText& question) {
  if (paragraph.rows.empty() || question.rows.empty()) throw DataError("qa_logits: empty input");
  // The question enters through its expected embeddings; soft question rows
  // are reduced here so the tape path (which takes hard question ids) and
  // this wrapper agree on one-hot inputs.
  ad::Tape tape(false);
  std::vector<ad::Var> p_rows;
  p_rows.reserve(paragraph.rows.size());
  for (const Vec& r : paragraph.rows) p_rows.push_back(tape.constant(r));

  std::vector<ad::Var> p_embs;
  for (ad::Var r : p_rows) p_embs.push_back(tape.mix_rows(m.emb, r));
  std::vector<ad::Var> q_embs;
  for (const Vec& r : question.rows) q_embs.push_back(tape.mix_rows(m.emb, tape.constant(r)));

  ad::Var q = tape.tanh_(tape.affine(m.q_w, m.q_b, attention_pool_tape(tape, m.qat_w, m.qat_b, m.qat_v, q_embs)));
  std::vector<ad::Var> feats = para_features_tape(tape, m, p_embs);
  ad::Var bq_s = tape.matvec(m.bil_start, q);
  ad::Var bq_e = tape.matvec(m.bil_end, q);
  std::vector<ad::Var> z1, z2;
  for (ad::Var p : feats) {
    z1.push_back(tape.add(tape.dot(p, bq_s), tape.matvec(m.lin_start, p)));
    z2.push_back(tape.add(tape.dot(p, bq_e), tape.matvec(m.lin_end, p)));
  }
  return {tape.val(tape.concat(z1)), tape.val(tape.concat(z2))};
}

std::pair<Vec, Vec> qa_logits_hard(const SpanQAModel& m, const std::vector<int>& para_ids,
                                   const std::vector<int>& question_ids) {
  if (para_ids.empty() || question_ids.empty()) throw DataError("qa_logits: empty input");
  std::vector<Vec> p_embs, q_embs;
  for (int id : para_ids) p_embs.push_back(embed_row(m.emb, id));
  for (int id : question_ids) q_embs.push_back(embed_row(m.emb, id));
  const Vec pooled = attention_pool_plain(m.qat_w, m.qat_b, m.qat_v, q_embs);
  const Vec q = plain_tanh(plain_affine(m.q_w, m.q_b, pooled));
  const std::vector<Vec> feats = para_features_plain(m, p_embs);
  Vec bq_s(size_t(m.para_dim()), 0.0), bq_e(size_t(m.para_dim()), 0.0);
  kern::matvec(m.bil_start.w, q.data(), bq_s.data());
  kern::matvec(m.bil_end.w, q.data(), bq_e.data());
  Vec z1(feats.size()), z2(feats.size());
  for (size_t i = 0; i < feats.size(); ++i) {
    double d1 = 0.0, d2 = 0.0;
    for (size_t j = 0; j < feats[i].size(); ++j) {
      d1 += feats[i][j] * bq_s[j];
      d2 += feats[i][j] * bq_e[j];
    }
    Vec l1(1), l2(1);
    kern::matvec(m.lin_start.w, feats[i].data(), l1.data());
    kern::matvec(m.lin_end.w, feats[i].data(), l2.data());
    z1[i] = d1 + l1[0];
    z2[i] = d2 + l2[0];
  }
  return {z1, z2};
}

std::pair<int, int> qa_predict(const SpanQAModel& m, const std::vector<int>& para_ids,
                               const std::vector<int>& question_ids) {
  auto [z1, z2] = qa_logits_hard(m, para_ids, question_ids);
  const int n = int(z1.size());
  int bi = 0, bj = 0;
  double best = -1e300;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n && j <= i + m.max_span; ++j) {
      const double s = z1[size_t(i)] + z2[size_t(j)];
      if (s > best) {
        best = s;
        bi = i;
        bj = j;
      }
    }
  }
  return {bi, bj};
}

// ---------------------------------------------------------------------------
// Fixture data and training

std::vector<ClsItem> load_cls_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  std::vector<ClsItem> items;
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
    ClsItem it;
    it.id = j.value("id", "item-" + std::to_string(ln));
    it.tokens = j.at("text").get<std::vector<std::string>>();
    it.label = j.at("label").get<int>();
    items.push_back(std::move(it));
  }
  return items;
}

std::vector<QAItem> load_qa_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  std::vector<QAItem> items;
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
    QAItem it;
    it.id = j.value("id", "item-" + std::to_string(ln));
    it.paragraph = j.at("paragraph").get<std::vector<std::string>>();
    it.question = j.at("question").get<std::vector<std::string>>();
    it.answer_start = j.at("answer_start").get<int>();
    it.answer_end = j.at("answer_end").get<int>();
    if (it.answer_start < 0 || it.answer_end < it.answer_start ||
        it.answer_end >= int(it.paragraph.size()))
      throw DataError(path + ":" + std::to_string(ln) + ": answer span out of range");
    items.push_back(std::move(it));
  }
  return items;
}

namespace {
std::vector<int> to_ids(const treeio::Vocab& vocab, const std::vector<std::string>& toks) {
  std::vector<int> ids;
  ids.reserve(toks.size());
  for (const std::string& t : toks) ids.push_back(vocab.id(lower(t)));
  return ids;
}
}  // namespace

SentimentModel train_sentiment(const std::vector<ClsItem>& train,
                               const std::vector<ClsItem>& heldout, const std::string& arch,
                               int num_classes, const treeio::Vocab& vocab,
                               const VictimTrainConfig& cfg) {
  if (train.empty()) throw DataError("train_sentiment: empty training set");
  SentimentModel m = SentimentModel::make(arch, num_classes, 32, 32, vocab);
  std::mt19937_64 rng(mix_seed(cfg.seed, "sentiment-init-" + arch));
  m.init(rng);
  ad::Adam opt(m.all_params(), cfg.lr);
  std::vector<size_t> idx(train.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, "sentiment-shuffle-" + arch));
  const int V = m.vocab.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), shuffle_rng);
    for (size_t k : idx) {
      const ClsItem& it = train[k];
      ad::Tape tape(true);
      std::vector<ad::Var> rows;
      for (int id : to_ids(m.vocab, it.tokens)) rows.push_back(tape.constant(one_hot(id, V)));
      ad::Var loss = tape.nll_logits(cls_logits_tape(tape, m, rows), it.label);
      opt.zero_grads();
      tape.backward(loss);
      opt.step();
    }
  }
  const double acc = cls_accuracy(m, heldout.empty() ? train : heldout);
  if (acc < cfg.cls_accuracy_floor)
    throw RuntimeFailure("sentiment training failed the accuracy floor: reached " +
                         std::to_string(acc) + ", floor " +
                         std::to_string(cfg.cls_accuracy_floor));
  m.model_id = arch + "-" + hex64(params_hash(m.all_params()));
  return m;
}

SpanQAModel train_qa(const std::vector<QAItem>& train, const std::vector<QAItem>& heldout,
                     const std::string& arch, const treeio::Vocab& vocab,
                     const VictimTrainConfig& cfg) {
  if (train.empty()) throw DataError("train_qa: empty training set");
  SpanQAModel m = SpanQAModel::make(arch, 32, 32, vocab);
  std::mt19937_64 rng(mix_seed(cfg.seed, "qa-init-" + arch));
  m.init(rng);
  ad::Adam opt(m.all_params(), cfg.lr);
  std::vector<size_t> idx(train.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, "qa-shuffle-" + arch));
  const int V = m.vocab.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), shuffle_rng);
    for (size_t k : idx) {
      const QAItem& it = train[k];
      ad::Tape tape(true);
      std::vector<ad::Var> rows;
      for (int id : to_ids(m.vocab, it.paragraph)) rows.push_back(tape.constant(one_hot(id, V)));
      auto [z1, z2] = qa_logits_tape(tape, m, rows, to_ids(m.vocab, it.question));
      ad::Var loss = tape.add(tape.nll_logits(z1, it.answer_start),
                              tape.nll_logits(z2, it.answer_end));
      opt.zero_grads();
      tape.backward(loss);
      opt.step();
    }
  }
  const double em = qa_exact_match(m, heldout.empty() ? train : heldout);
  if (em < cfg.qa_em_floor)
    throw RuntimeFailure("qa training failed the EM floor: reached " + std::to_string(em) +
                         ", floor " + std::to_string(cfg.qa_em_floor));
  m.model_id = arch + "-" + hex64(params_hash(m.all_params()));
  return m;
}

double cls_accuracy(const SentimentModel& m, const std::vector<ClsItem>& items) {
  if (items.empty()) return 0.0;
  int hit = 0;
  for (const ClsItem& it : items)
    if (cls_predict(m, to_ids(m.vocab, it.tokens)) == it.label) ++hit;
  return double(hit) / double(items.size());
}

double qa_exact_match(const SpanQAModel& m, const std::vector<QAItem>& items) {
  if (items.empty()) return 0.0;
  int hit = 0;
  for (const QAItem& it : items) {
    auto [s, e] = qa_predict(m, to_ids(m.vocab, it.paragraph), to_ids(m.vocab, it.question));
    std::vector<std::string> pred, gold;
    for (int i = s; i <= e; ++i) pred.push_back(lower(it.paragraph[size_t(i)]));
    for (int i = it.answer_start; i <= it.answer_end; ++i)
      gold.push_back(lower(it.paragraph[size_t(i)]));
    if (pred == gold) ++hit;
  }
  return 100.0 * double(hit) / double(items.size());
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
void fill_from_archive(const std::vector<const ad::Param*>& ps, const ckpt::Archive& a) {
  for (const ad::Param* cp : ps) {
    auto* p = const_cast<ad::Param*>(cp);
    const Mat& src = a.get(p->name);
    if (src.rows != p->w.rows || src.cols != p->w.cols)
      throw DataError("checkpoint array shape mismatch: " + p->name);
    p->w = src;
  }
}

treeio::Vocab vocab_from_manifest(const ckpt::Json& manifest) {
  treeio::Vocab v;
  v.words = manifest.at("vocab").get<std::vector<std::string>>();
  v.index.clear();
  for (size_t i = 0; i < v.words.size(); ++i) v.index.emplace(v.words[i], int(i));
  return v;
}
}  // namespace

void SentimentModel::save(const std::string& path) const {
  ckpt::Archive a;
  a.manifest = Json{{"format_version", 1}, {"kind", "sentiment"},     {"arch", arch},
                    {"model_id", model_id}, {"num_classes", num_classes}, {"emb_dim", emb_dim},
                    {"hidden", hidden},     {"vocab", vocab.words},
                    {"vocab_hash", hex64(vocab.hash())}};
  for (const ad::Param* p : all_params()) a.put(p->name, p->w);
  a.save(path);
}

SentimentModel SentimentModel::load(const std::string& path) {
  ckpt::Archive a = ckpt::Archive::load(path);
  if (a.manifest.value("kind", "") != "sentiment")
    throw DataError("not a sentiment checkpoint: " + path);
  SentimentModel m = make(a.manifest.at("arch").get<std::string>(),
                          a.manifest.at("num_classes").get<int>(),
                          a.manifest.at("emb_dim").get<int>(), a.manifest.at("hidden").get<int>(),
                          vocab_from_manifest(a.manifest));
  m.model_id = a.manifest.value("model_id", "");
  fill_from_archive(m.all_params(), a);
  return m;
}

void SpanQAModel::save(const std::string& path) const {
  ckpt::Archive a;
  a.manifest = Json{{"format_version", 1}, {"kind", "qa"},        {"arch", arch},
                    {"model_id", model_id}, {"emb_dim", emb_dim},  {"hidden", hidden},
                    {"max_span", max_span}, {"vocab", vocab.words},
                    {"vocab_hash", hex64(vocab.hash())}};
  for (const ad::Param* p : all_params()) a.put(p->name, p->w);
  a.save(path);
}

SpanQAModel SpanQAModel::load(const std::string& path) {
  ckpt::Archive a = ckpt::Archive::load(path);
  if (a.manifest.value("kind", "") != "qa") throw DataError("not a qa checkpoint: " + path);
  SpanQAModel m =
      make(a.manifest.at("arch").get<std::string>(), a.manifest.at("emb_dim").get<int>(),
           a.manifest.at("hidden").get<int>(), vocab_from_manifest(a.manifest));
  m.max_span = a.manifest.at("max_span").get<int>();
  m.model_id = a.manifest.value("model_id", "");
  fill_from_archive(m.all_params(), a);
  return m;
}

}  // namespace treeperturb::victims
