#include "treeperturb/autoenc.hpp"

#include <algorithm>
#include <cmath>

#include "treeperturb/checkpoint.hpp"
#include "treeperturb/kernels.hpp"

namespace treeperturb::autoenc {

using treeio::DepTree;

int AutoencoderParams::rel_id(const std::string& rel) const {
  auto it = rel_index.find(rel);
  return it == rel_index.end() ? 0 : it->second;
}

std::vector<const ad::Param*> AutoencoderParams::all_params() const {
  return {&word_emb, &rel_emb, &enc.Wi, &enc.Ui, &enc.bi, &enc.Wf, &enc.Uf, &enc.bf,
          &enc.Wo,   &enc.Uo,  &enc.bo, &enc.Wu, &enc.Uu, &enc.bu, &dec.Wi, &dec.bi,
          &dec.Wf,   &dec.bf,  &dec.Wo, &dec.bo, &dec.Wu, &dec.bu, &proj_w, &proj_b};
}

void AutoencoderParams::init(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (const ad::Param* cp : all_params()) {
    auto* p = const_cast<ad::Param*>(cp);
    for (double& x : p->w.a) x = u(rng);
    p->zero_grad();
  }
}

namespace {

AutoencoderParams make_params(Dims dims, treeio::Vocab vocab,
                              std::vector<std::string> relations) {
  AutoencoderParams p;
  p.dims = dims;
  p.vocab = std::move(vocab);
  p.relations = std::move(relations);
  for (size_t i = 0; i < p.relations.size(); ++i) p.rel_index.emplace(p.relations[i], int(i));
  const int H = dims.hidden, E = dims.emb, R = dims.rel;
  const int V = p.vocab.size();
  const int M = H + R;      // child message width
  const int D = H + E + R;  // decoder cell input width
  p.word_emb = ad::Param("word_emb", V, E);
  p.rel_emb = ad::Param("rel_emb", int(p.relations.size()), R);
  p.enc.Wi = ad::Param("enc.Wi", H, E);
  p.enc.Ui = ad::Param("enc.Ui", H, M);
  p.enc.bi = ad::Param("enc.bi", 1, H);
  p.enc.Wf = ad::Param("enc.Wf", H, E);
  p.enc.Uf = ad::Param("enc.Uf", H, M);
  p.enc.bf = ad::Param("enc.bf", 1, H);
  p.enc.Wo = ad::Param("enc.Wo", H, E);
  p.enc.Uo = ad::Param("enc.Uo", H, M);
  p.enc.bo = ad::Param("enc.bo", 1, H);
  p.enc.Wu = ad::Param("enc.Wu", H, E);
  p.enc.Uu = ad::Param("enc.Uu", H, M);
  p.enc.bu = ad::Param("enc.bu", 1, H);
  p.dec.Wi = ad::Param("dec.Wi", H, D);
  p.dec.bi = ad::Param("dec.bi", 1, H);
  p.dec.Wf = ad::Param("dec.Wf", H, D);
  p.dec.bf = ad::Param("dec.bf", 1, H);
  p.dec.Wo = ad::Param("dec.Wo", H, D);
  p.dec.bo = ad::Param("dec.bo", 1, H);
  p.dec.Wu = ad::Param("dec.Wu", H, D);
  p.dec.bu = ad::Param("dec.bu", 1, H);
  p.proj_w = ad::Param("proj_w", V, H);
  p.proj_b = ad::Param("proj_b", 1, V);
  return p;
}

// children[i] lists the token indices whose head is i+1, in surface order.
std::vector<std::vector<int>> child_lists(const DepTree& tree) {
  std::vector<std::vector<int>> ch(size_t(tree.size()) + 1);
  for (int i = 1; i <= tree.size(); ++i) ch[size_t(tree.head_of(i))].push_back(i);
  return ch;
}

int root_of(const DepTree& tree) {
  for (int i = 1; i <= tree.size(); ++i)
    if (tree.head_of(i) == 0) return i;
  throw DataError("tree has no root");
}

void check_tree(const DepTree& tree) {
  auto bad = treeio::validate(tree);
  if (!bad.empty()) throw DataError("invalid tree: " + join(bad, "; "));
}

// Plain (tape-free) encoder cell: gates from the node's word embedding and
// the summed child messages; per-child forget gates on the memory path.
struct PlainCellOut {
  Vec h, c;
};

PlainCellOut enc_cell_plain(const AutoencoderParams& p, const Vec& x,
                            const std::vector<Vec>& msgs, const std::vector<Vec>& child_c) {
  const int H = p.dims.hidden;
  const int M = H + p.dims.rel;
  Vec agg(size_t(M), 0.0);
  for (const Vec& m : msgs)
    for (int j = 0; j < M; ++j) agg[size_t(j)] += m[size_t(j)];

  Vec gi(size_t(H), 0.0), go(size_t(H), 0.0), gu(size_t(H), 0.0);
  Vec wx(size_t(H), 0.0), ua(size_t(H), 0.0);
  auto mix = [&](const ad::Param& W, const ad::Param& U, const ad::Param& b, Vec& out) {
    kern::matvec(W.w, x.data(), wx.data());
    kern::matvec(U.w, agg.data(), ua.data());
    for (int j = 0; j < H; ++j) out[size_t(j)] = wx[size_t(j)] + ua[size_t(j)] + b.w.a[size_t(j)];
  };
  mix(p.enc.Wi, p.enc.Ui, p.enc.bi, gi);
  mix(p.enc.Wo, p.enc.Uo, p.enc.bo, go);
  mix(p.enc.Wu, p.enc.Uu, p.enc.bu, gu);
  for (int j = 0; j < H; ++j) {
    gi[size_t(j)] = 1.0 / (1.0 + std::exp(-gi[size_t(j)]));
    go[size_t(j)] = 1.0 / (1.0 + std::exp(-go[size_t(j)]));
    gu[size_t(j)] = std::tanh(gu[size_t(j)]);
  }

  PlainCellOut out;
  out.c.assign(size_t(H), 0.0);
  for (int j = 0; j < H; ++j) out.c[size_t(j)] = gi[size_t(j)] * gu[size_t(j)];
  Vec wfx(size_t(H), 0.0);
  kern::matvec(p.enc.Wf.w, x.data(), wfx.data());
  for (size_t k = 0; k < msgs.size(); ++k) {
    Vec uf(size_t(H), 0.0);
    kern::matvec(p.enc.Uf.w, msgs[k].data(), uf.data());
    for (int j = 0; j < H; ++j) {
      const double f = 1.0 / (1.0 + std::exp(-(wfx[size_t(j)] + uf[size_t(j)] + p.enc.bf.w.a[size_t(j)])));
      out.c[size_t(j)] += f * child_c[k][size_t(j)];
    }
  }
  out.h.assign(size_t(H), 0.0);
  for (int j = 0; j < H; ++j) out.h[size_t(j)] = go[size_t(j)] * std::tanh(out.c[size_t(j)]);
  return out;
}

Vec embed_word(const AutoencoderParams& p, int id) {
  const double* r = p.word_emb.w.row(id);
  return Vec(r, r + p.dims.emb);
}

Vec embed_rel(const AutoencoderParams& p, int rid) {
  const double* r = p.rel_emb.w.row(rid);
  return Vec(r, r + p.dims.rel);
}

Vec message_of(const AutoencoderParams& p, const Vec& h, int rid) {
  Vec m(h);
  const Vec d = embed_rel(p, rid);
  m.insert(m.end(), d.begin(), d.end());
  return m;
}

// Plain decoder cell.
PlainCellOut dec_cell_plain(const AutoencoderParams& p, const Vec& h_par, const Vec& w_par,
                            int rid, const Vec& c_par) {
  const int H = p.dims.hidden;
  Vec inp(h_par);
  inp.insert(inp.end(), w_par.begin(), w_par.end());
  const Vec d = embed_rel(p, rid);
  inp.insert(inp.end(), d.begin(), d.end());

  auto gate = [&](const ad::Param& W, const ad::Param& b, bool tanh_act) {
    Vec out(size_t(H), 0.0);
    kern::matvec(W.w, inp.data(), out.data());
    for (int j = 0; j < H; ++j) {
      out[size_t(j)] += b.w.a[size_t(j)];
      out[size_t(j)] = tanh_act ? std::tanh(out[size_t(j)])
                                : 1.0 / (1.0 + std::exp(-out[size_t(j)]));
    }
    return out;
  };
  const Vec gi = gate(p.dec.Wi, p.dec.bi, false);
  const Vec gf = gate(p.dec.Wf, p.dec.bf, false);
  const Vec go = gate(p.dec.Wo, p.dec.bo, false);
  const Vec gu = gate(p.dec.Wu, p.dec.bu, true);
  PlainCellOut out;
  out.c.assign(size_t(H), 0.0);
  out.h.assign(size_t(H), 0.0);
  for (int j = 0; j < H; ++j) {
    out.c[size_t(j)] = gf[size_t(j)] * c_par[size_t(j)] + gi[size_t(j)] * gu[size_t(j)];
    out.h[size_t(j)] = go[size_t(j)] * std::tanh(out.c[size_t(j)]);
  }
  return out;
}

Vec project_logits(const AutoencoderParams& p, const Vec& h) {
  Vec z(size_t(p.vocab.size()), 0.0);
  kern::matvec(p.proj_w.w, h.data(), z.data());
  for (size_t i = 0; i < z.size(); ++i) z[i] += p.proj_b.w.a[i];
  return z;
}

int argmax_lowest(const Vec& v) {
  int best = 0;
  for (int i = 1; i < int(v.size()); ++i)
    if (v[size_t(i)] > v[size_t(best)]) best = i;
  return best;
}

}  // namespace

Mode mode_from_string(const std::string& s) {
  if (s == "sent") return Mode::Sentence;
  if (s == "word") return Mode::Word;
  throw ConfigError("unknown mode: " + s + " (expected sent|word)");
}

std::string to_string(Mode m) { return m == Mode::Sentence ? "sent" : "word"; }

NodeStates encode(const DepTree& tree, const AutoencoderParams& params) {
  check_tree(tree);
  const auto ch = child_lists(tree);
  const auto order = treeio::level_order(tree);
  NodeStates st;
  st.h.assign(size_t(tree.size()), {});
  st.c.assign(size_t(tree.size()), {});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int i = *it;
    std::vector<Vec> msgs, cs;
    for (int k : ch[size_t(i)]) {
      msgs.push_back(message_of(params, st.h[size_t(k - 1)], params.rel_id(tree.relation_of(k))));
      cs.push_back(st.c[size_t(k - 1)]);
    }
    const Vec x = embed_word(params, params.vocab.id(tree.tokens[size_t(i - 1)].norm));
    PlainCellOut out = enc_cell_plain(params, x, msgs, cs);
    st.h[size_t(i - 1)] = std::move(out.h);
    st.c[size_t(i - 1)] = std::move(out.c);
  }
  return st;
}

LatentCode make_latent(const NodeStates& states, const DepTree& tree, Mode mode) {
  LatentCode code;
  code.mode = mode;
  if (mode == Mode::Sentence) {
    code.payload.push_back(states.h[size_t(root_of(tree) - 1)]);
  } else {
    code.payload = states.h;
  }
  return code;
}

Vec reencode_from_states(const DepTree& tree, const std::vector<Vec>& per_token_h,
                         const AutoencoderParams& params) {
  check_tree(tree);
  if (int(per_token_h.size()) != tree.size())
    throw DataError("reencode_from_states: one vector per token required");
  for (const Vec& v : per_token_h)
    if (int(v.size()) != params.dims.hidden)
      throw DataError("reencode_from_states: hidden-size mismatch");
  const auto ch = child_lists(tree);
  const auto order = treeio::level_order(tree);
  std::vector<Vec> cs(size_t(tree.size()));
  Vec root_h;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int i = *it;
    std::vector<Vec> msgs, child_c;
    for (int k : ch[size_t(i)]) {
      msgs.push_back(message_of(params, per_token_h[size_t(k - 1)],
                                params.rel_id(tree.relation_of(k))));
      child_c.push_back(cs[size_t(k - 1)]);
    }
    const Vec x = embed_word(params, params.vocab.id(tree.tokens[size_t(i - 1)].norm));
    PlainCellOut out = enc_cell_plain(params, x, msgs, child_c);
    cs[size_t(i - 1)] = std::move(out.c);
    if (tree.head_of(i) == 0) root_h = std::move(out.h);
  }
  return root_h;
}

HardDecode decode_hard(const LatentCode& code, const DepTree& tree,
                       const AutoencoderParams& params, const std::vector<int>* banned_ids) {
  check_tree(tree);
  Vec root_code;
  if (code.mode == Mode::Sentence) {
    if (code.payload.size() != 1) throw DataError("sentence code must hold one vector");
    root_code = code.payload[0];
  } else {
    if (int(code.payload.size()) != tree.size())
      throw DataError("word code length does not match the tree");
    root_code = reencode_from_states(tree, code.payload, params);
  }
  const int H = params.dims.hidden;
  if (int(root_code.size()) != H) throw DataError("latent size does not match hidden size");

  HardDecode out;
  out.order = treeio::level_order(tree);
  out.ids.assign(size_t(tree.size()), 0);
  std::vector<Vec> h(size_t(tree.size())), c(size_t(tree.size()));
  auto emit = [&](const Vec& hidden) {
    Vec z = project_logits(params, hidden);
    if (banned_ids)
      for (int id : *banned_ids) z[size_t(id)] = -1e30;
    return argmax_lowest(z);
  };

  const int root = out.order[0];
  h[size_t(root - 1)] = root_code;
  c[size_t(root - 1)].assign(size_t(H), 0.0);
  out.ids[size_t(root - 1)] = emit(h[size_t(root - 1)]);
  for (size_t oi = 1; oi < out.order.size(); ++oi) {
    const int j = out.order[oi];
    const int par = tree.head_of(j);
    const Vec w_par = embed_word(params, out.ids[size_t(par - 1)]);
    PlainCellOut cell =
        dec_cell_plain(params, h[size_t(par - 1)], w_par,
                       params.rel_id(tree.relation_of(j)), c[size_t(par - 1)]);
    h[size_t(j - 1)] = std::move(cell.h);
    c[size_t(j - 1)] = std::move(cell.c);
    out.ids[size_t(j - 1)] = emit(h[size_t(j - 1)]);
  }
  return out;
}

std::vector<std::string> HardDecode::tokens(const AutoencoderParams& params) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(params.vocab.word(id));
  return out;
}

EncTapeStates encode_tape(ad::Tape& tape, const DepTree& tree, const AutoencoderParams& p) {
  check_tree(tree);
  const auto ch = child_lists(tree);
  const auto order = treeio::level_order(tree);
  const int H = p.dims.hidden;
  EncTapeStates st;
  st.h.assign(size_t(tree.size()), {});
  st.c.assign(size_t(tree.size()), {});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int i = *it;
    ad::Var x = tape.row(p.word_emb, p.vocab.id(tree.tokens[size_t(i - 1)].norm));
    std::vector<ad::Var> msgs;
    for (int k : ch[size_t(i)])
      msgs.push_back(tape.concat(
          {st.h[size_t(k - 1)], tape.row(p.rel_emb, p.rel_id(tree.relation_of(k)))}));

    ad::Var agg;
    if (msgs.empty()) {
      agg = tape.constant(Vec(size_t(H + p.dims.rel), 0.0));
    } else {
      agg = msgs[0];
      for (size_t k = 1; k < msgs.size(); ++k) agg = tape.add(agg, msgs[k]);
    }
    ad::Var gi = tape.sigmoid(tape.add(tape.add(tape.matvec(p.enc.Wi, x), tape.matvec(p.enc.Ui, agg)),
                                       tape.row(p.enc.bi, 0)));
    ad::Var go = tape.sigmoid(tape.add(tape.add(tape.matvec(p.enc.Wo, x), tape.matvec(p.enc.Uo, agg)),
                                       tape.row(p.enc.bo, 0)));
    ad::Var gu = tape.tanh_(tape.add(tape.add(tape.matvec(p.enc.Wu, x), tape.matvec(p.enc.Uu, agg)),
                                     tape.row(p.enc.bu, 0)));
    ad::Var cnew = tape.mul(gi, gu);
    ad::Var wfx = tape.matvec(p.enc.Wf, x);
    for (size_t k = 0; k < msgs.size(); ++k) {
      ad::Var f = tape.sigmoid(
          tape.add(tape.add(wfx, tape.matvec(p.enc.Uf, msgs[k])), tape.row(p.enc.bf, 0)));
      cnew = tape.add(cnew, tape.mul(f, st.c[size_t(ch[size_t(i)][k] - 1)]));
    }
    st.c[size_t(i - 1)] = cnew;
    st.h[size_t(i - 1)] = tape.mul(go, tape.tanh_(cnew));
  }
  return st;
}

ad::Var reencode_tape(ad::Tape& tape, const DepTree& tree,
                      const std::vector<ad::Var>& per_token_h, const AutoencoderParams& p) {
  check_tree(tree);
  if (int(per_token_h.size()) != tree.size())
    throw DataError("reencode_tape: one vector per token required");
  const auto ch = child_lists(tree);
  const auto order = treeio::level_order(tree);
  const int H = p.dims.hidden;
  std::vector<ad::Var> cs(size_t(tree.size()));
  ad::Var root_h;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int i = *it;
    ad::Var x = tape.row(p.word_emb, p.vocab.id(tree.tokens[size_t(i - 1)].norm));
    std::vector<ad::Var> msgs;
    for (int k : ch[size_t(i)])
      msgs.push_back(tape.concat(
          {per_token_h[size_t(k - 1)], tape.row(p.rel_emb, p.rel_id(tree.relation_of(k)))}));
    ad::Var agg;
    if (msgs.empty()) {
      agg = tape.constant(Vec(size_t(H + p.dims.rel), 0.0));
    } else {
      agg = msgs[0];
      for (size_t k = 1; k < msgs.size(); ++k) agg = tape.add(agg, msgs[k]);
    }
    ad::Var gi = tape.sigmoid(tape.add(tape.add(tape.matvec(p.enc.Wi, x), tape.matvec(p.enc.Ui, agg)),
                                       tape.row(p.enc.bi, 0)));
    ad::Var go = tape.sigmoid(tape.add(tape.add(tape.matvec(p.enc.Wo, x), tape.matvec(p.enc.Uo, agg)),
                                       tape.row(p.enc.bo, 0)));
    ad::Var gu = tape.tanh_(tape.add(tape.add(tape.matvec(p.enc.Wu, x), tape.matvec(p.enc.Uu, agg)),
                                     tape.row(p.enc.bu, 0)));
    ad::Var cnew = tape.mul(gi, gu);
    ad::Var wfx = tape.matvec(p.enc.Wf, x);
    for (size_t k = 0; k < msgs.size(); ++k) {
      ad::Var f = tape.sigmoid(
          tape.add(tape.add(wfx, tape.matvec(p.enc.Uf, msgs[k])), tape.row(p.enc.bf, 0)));
      cnew = tape.add(cnew, tape.mul(f, cs[size_t(ch[size_t(i)][k] - 1)]));
    }
    cs[size_t(i - 1)] = cnew;
    if (tree.head_of(i) == 0) root_h = tape.mul(go, tape.tanh_(cnew));
  }
  return root_h;
}

namespace {

ad::Var dec_cell_tape(ad::Tape& tape, const AutoencoderParams& p, ad::Var h_par, ad::Var w_par,
                      int rid, ad::Var c_par, ad::Var* c_out) {
  ad::Var inp = tape.concat({h_par, w_par, tape.row(p.rel_emb, rid)});
  ad::Var gi = tape.sigmoid(tape.add(tape.matvec(p.dec.Wi, inp), tape.row(p.dec.bi, 0)));
  ad::Var gf = tape.sigmoid(tape.add(tape.matvec(p.dec.Wf, inp), tape.row(p.dec.bf, 0)));
  ad::Var go = tape.sigmoid(tape.add(tape.matvec(p.dec.Wo, inp), tape.row(p.dec.bo, 0)));
  ad::Var gu = tape.tanh_(tape.add(tape.matvec(p.dec.Wu, inp), tape.row(p.dec.bu, 0)));
  ad::Var c = tape.add(tape.mul(gf, c_par), tape.mul(gi, gu));
  *c_out = c;
  return tape.mul(go, tape.tanh_(c));
}

ad::Var project_tape(ad::Tape& tape, const AutoencoderParams& p, ad::Var h) {
  return tape.add(tape.matvec(p.proj_w, h), tape.row(p.proj_b, 0));
}

}  // namespace

SoftDecode decode_soft_tape(ad::Tape& tape, ad::Var root_code, const DepTree& tree,
                            const AutoencoderParams& p, double tau,
                            const std::vector<int>* banned_ids) {
  if (!(tau > 0.0)) throw ConfigError("decode temperature must be positive");
  check_tree(tree);
  ad::Var ban;
  if (banned_ids && !banned_ids->empty()) {
    Vec penalty(size_t(p.vocab.size()), 0.0);
    for (int id : *banned_ids) penalty[size_t(id)] = -1e30;
    ban = tape.constant(std::move(penalty));
  }
  auto soft_emit = [&](ad::Var hidden) {
    ad::Var z = project_tape(tape, p, hidden);
    if (ban.ok()) z = tape.add(z, ban);
    return tape.softmax_t(z, tau);
  };
  SoftDecode out;
  out.order = treeio::level_order(tree);
  out.rows.assign(size_t(tree.size()), {});
  std::vector<ad::Var> h(size_t(tree.size())), c(size_t(tree.size())), w(size_t(tree.size()));
  const int root = out.order[0];
  h[size_t(root - 1)] = root_code;
  c[size_t(root - 1)] = tape.constant(Vec(size_t(p.dims.hidden), 0.0));
  out.rows[size_t(root - 1)] = soft_emit(root_code);
  w[size_t(root - 1)] = tape.mix_rows(p.word_emb, out.rows[size_t(root - 1)]);
  for (size_t oi = 1; oi < out.order.size(); ++oi) {
    const int j = out.order[oi];
    const int par = tree.head_of(j);
    ad::Var cj;
    ad::Var hj = dec_cell_tape(tape, p, h[size_t(par - 1)], w[size_t(par - 1)],
                               p.rel_id(tree.relation_of(j)), c[size_t(par - 1)], &cj);
    h[size_t(j - 1)] = hj;
    c[size_t(j - 1)] = cj;
    out.rows[size_t(j - 1)] = soft_emit(hj);
    w[size_t(j - 1)] = tape.mix_rows(p.word_emb, out.rows[size_t(j - 1)]);
  }
  return out;
}

SoftDecodeEval decode_soft(const LatentCode& code, const DepTree& tree,
                           const AutoencoderParams& params, double tau) {
  ad::Tape tape(false);
  ad::Var root;
  if (code.mode == Mode::Sentence) {
    if (code.payload.size() != 1) throw DataError("sentence code must hold one vector");
    root = tape.input(code.payload[0]);
  } else {
    if (int(code.payload.size()) != tree.size())
      throw DataError("word code length does not match the tree");
    std::vector<ad::Var> hs;
    hs.reserve(code.payload.size());
    for (const Vec& v : code.payload) hs.push_back(tape.input(v));
    root = reencode_tape(tape, tree, hs, params);
  }
  SoftDecode dec = decode_soft_tape(tape, root, tree, params, tau);
  SoftDecodeEval out;
  out.order = dec.order;
  out.rows.reserve(dec.rows.size());
  for (ad::Var r : dec.rows) out.rows.push_back(tape.val(r));
  return out;
}

ad::Var recon_loss_tape(ad::Tape& tape, const DepTree& tree, const AutoencoderParams& p) {
  check_tree(tree);
  EncTapeStates enc = encode_tape(tape, tree, p);
  const auto order = treeio::level_order(tree);
  const int root = order[0];
  std::vector<ad::Var> h(size_t(tree.size())), c(size_t(tree.size()));
  h[size_t(root - 1)] = enc.h[size_t(root - 1)];
  c[size_t(root - 1)] = tape.constant(Vec(size_t(p.dims.hidden), 0.0));
  std::vector<ad::Var> losses;
  losses.push_back(tape.nll_logits(project_tape(tape, p, h[size_t(root - 1)]),
                                   p.vocab.id(tree.tokens[size_t(root - 1)].norm)));
  for (size_t oi = 1; oi < order.size(); ++oi) {
    const int j = order[oi];
    const int par = tree.head_of(j);
    // Teacher forcing: the parent's gold word embedding feeds the cell.
    ad::Var w_par = tape.row(p.word_emb, p.vocab.id(tree.tokens[size_t(par - 1)].norm));
    ad::Var cj;
    ad::Var hj = dec_cell_tape(tape, p, h[size_t(par - 1)], w_par,
                               p.rel_id(tree.relation_of(j)), c[size_t(par - 1)], &cj);
    h[size_t(j - 1)] = hj;
    c[size_t(j - 1)] = cj;
    losses.push_back(tape.nll_logits(project_tape(tape, p, hj),
                                     p.vocab.id(tree.tokens[size_t(j - 1)].norm)));
  }
  return tape.mean(tape.concat(losses));
}

double recon_loss(const DepTree& tree, const AutoencoderParams& params) {
  ad::Tape tape(false);
  return tape.scalar(recon_loss_tape(tape, tree, params));
}

namespace {

// Training loss with scheduled sampling: each parent word embedding is the
// decoder's own greedy choice with probability own_prob, the gold token
// otherwise. Free-running hard decodes track the training distribution far
// better this way.
ad::Var recon_loss_scheduled(ad::Tape& tape, const DepTree& tree, const AutoencoderParams& p,
                             double own_prob, std::mt19937_64& rng) {
  EncTapeStates enc = encode_tape(tape, tree, p);
  const auto order = treeio::level_order(tree);
  const int root = order[0];
  std::vector<ad::Var> h(size_t(tree.size())), c(size_t(tree.size()));
  std::vector<ad::Var> logits(size_t(tree.size()));
  h[size_t(root - 1)] = enc.h[size_t(root - 1)];
  c[size_t(root - 1)] = tape.constant(Vec(size_t(p.dims.hidden), 0.0));
  logits[size_t(root - 1)] = project_tape(tape, p, h[size_t(root - 1)]);
  std::vector<ad::Var> losses;
  losses.push_back(
      tape.nll_logits(logits[size_t(root - 1)], p.vocab.id(tree.tokens[size_t(root - 1)].norm)));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (size_t oi = 1; oi < order.size(); ++oi) {
    const int j = order[oi];
    const int par = tree.head_of(j);
    int par_word = p.vocab.id(tree.tokens[size_t(par - 1)].norm);
    if (own_prob > 0.0 && coin(rng) < own_prob) {
      const Vec& z = tape.val(logits[size_t(par - 1)]);
      int arg = 0;
      for (int v = 1; v < int(z.size()); ++v)
        if (z[size_t(v)] > z[size_t(arg)]) arg = v;
      par_word = arg;
    }
    ad::Var w_par = tape.row(p.word_emb, par_word);
    ad::Var cj;
    ad::Var hj = dec_cell_tape(tape, p, h[size_t(par - 1)], w_par,
                               p.rel_id(tree.relation_of(j)), c[size_t(par - 1)], &cj);
    h[size_t(j - 1)] = hj;
    c[size_t(j - 1)] = cj;
    logits[size_t(j - 1)] = project_tape(tape, p, hj);
    losses.push_back(
        tape.nll_logits(logits[size_t(j - 1)], p.vocab.id(tree.tokens[size_t(j - 1)].norm)));
  }
  return tape.mean(tape.concat(losses));
}

}  // namespace

AutoencoderParams train_autoencoder(const std::vector<DepTree>& corpus, const Dims& dims,
                                    const TrainConfig& cfg, std::vector<EpochLog>* log) {
  if (corpus.empty()) throw DataError("train_autoencoder: empty corpus");
  for (size_t i = 0; i < corpus.size(); ++i) {
    auto bad = treeio::validate(corpus[i]);
    if (!bad.empty())
      throw DataError("corpus sentence " + std::to_string(i + 1) + " invalid: " + join(bad, "; "));
  }
  treeio::Vocab vocab = treeio::Vocab::build(corpus);
  std::vector<std::string> rels{"<unk-rel>"};
  {
    std::unordered_map<std::string, bool> seen;
    for (const DepTree& t : corpus)
      for (const std::string& r : t.relation)
        if (!seen.count(r)) {
          seen.emplace(r, true);
          rels.push_back(r);
        }
  }
  AutoencoderParams params = make_params(dims, std::move(vocab), std::move(rels));
  std::mt19937_64 rng(mix_seed(cfg.seed, "autoencoder-init"));
  params.init(rng, cfg.init_scale);

  ad::Adam opt(params.all_params(), cfg.lr);
  std::vector<size_t> idx(corpus.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, "autoencoder-shuffle"));

  std::mt19937_64 sample_rng(mix_seed(cfg.seed, "autoencoder-sample"));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), shuffle_rng);
    // Ramp in scheduled sampling after a teacher-forced warmup.
    const double warmup = 0.3 * cfg.epochs;
    const double own_prob =
        epoch <= warmup ? 0.0
                        : cfg.sample_prob * std::min(1.0, (epoch - warmup) /
                                                              (0.5 * cfg.epochs));
    double total = 0.0;
    for (size_t k = 0; k < idx.size(); ++k) {
      ad::Tape tape(true);
      ad::Var loss = recon_loss_scheduled(tape, corpus[idx[k]], params, own_prob, sample_rng);
      const double lv = tape.scalar(loss);
      if (!std::isfinite(lv))
        throw RuntimeFailure("non-finite loss at epoch " + std::to_string(epoch) +
                             ", sentence " + std::to_string(idx[k] + 1));
      total += lv;
      opt.zero_grads();
      tape.backward(loss);
      opt.step();
    }
    if (log) log->push_back(EpochLog{epoch, total / double(corpus.size())});
  }
  return params;
}

double reconstruction_accuracy(const std::vector<DepTree>& corpus,
                               const AutoencoderParams& params) {
  long hit = 0, total = 0;
  for (const DepTree& t : corpus) {
    NodeStates st = encode(t, params);
    HardDecode dec = decode_hard(make_latent(st, t, Mode::Sentence), t, params);
    for (int i = 0; i < t.size(); ++i) {
      ++total;
      if (dec.ids[size_t(i)] == params.vocab.id(t.tokens[size_t(i)].norm)) ++hit;
    }
  }
  return total == 0 ? 0.0 : double(hit) / double(total);
}

void AutoencoderParams::save(const std::string& path) const {
  ckpt::Archive a;
  a.manifest = ckpt::Json{{"format_version", 1},
                          {"kind", "autoencoder"},
                          {"hidden", dims.hidden},
                          {"emb", dims.emb},
                          {"rel", dims.rel},
                          {"vocab", vocab.words},
                          {"vocab_hash", hex64(vocab.hash())},
                          {"relations", relations}};
  for (const ad::Param* p : all_params()) a.put(p->name, p->w);
  a.save(path);
}

AutoencoderParams AutoencoderParams::load(const std::string& path) {
  ckpt::Archive a = ckpt::Archive::load(path);
  if (a.manifest.value("kind", "") != "autoencoder")
    throw DataError("not an autoencoder checkpoint: " + path);
  Dims dims;
  dims.hidden = a.manifest.at("hidden").get<int>();
  dims.emb = a.manifest.at("emb").get<int>();
  dims.rel = a.manifest.at("rel").get<int>();
  treeio::Vocab vocab;
  vocab.words = a.manifest.at("vocab").get<std::vector<std::string>>();
  vocab.index.clear();
  for (size_t i = 0; i < vocab.words.size(); ++i) vocab.index.emplace(vocab.words[i], int(i));
  AutoencoderParams p = make_params(
      dims, std::move(vocab), a.manifest.at("relations").get<std::vector<std::string>>());
  for (const ad::Param* cp : p.all_params()) {
    auto* dst = const_cast<ad::Param*>(cp);
    const Mat& src = a.get(dst->name);
    if (src.rows != dst->w.rows || src.cols != dst->w.cols)
      throw DataError("checkpoint array shape mismatch: " + dst->name);
    dst->w = src;
  }
  return p;
}

}  // namespace treeperturb::autoenc
