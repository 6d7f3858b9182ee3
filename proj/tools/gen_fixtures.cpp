// Deterministic fixture builder: a 200-sentence parsed corpus, designed
// word embeddings, sentiment reviews, QA paragraphs and the static rule
// and stopword files. The generated files are committed under data/.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "treeperturb/pipeline.hpp"
#include "treeperturb/seedgen.hpp"
#include "treeperturb/treeio.hpp"

namespace tp = treeperturb;
using Json = nlohmann::ordered_json;
using tp::treeio::DepTree;

namespace {

struct Sent {
  DepTree tree;
  std::string kind;  // event | opinion | neutral | question | chain
  int polarity = 0;  // opinion: +1 positive, -1 negative
  bool strong = false;
  int verb_group = -1, object_group = -1;
  int subj_len = 0;  // answer span length for events
};

const std::vector<std::string> kPersons = {"farmer", "teacher", "doctor", "nurse",  "chef",
                                           "singer", "driver",  "waiter", "painter", "student"};
const std::vector<std::string> kNames = {"alice", "bob", "maria", "victor", "elena"};
const std::vector<std::pair<std::string, std::string>> kVerbs = {
    {"fed", "feeds"},       {"watched", "watches"}, {"fixed", "fixes"},
    {"baked", "bakes"},     {"wrote", "writes"},    {"washed", "washes"},
    {"painted", "paints"},  {"carried", "carries"}, {"cleaned", "cleans"},
    {"moved", "moves"}};
const std::vector<std::pair<std::string, std::string>> kObjects = {
    {"dog", "puppy"},  {"cat", "kitten"}, {"horse", "pony"}, {"car", "truck"},
    {"book", "novel"}, {"letter", "note"}, {"cake", "pie"},  {"fence", "wall"}};
const std::vector<std::string> kPlaces = {"barn",    "yard",   "park",   "garden",
                                          "kitchen", "market", "school", "office"};
const std::vector<std::string> kPosMild = {"clean", "fresh", "friendly", "tasty"};
const std::vector<std::string> kPosStrong = {"great", "wonderful", "perfect", "lovely"};
const std::vector<std::string> kNegMild = {"slow", "bland", "noisy", "stale"};
const std::vector<std::string> kNegStrong = {"awful", "terrible", "rude", "dirty"};
const std::vector<std::string> kReviewNouns = {"food",   "service", "place", "staff",
                                               "coffee", "room",    "music", "price"};

DepTree make_tree(const std::vector<std::string>& toks, const std::vector<int>& heads,
                  const std::vector<std::string>& rels) {
  DepTree t = DepTree::from_tokens(toks, heads, rels);
  auto bad = tp::treeio::validate(t);
  if (!bad.empty())
    throw tp::DataError("generated tree invalid (" + tp::join(toks, " ") + "): " +
                        tp::join(bad, "; "));
  return t;
}

// "the P V the O ." / "the P V the O in the L ."
Sent event_sentence(const std::string& person, int vg, bool past, int og, bool first_form,
                    int place /*-1 none*/) {
  Sent s;
  s.kind = "event";
  s.verb_group = vg;
  s.object_group = og;
  s.subj_len = 2;
  const std::string verb = past ? kVerbs[size_t(vg)].first : kVerbs[size_t(vg)].second;
  const std::string obj = first_form ? kObjects[size_t(og)].first : kObjects[size_t(og)].second;
  std::vector<std::string> toks = {"the", person, verb, "the", obj};
  std::vector<int> heads = {2, 3, 0, 5, 3};
  std::vector<std::string> rels = {"det", "nsubj", "root", "det", "obj"};
  if (place >= 0) {
    toks.insert(toks.end(), {"in", "the", kPlaces[size_t(place)]});
    heads.insert(heads.end(), {8, 8, 3});
    rels.insert(rels.end(), {"case", "det", "obl"});
  }
  toks.push_back(".");
  heads.push_back(3);
  rels.push_back("punct");
  s.tree = make_tree(toks, heads, rels);
  return s;
}

// "alice V the O ." or "donald trump V the O ."
Sent name_event(const std::vector<std::string>& name, int vg, bool past, int og,
                bool first_form) {
  Sent s;
  s.kind = "event";
  s.verb_group = vg;
  s.object_group = og;
  s.subj_len = int(name.size());
  const std::string verb = past ? kVerbs[size_t(vg)].first : kVerbs[size_t(vg)].second;
  const std::string obj = first_form ? kObjects[size_t(og)].first : kObjects[size_t(og)].second;
  std::vector<std::string> toks;
  std::vector<int> heads;
  std::vector<std::string> rels;
  if (name.size() == 1) {
    toks = {name[0], verb, "the", obj, "."};
    heads = {2, 0, 4, 2, 2};
    rels = {"nsubj", "root", "det", "obj", "punct"};
  } else {
    toks = {name[0], name[1], verb, "the", obj, "."};
    heads = {3, 1, 0, 5, 3, 3};
    rels = {"nsubj", "flat", "root", "det", "obj", "punct"};
  }
  s.tree = make_tree(toks, heads, rels);
  return s;
}

// "someone V the O ." / "something V the O ."
Sent indefinite_event(const std::string& subj, int vg, bool past, int og) {
  Sent s;
  s.kind = "event";
  s.verb_group = vg;
  s.object_group = og;
  s.subj_len = 1;
  const std::string verb = past ? kVerbs[size_t(vg)].first : kVerbs[size_t(vg)].second;
  s.tree = make_tree({subj, verb, "the", kObjects[size_t(og)].first, "."}, {2, 0, 4, 2, 2},
                     {"nsubj", "root", "det", "obj", "punct"});
  return s;
}

// "the N was ADJ ." with an optional intensifier
Sent opinion_sentence(const std::string& noun, const std::string& adj, int polarity, bool strong,
                      bool very) {
  Sent s;
  s.kind = "opinion";
  s.polarity = polarity;
  s.strong = strong;
  if (very) {
    s.tree = make_tree({"the", noun, "was", "very", adj, "."}, {2, 5, 5, 5, 0, 5},
                       {"det", "nsubj", "cop", "advmod", "root", "punct"});
  } else {
    s.tree = make_tree({"the", noun, "was", adj, "."}, {2, 4, 4, 0, 4},
                       {"det", "nsubj", "cop", "root", "punct"});
  }
  return s;
}

Sent neutral_sentence(int variant) {
  Sent s;
  s.kind = "neutral";
  switch (variant % 4) {
    case 0:
      s.tree = make_tree({"we", "came", "here", "again", "yesterday", "."}, {2, 0, 2, 2, 2, 2},
                         {"nsubj", "root", "advmod", "advmod", "advmod", "punct"});
      break;
    case 1:
      s.tree = make_tree({"they", "came", "here", "today", "."}, {2, 0, 2, 2, 2},
                         {"nsubj", "root", "advmod", "advmod", "punct"});
      break;
    case 2:
      s.tree = make_tree({"we", "came", "here", "today", "."}, {2, 0, 2, 2, 2},
                         {"nsubj", "root", "advmod", "advmod", "punct"});
      break;
    default:
      s.tree = make_tree({"they", "came", "here", "again", "."}, {2, 0, 2, 2, 2},
                         {"nsubj", "root", "advmod", "advmod", "punct"});
      break;
  }
  return s;
}

Sent question_sentence(int vg, bool past, int og, bool first_form) {
  Sent s;
  s.kind = "question";
  const std::string verb = past ? kVerbs[size_t(vg)].first : kVerbs[size_t(vg)].second;
  const std::string obj = first_form ? kObjects[size_t(og)].first : kObjects[size_t(og)].second;
  s.tree = make_tree({"who", verb, "the", obj, "?"}, {2, 0, 4, 2, 2},
                     {"nsubj", "root", "det", "obj", "punct"});
  return s;
}

Sent chain_of(const Sent& base) {
  Sent s;
  s.kind = "chain";
  s.tree = DepTree::chain(base.tree.surface_tokens());
  return s;
}

std::vector<std::string> flat_tokens(const std::vector<const Sent*>& sents) {
  std::vector<std::string> out;
  for (const Sent* s : sents) {
    auto t = s->tree.surface_tokens();
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

Json sentences_json(const std::vector<const Sent*>& sents) {
  Json arr = Json::array();
  for (const Sent* s : sents) {
    arr.push_back(Json{{"tokens", s->tree.surface_tokens()},
                       {"head", s->tree.head},
                       {"deprel", s->tree.relation}});
  }
  return arr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fixture generator"};
  std::string out_dir = "data";
  uint64_t seed = 7;
  app.add_option("--out-dir", out_dir, "output directory");
  app.add_option("--seed", seed, "rng seed");
  CLI11_PARSE(app, argc, argv);

  std::mt19937_64 rng(seed);
  auto pick = [&](size_t n) { return std::uniform_int_distribution<size_t>(0, n - 1)(rng); };

  // ------------------------------------------------------------------
  // Sentence pool (exactly 200 sentences, each kept distinct as a
  // (tokens, heads) pair; 40 of them are chain-parsed duplicates so the
  // stub-parse relation is well represented in training).
  std::vector<Sent> pool;
  std::set<std::string> seen;
  auto add = [&](const Sent& s) {
    std::string key = tp::join(s.tree.surface_tokens(), " ") + "|" + s.tree.relation[0];
    for (int h : s.tree.head) key += "," + std::to_string(h);
    if (seen.count(key)) return false;
    seen.insert(key);
    pool.push_back(s);
    return true;
  };

  // 120 person events: walk the full combination lattice, keep the first 120.
  {
    int added = 0, step = 0;
    for (int pi = 0; added < 120 && pi < int(kPersons.size()); ++pi)
      for (int vg = 0; added < 120 && vg < int(kVerbs.size()); ++vg)
        for (int og = 0; added < 120 && og < int(kObjects.size()); ++og) {
          if ((pi + vg + og) % 3 != 0) continue;  // thin the lattice for variety
          ++step;
          const Sent s = event_sentence(kPersons[size_t(pi)], vg, step % 2 == 0, og,
                                        (step / 2) % 2 == 0,
                                        (step % 3 == 0) ? step % int(kPlaces.size()) : -1);
          if (add(s)) ++added;
        }
    if (added < 120) throw tp::RuntimeFailure("event pool underfull");
  }
  // 12 name events
  {
    int added = 0;
    for (int i = 0; added < 12 && i < 60; ++i) {
      std::vector<std::string> name;
      if (i % 6 == 5)
        name = {"donald", "trump"};
      else
        name = {kNames[size_t(i) % kNames.size()]};
      const Sent s = name_event(name, (i * 2 + i / 6) % int(kVerbs.size()), i % 2 == 0,
                                i % int(kObjects.size()), (i / 2) % 2 == 0);
      if (add(s)) ++added;
    }
  }
  // 6 indefinite events
  {
    int added = 0;
    for (int i = 0; added < 6 && i < 60; ++i) {
      const Sent s = indefinite_event(i % 2 == 0 ? "someone" : "something",
                                      (i * 3 + i / 5) % int(kVerbs.size()), i % 2 == 0,
                                      i % int(kObjects.size()));
      if (add(s)) ++added;
    }
  }
  // 48 opinion sentences: each noun appears with mild and strong cues of
  // both polarities.
  {
    int added = 0;
    for (int ni = 0; added < 32 && ni < int(kReviewNouns.size()); ++ni)
      for (int ai = 0; added < 32 && ai < 4; ++ai)
        for (int strong = 0; added < 32 && strong < 2; ++strong) {
          const bool positive = (ni + ai) % 2 == 0;
          const auto& adjs = positive ? (strong ? kPosStrong : kPosMild)
                                      : (strong ? kNegStrong : kNegMild);
          const Sent s = opinion_sentence(kReviewNouns[size_t(ni)], adjs[size_t(ai)],
                                          positive ? 1 : -1, strong == 1,
                                          (ni + ai + strong) % 5 == 0);
          if (add(s)) ++added;
        }
    if (added < 32) throw tp::RuntimeFailure("opinion pool underfull");
  }
  // 4 neutral fillers
  for (int i = 0; i < 4; ++i) add(neutral_sentence(i));
  // 10 question exemplars
  {
    int added = 0;
    for (int i = 0; added < 10 && i < 100; ++i) {
      const Sent s = question_sentence(i % int(kVerbs.size()), i % 2 == 0,
                                       (i * 5 + 1 + i / 10) % int(kObjects.size()),
                                       (i / 2) % 2 == 0);
      if (add(s)) ++added;
    }
  }
  // 16 chain-parsed duplicates of earlier sentences
  {
    const size_t base_count = pool.size();
    int added = 0;
    for (size_t i = 0; added < 16 && i < base_count; ++i) {
      if (pool[i].kind == "question") continue;
      if (i % 3 != 0 && added > 10) continue;
      if (add(chain_of(pool[i]))) ++added;
    }
  }
  for (int guard = 0; pool.size() < 200 && guard < 100000; ++guard) {
    const Sent s = event_sentence(kPersons[pick(kPersons.size())], int(pick(kVerbs.size())),
                                  pick(2) == 0, int(pick(kObjects.size())), pick(2) == 0,
                                  int(pick(kPlaces.size())));
    add(s);
  }
  if (pool.size() != 200) {
    std::cerr << "pool has " << pool.size() << " sentences, expected 200\n";
    return 1;
  }

  std::vector<DepTree> corpus;
  for (const Sent& s : pool) corpus.push_back(s.tree);
  tp::write_file_atomic(out_dir + "/corpus.conllu", tp::treeio::serialize_conllu(corpus));

  // Index the pool for composition.
  std::vector<const Sent*> events, opinions_mild, opinions_strong, neutrals;
  for (const Sent& s : pool) {
    if (s.kind == "event" && s.subj_len == 2) events.push_back(&s);
    if (s.kind == "opinion" && !s.strong) opinions_mild.push_back(&s);
    if (s.kind == "opinion" && s.strong) opinions_strong.push_back(&s);
    if (s.kind == "neutral") neutrals.push_back(&s);
  }

  // ------------------------------------------------------------------
  // Embeddings: synonym groups share a base direction with a small
  // offset, so nearest-neighbour lookups stay inside the group.
  {
    const int dim = 16;
    std::ostringstream out;
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto base_vec = [&] {
      tp::Vec v(size_t(dim), 0.0);
      for (double& x : v) x = gauss(rng);
      return v;
    };
    auto emit = [&](const std::string& word, const tp::Vec& base, double spread) {
      out << word;
      char buf[32];
      for (int d = 0; d < dim; ++d) {
        std::snprintf(buf, sizeof(buf), " %.4f", base[size_t(d)] + spread * gauss(rng));
        out << buf;
      }
      out << "\n";
    };
    for (const auto& [a, b] : kVerbs) {
      const tp::Vec base = base_vec();
      emit(a, base, 0.05);
      emit(b, base, 0.05);
    }
    for (const auto& [a, b] : kObjects) {
      const tp::Vec base = base_vec();
      emit(a, base, 0.05);
      emit(b, base, 0.05);
    }
    {
      const tp::Vec base = base_vec();
      for (const std::string& p : kPersons) emit(p, base, 0.35);
    }
    {
      const tp::Vec base = base_vec();
      for (const std::string& n : kNames) emit(n, base, 0.35);
      emit("donald", base, 0.35);
      emit("trump", base, 0.35);
    }
    {
      const tp::Vec base = base_vec();
      for (const std::string& a : kPosMild) emit(a, base, 0.3);
      for (const std::string& a : kPosStrong) emit(a, base, 0.3);
    }
    {
      const tp::Vec base = base_vec();
      for (const std::string& a : kNegMild) emit(a, base, 0.3);
      for (const std::string& a : kNegStrong) emit(a, base, 0.3);
    }
    {
      const tp::Vec base = base_vec();
      for (const std::string& p : kPlaces) emit(p, base, 0.35);
    }
    {
      const tp::Vec base = base_vec();
      for (const std::string& n : kReviewNouns) emit(n, base, 0.35);
    }
    tp::write_file_atomic(out_dir + "/embeddings.txt", out.str());
  }

  // ------------------------------------------------------------------
  // Static rule and stopword files.
  tp::write_file_atomic(out_dir + "/question_rules.txt",
                        tp::seedgen::RuleTable::builtin().serialize());
  {
    std::vector<std::string> sw(tp::pipeline::Stopwords::builtin().words.begin(),
                                tp::pipeline::Stopwords::builtin().words.end());
    std::sort(sw.begin(), sw.end());
    tp::write_file_atomic(out_dir + "/stopwords.txt", tp::join(sw, "\n") + "\n");
  }

  // ------------------------------------------------------------------
  // Sentiment reviews.
  auto pick_opinion = [&](int polarity, bool strong) {
    const auto& v = strong ? opinions_strong : opinions_mild;
    for (int guard = 0; guard < 1000; ++guard) {
      const Sent* s = v[pick(v.size())];
      if (s->polarity == polarity) return s;
    }
    throw tp::RuntimeFailure("no opinion sentence with requested polarity");
  };
  auto filler = [&]() -> const Sent* {
    if (pick(2) == 0) return neutrals[pick(neutrals.size())];
    return events[pick(events.size())];
  };

  auto write_jsonl = [&](const std::string& path, const std::vector<Json>& lines) {
    std::ostringstream out;
    for (const Json& j : lines) out << j.dump() << "\n";
    tp::write_file_atomic(out_dir + "/" + path, out.str());
  };

  std::vector<Json> cls_train, cls_heldout, cls_attack_lines;
  int rev_no = 0;
  auto review_json = [&](const std::vector<const Sent*>& sents, int label, bool with_parse) {
    ++rev_no;
    char id[32];
    std::snprintf(id, sizeof(id), "rev-%04d", rev_no);
    if (with_parse)
      return Json{{"id", id}, {"label", label}, {"sentences", sentences_json(sents)}};
    return Json{{"id", id}, {"text", flat_tokens(sents)}, {"label", label}};
  };
  auto make_pure = [&](bool strong) {
    const int polarity = pick(2) == 0 ? 1 : -1;
    std::vector<const Sent*> sents{pick_opinion(polarity, strong)};
    sents.push_back(filler());
    if (pick(2) == 0) sents.push_back(filler());
    std::shuffle(sents.begin(), sents.end(), rng);
    return std::make_pair(sents, polarity > 0 ? 1 : 0);
  };
  auto make_dominance = [&] {
    const int polarity = pick(2) == 0 ? 1 : -1;
    std::vector<const Sent*> sents{pick_opinion(polarity, false),
                                   pick_opinion(-polarity, true)};
    if (pick(2) == 0) sents.push_back(filler());
    std::shuffle(sents.begin(), sents.end(), rng);
    return std::make_pair(sents, -polarity > 0 ? 1 : 0);
  };

  for (int i = 0; i < 60; ++i) {
    auto [sents, label] = make_pure(false);
    cls_train.push_back(review_json(sents, label, false));
  }
  for (int i = 0; i < 60; ++i) {
    auto [sents, label] = make_pure(true);
    cls_train.push_back(review_json(sents, label, false));
  }
  for (int i = 0; i < 40; ++i) {
    auto [sents, label] = make_dominance();
    cls_train.push_back(review_json(sents, label, false));
  }
  for (int i = 0; i < 40; ++i) {
    auto [sents, label] = i % 2 == 0 ? make_pure(i % 4 == 0) : make_dominance();
    cls_heldout.push_back(review_json(sents, label, false));
  }
  // Attack reviews carry exactly one mild cue plus fillers, so a single
  // strong opposite-polarity token can flip them.
  for (int i = 0; i < 50; ++i) {
    const int polarity = i % 2 == 0 ? 1 : -1;
    std::vector<const Sent*> sents{pick_opinion(polarity, false), filler()};
    if (i % 3 == 0) sents.push_back(filler());
    std::shuffle(sents.begin(), sents.end(), rng);
    cls_attack_lines.push_back(review_json(sents, polarity > 0 ? 1 : 0, true));
  }
  write_jsonl("sentiment_train.jsonl", cls_train);
  write_jsonl("sentiment_heldout.jsonl", cls_heldout);
  write_jsonl("sentiment_attack.jsonl", cls_attack_lines);

  // ------------------------------------------------------------------
  // QA paragraphs: three events with distinct verb and object groups;
  // the question may use the paired surface form of the verb or object.
  auto make_qa = [&](int idx, bool with_parse, bool force_flip) {
    std::vector<const Sent*> sents;
    std::set<int> vgs, ogs;
    while (sents.size() < 3) {
      const Sent* s = events[pick(events.size())];
      if (vgs.count(s->verb_group) || ogs.count(s->object_group)) continue;
      vgs.insert(s->verb_group);
      ogs.insert(s->object_group);
      sents.push_back(s);
    }
    const int k = int(pick(3));
    const Sent* target = sents[size_t(k)];
    const auto target_toks = target->tree.surface_tokens();
    // Verb/object surface may flip to the paired form.
    const std::string tverb = target_toks[2];
    const bool verb_was_first = kVerbs[size_t(target->verb_group)].first == tverb;
    const bool flip_verb = force_flip || pick(2) == 0;
    const std::string qverb = (verb_was_first != flip_verb)
                                  ? kVerbs[size_t(target->verb_group)].first
                                  : kVerbs[size_t(target->verb_group)].second;
    const std::string tobj = target_toks[4];
    const bool obj_was_first = kObjects[size_t(target->object_group)].first == tobj;
    const bool flip_obj = force_flip || pick(2) == 0;
    const std::string qobj = (obj_was_first != flip_obj)
                                 ? kObjects[size_t(target->object_group)].first
                                 : kObjects[size_t(target->object_group)].second;
    const std::vector<std::string> question = {"who", qverb, "the", qobj, "?"};
    int off = 0;
    for (int i = 0; i < k; ++i) off += sents[size_t(i)]->tree.size();
    const int answer_start = off;
    const int answer_end = off + target->subj_len - 1;
    const auto para = flat_tokens(sents);
    std::string answer_text;
    for (int i = answer_start; i <= answer_end; ++i)
      answer_text += (i > answer_start ? " " : "") + para[size_t(i)];
    char id[32];
    std::snprintf(id, sizeof(id), "qa-%04d", idx);
    if (with_parse)
      return Json{{"id", id},
                  {"sentences", sentences_json(sents)},
                  {"question", question},
                  {"answer_sentence", k},
                  {"answer_start", answer_start},
                  {"answer_end", answer_end},
                  {"answer_text", answer_text}};
    return Json{{"id", id},
                {"paragraph", para},
                {"question", question},
                {"answer_start", answer_start},
                {"answer_end", answer_end}};
  };

  std::vector<Json> qa_train, qa_heldout, qa_attack_lines;
  int qa_no = 0;
  for (int i = 0; i < 120; ++i) qa_train.push_back(make_qa(++qa_no, false, false));
  for (int i = 0; i < 30; ++i) qa_heldout.push_back(make_qa(++qa_no, false, false));
  // Attack questions always paraphrase the event (paired verb and object
  // forms), so the protected sentence never pins the question's own words.
  for (int i = 0; i < 30; ++i) qa_attack_lines.push_back(make_qa(++qa_no, true, true));
  write_jsonl("qa_train.jsonl", qa_train);
  write_jsonl("qa_heldout.jsonl", qa_heldout);
  write_jsonl("qa_attack.jsonl", qa_attack_lines);

  std::cout << "wrote fixtures to " << out_dir << "/ (pool=" << pool.size()
            << ", reviews=" << cls_train.size() + cls_heldout.size() + cls_attack_lines.size()
            << ", qa=" << qa_train.size() + qa_heldout.size() + qa_attack_lines.size() << ")\n";
  return 0;
}
