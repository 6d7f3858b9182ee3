#include "treeperturb/seedgen.hpp"

#include <cctype>
#include <sstream>

namespace treeperturb::seedgen {

std::vector<std::string> SeedSpec::answer_tokens() const {
  if (answer_start < 0) return {};
  return std::vector<std::string>(tokens.begin() + answer_start,
                                  tokens.begin() + answer_end + 1);
}

SeedSpec seed_cls(const std::vector<std::vector<std::string>>& sentences, std::mt19937_64& rng) {
  std::vector<size_t> ok;
  for (size_t i = 0; i < sentences.size(); ++i)
    if (sentences[i].size() >= 3) ok.push_back(i);
  if (ok.empty()) throw DataError("seed_cls: no sentence with at least 3 tokens");
  std::uniform_int_distribution<size_t> pick(0, ok.size() - 1);
  SeedSpec seed;
  seed.strategy = "random-sentence";
  seed.tokens = sentences[ok[pick(rng)]];
  return seed;
}

int count_occurrences(const std::vector<std::string>& haystack,
                      const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return 0;
  int count = 0;
  for (size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool hit = true;
    for (size_t j = 0; j < needle.size(); ++j)
      if (lower(haystack[i + j]) != lower(needle[j])) {
        hit = false;
        break;
      }
    if (hit) ++count;
  }
  return count;
}

namespace {

bool is_slot(const std::string& s) {
  return s.size() >= 2 && s[0] == '$' && s != "$ANS";
}

// Backtracking match of a pattern over question tokens; slots capture one
// or more tokens. Patterns are tiny so the recursion is cheap.
bool match_from(const std::vector<std::string>& pat, size_t pi,
                const std::vector<std::string>& toks, size_t ti,
                std::vector<std::pair<std::string, std::vector<std::string>>>& caps) {
  if (pi == pat.size()) return ti == toks.size();
  const std::string& p = pat[pi];
  if (!is_slot(p)) {
    if (ti < toks.size() && lower(toks[ti]) == p)
      return match_from(pat, pi + 1, toks, ti + 1, caps);
    return false;
  }
  for (size_t len = 1; ti + len <= toks.size(); ++len) {
    caps.emplace_back(p, std::vector<std::string>(toks.begin() + long(ti),
                                                  toks.begin() + long(ti + len)));
    if (match_from(pat, pi + 1, toks, ti + len, caps)) return true;
    caps.pop_back();
  }
  return false;
}

std::vector<RuleTable::Rule> parse_rules(const std::string& text, const std::string& origin) {
  std::vector<RuleTable::Rule> rules;
  int ln = 0;
  for (const std::string& line : split_lines(text)) {
    ++ln;
    if (line.empty() || line[0] == '#') continue;
    // Accept the arrow as either UTF-8 or plain ASCII.
    size_t arrow = line.find("\xe2\x86\x92");
    size_t arrow_len = 3;
    if (arrow == std::string::npos) {
      arrow = line.find("->");
      arrow_len = 2;
    }
    if (arrow == std::string::npos)
      throw DataError(origin + ":" + std::to_string(ln) + ": rule missing arrow");
    RuleTable::Rule r;
    r.pattern = split_ws(line.substr(0, arrow));
    r.templ = split_ws(line.substr(arrow + arrow_len));
    for (std::string& t : r.pattern)
      if (!is_slot(t)) t = lower(t);
    if (r.pattern.empty() || r.templ.empty())
      throw DataError(origin + ":" + std::to_string(ln) + ": empty rule side");
    rules.push_back(std::move(r));
  }
  return rules;
}

const char* kBuiltinRules =
    "who $1 ? \xe2\x86\x92 $ANS $1 .\n"
    "whom $1 ? \xe2\x86\x92 $ANS $1 .\n"
    "whose $1 ? \xe2\x86\x92 $ANS $1 .\n"
    "what $1 ? \xe2\x86\x92 $ANS $1 .\n"
    "which $1 ? \xe2\x86\x92 $ANS $1 .\n"
    "when did $1 ? \xe2\x86\x92 $1 $ANS .\n"
    "when $1 ? \xe2\x86\x92 $1 $ANS .\n"
    "where did $1 ? \xe2\x86\x92 $1 $ANS .\n"
    "where $1 ? \xe2\x86\x92 $1 $ANS .\n"
    "why $1 ? \xe2\x86\x92 $1 because $ANS .\n"
    "how many $1 ? \xe2\x86\x92 $ANS $1 .\n"
    "how much $1 ? \xe2\x86\x92 $ANS $1 .\n"
    "how $1 ? \xe2\x86\x92 $1 $ANS .\n";

}  // namespace

RuleTable RuleTable::load(const std::string& path) {
  RuleTable t;
  t.rules = parse_rules(read_file(path), path);
  if (t.rules.empty()) throw DataError("rule table is empty: " + path);
  return t;
}

RuleTable RuleTable::builtin() {
  RuleTable t;
  t.rules = parse_rules(kBuiltinRules, "<builtin>");
  return t;
}

std::string RuleTable::serialize() const {
  std::ostringstream out;
  for (const Rule& r : rules)
    out << join(r.pattern, " ") << " \xe2\x86\x92 " << join(r.templ, " ") << "\n";
  return out.str();
}

SeedSpec question_to_statement(const std::vector<std::string>& question,
                               const std::vector<std::string>& target_answer,
                               const RuleTable& rules) {
  if (target_answer.empty()) throw DataError("question_to_statement: empty target answer");
  SeedSpec seed;
  seed.strategy = "question-based";

  auto expand = [&](const RuleTable::Rule& rule,
                    const std::vector<std::pair<std::string, std::vector<std::string>>>& caps) {
    std::vector<std::string> out;
    int ans_start = -1;
    for (const std::string& t : rule.templ) {
      if (t == "$ANS") {
        ans_start = int(out.size());
        out.insert(out.end(), target_answer.begin(), target_answer.end());
      } else if (is_slot(t)) {
        for (const auto& [name, toks] : caps)
          if (name == t) out.insert(out.end(), toks.begin(), toks.end());
      } else {
        out.push_back(t);
      }
    }
    seed.tokens = std::move(out);
    if (ans_start >= 0) {
      seed.answer_start = ans_start;
      seed.answer_end = ans_start + int(target_answer.size()) - 1;
    }
  };

  for (const RuleTable::Rule& rule : rules.rules) {
    std::vector<std::pair<std::string, std::vector<std::string>>> caps;
    if (match_from(rule.pattern, 0, question, 0, caps)) {
      expand(rule, caps);
      break;
    }
  }
  if (seed.tokens.empty() || seed.answer_start < 0) {
    // Fallback: answer first, then the question words minus the mark.
    seed = SeedSpec{};
    seed.strategy = "question-based";
    seed.fallback_used = true;
    seed.warnings.push_back("no rewrite rule matched; used answer-prefix fallback");
    seed.tokens = target_answer;
    seed.answer_start = 0;
    seed.answer_end = int(target_answer.size()) - 1;
    for (const std::string& q : question)
      if (q != "?") seed.tokens.push_back(lower(q));
    seed.tokens.push_back(".");
  }
  const int occurrences = count_occurrences(seed.tokens, target_answer);
  if (occurrences != 1)
    seed.warnings.push_back("target answer occurs " + std::to_string(occurrences) +
                            " times in the seed");
  return seed;
}

treeio::DepTree statement_tree(const std::vector<std::string>& tokens, int answer_start,
                               int answer_end) {
  const int n = int(tokens.size());
  const auto is_det = [](const std::string& t) {
    const std::string w = lower(t);
    return w == "the" || w == "a" || w == "an" || w == "this" || w == "that";
  };
  const auto is_case = [](const std::string& t) {
    const std::string w = lower(t);
    return w == "in" || w == "at" || w == "on" || w == "near" || w == "with" || w == "from";
  };
  const auto is_punct = [](const std::string& t) {
    for (char c : t)
      if (std::isalnum(static_cast<unsigned char>(c))) return false;
    return !t.empty();
  };
  // Shape check: answer span leads the sentence and a verb-slot follows.
  if (answer_start != 0 || answer_end < 0 || answer_end + 1 >= n ||
      is_punct(tokens[size_t(answer_end + 1)]))
    return treeio::DepTree::chain(tokens);

  const int root = answer_end + 2;  // 1-based index of the main verb
  std::vector<int> heads(size_t(n), 0);
  std::vector<std::string> rels(size_t(n), "dep");

  // Subject span: determiner-led spans head on their last token, name-like
  // spans on their first.
  const bool det_led = is_det(tokens[0]);
  const int subj_head = det_led ? answer_end + 1 : 1;  // 1-based
  for (int i = answer_start; i <= answer_end; ++i) {
    const int idx = i + 1;
    if (idx == subj_head) {
      heads[size_t(i)] = root;
      rels[size_t(i)] = "nsubj";
    } else {
      heads[size_t(i)] = subj_head;
      rels[size_t(i)] = det_led ? "det" : "flat";
    }
  }
  heads[size_t(root - 1)] = 0;
  rels[size_t(root - 1)] = "root";

  bool saw_object = false;
  for (int i = root; i < n; ++i) {  // 0-based positions after the verb
    const std::string& t = tokens[size_t(i)];
    if (is_punct(t)) {
      heads[size_t(i)] = root;
      rels[size_t(i)] = "punct";
      continue;
    }
    if (is_det(t) || is_case(t)) {
      // Attach to the next non-functional token; fall back to the root.
      int j = i + 1;
      while (j < n && (is_det(tokens[size_t(j)]) || is_case(tokens[size_t(j)]) ||
                       is_punct(tokens[size_t(j)])))
        ++j;
      heads[size_t(i)] = j < n ? j + 1 : root;
      rels[size_t(i)] = is_det(t) ? "det" : "case";
      continue;
    }
    heads[size_t(i)] = root;
    rels[size_t(i)] = saw_object ? "obl" : "obj";
    saw_object = true;
  }
  treeio::DepTree tree = treeio::DepTree::from_tokens(tokens, heads, rels);
  if (!treeio::validate(tree).empty()) return treeio::DepTree::chain(tokens);
  return tree;
}

SeedSpec answer_based_seed(const std::vector<std::string>& answer_sentence, int span_start,
                           int span_end, const treeio::EmbeddingTable& table,
                           const std::vector<std::string>* targeted_answer) {
  if (answer_sentence.empty()) throw DataError("answer_based_seed: empty sentence");
  if (span_start < 0 || span_end < span_start || span_end >= int(answer_sentence.size()))
    throw DataError("answer_based_seed: span out of range");
  SeedSpec seed;
  seed.strategy = "answer-based";
  if (targeted_answer) {
    seed.tokens.assign(answer_sentence.begin(), answer_sentence.begin() + span_start);
    seed.answer_start = int(seed.tokens.size());
    seed.tokens.insert(seed.tokens.end(), targeted_answer->begin(), targeted_answer->end());
    seed.answer_end = int(seed.tokens.size()) - 1;
    seed.tokens.insert(seed.tokens.end(), answer_sentence.begin() + span_end + 1,
                       answer_sentence.end());
  } else {
    seed.tokens = answer_sentence;
    seed.answer_start = span_start;
    seed.answer_end = span_end;
    for (int i = span_start; i <= span_end; ++i) {
      const std::string w = lower(answer_sentence[size_t(i)]);
      if (!table.contains(w)) {
        seed.warnings.push_back("answer token '" + w + "' not in embedding table, kept as-is");
        continue;
      }
      auto nn = nearest_neighbors(w, table, 1);
      if (!nn.empty()) seed.tokens[size_t(i)] = nn[0];
    }
  }
  return seed;
}

}  // namespace treeperturb::seedgen
