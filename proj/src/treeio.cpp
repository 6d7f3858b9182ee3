#include "treeperturb/treeio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "treeperturb/kernels.hpp"

namespace treeperturb::treeio {

std::vector<std::string> DepTree::surface_tokens() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const Token& t : tokens) out.push_back(t.surface);
  return out;
}

std::vector<std::string> DepTree::norm_tokens() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const Token& t : tokens) out.push_back(t.norm);
  return out;
}

DepTree DepTree::from_tokens(const std::vector<std::string>& surfaces,
                             const std::vector<int>& heads,
                             const std::vector<std::string>& relations) {
  if (surfaces.size() != heads.size() || surfaces.size() != relations.size())
    throw DataError("from_tokens: arity mismatch");
  DepTree t;
  for (size_t i = 0; i < surfaces.size(); ++i)
    t.tokens.push_back(Token{int(i) + 1, surfaces[i], lower(surfaces[i])});
  t.head = heads;
  t.relation = relations;
  return t;
}

DepTree DepTree::chain(const std::vector<std::string>& surfaces) {
  std::vector<int> heads(surfaces.size());
  std::vector<std::string> rels(surfaces.size(), "dep");
  for (size_t i = 0; i < surfaces.size(); ++i) heads[i] = int(i);
  if (!surfaces.empty()) rels[0] = "root";
  return from_tokens(surfaces, heads, rels);
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_int(const std::string& s, int* out) {
  if (s.empty()) return false;
  size_t i = 0;
  long v = 0;
  for (; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
    if (v > 1'000'000) return false;
  }
  *out = int(v);
  return true;
}

}  // namespace

std::vector<DepTree> parse_conllu(const std::string& text) {
  std::vector<DepTree> trees;
  DepTree cur;
  int sentence_no = 1;
  int line_no = 0;

  auto fail = [&](const std::string& why) {
    throw DataError("conllu parse error in sentence " + std::to_string(sentence_no) +
                    ", line " + std::to_string(line_no) + ": " + why);
  };

  auto flush = [&] {
    if (cur.tokens.empty()) return;
    int roots = 0;
    for (int h : cur.head) {
      if (h == 0) ++roots;
      if (h < 0 || h > cur.size()) fail("HEAD out of range");
    }
    if (roots == 0) fail("no root token");
    if (roots > 1) fail("multiple root tokens");
    trees.push_back(std::move(cur));
    cur = DepTree{};
    ++sentence_no;
  };

  for (const std::string& line : split_lines(text)) {
    ++line_no;
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') continue;
    std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 10) fail("expected 10 tab-separated columns, got " +
                                std::to_string(cols.size()));
    const std::string& id = cols[0];
    // Multiword ranges (1-2) and empty nodes (1.1) are not tree tokens.
    if (id.find('-') != std::string::npos || id.find('.') != std::string::npos) continue;
    int idx = 0, head = 0;
    if (!parse_int(id, &idx) || idx < 1) fail("non-integer ID '" + id + "'");
    if (!parse_int(cols[6], &head)) fail("non-integer HEAD '" + cols[6] + "'");
    if (cols[1].empty()) fail("empty FORM");
    if (idx != cur.size() + 1) fail("non-sequential ID " + std::to_string(idx));
    cur.tokens.push_back(Token{idx, cols[1], lower(cols[1])});
    cur.head.push_back(head);
    cur.relation.push_back(cols[7]);
  }
  ++line_no;
  flush();
  return trees;
}

std::string serialize_conllu(const std::vector<DepTree>& trees) {
  std::ostringstream out;
  for (size_t s = 0; s < trees.size(); ++s) {
    const DepTree& t = trees[s];
    out << "# sent_id = " << (s + 1) << "\n";
    for (int i = 1; i <= t.size(); ++i) {
      out << i << '\t' << t.tokens[i - 1].surface << "\t_\t_\t_\t_\t"
          << t.head_of(i) << '\t' << t.relation_of(i) << "\t_\t_\n";
    }
    out << "\n";
  }
  return out.str();
}

std::vector<std::string> validate(const DepTree& tree) {
  std::vector<std::string> bad;
  const int n = tree.size();
  if (int(tree.head.size()) != n) bad.push_back("head map does not cover every token");
  if (int(tree.relation.size()) != n) bad.push_back("relation map does not cover every token");
  if (int(tree.head.size()) != n || n == 0) return bad;

  int roots = 0;
  for (int i = 1; i <= n; ++i) {
    int h = tree.head_of(i);
    if (h == 0) ++roots;
    if (h < 0 || h > n)
      bad.push_back("token " + std::to_string(i) + " has out-of-range head " + std::to_string(h));
    if (h == i) bad.push_back("token " + std::to_string(i) + " is its own head");
  }
  if (roots == 0) bad.push_back("no root");
  if (roots > 1) bad.push_back(std::to_string(roots) + " roots");
  for (int i = 1; i <= n; ++i) {
    if (tree.relation[i - 1].empty())
      bad.push_back("token " + std::to_string(i) + " missing relation");
  }
  // Walk each token toward the root; revisiting a token means a cycle,
  // running out of steps means a disconnected region.
  for (int i = 1; i <= n; ++i) {
    int cur = i, steps = 0;
    bool reached = false;
    while (steps <= n) {
      int h = (cur >= 1 && cur <= n) ? tree.head_of(cur) : -1;
      if (h == 0) {
        reached = true;
        break;
      }
      if (h < 1 || h > n) break;
      cur = h;
      ++steps;
    }
    if (!reached) {
      if (steps > n)
        bad.push_back("cycle reachable from token " + std::to_string(i));
      else
        bad.push_back("token " + std::to_string(i) + " cannot reach the root");
    }
  }
  std::sort(bad.begin(), bad.end());
  bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
  return bad;
}

std::vector<int> level_order(const DepTree& tree) {
  std::vector<std::string> bad = validate(tree);
  if (!bad.empty()) throw DataError("level_order on invalid tree: " + join(bad, "; "));
  const int n = tree.size();
  std::vector<int> depth(size_t(n) + 1, -1);
  for (int i = 1; i <= n; ++i) {
    // depth by chasing heads; memoised implicitly by small n
    int d = 0, cur = i;
    while (tree.head_of(cur) != 0) {
      cur = tree.head_of(cur);
      ++d;
    }
    depth[i] = d;
  }
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i + 1;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return depth[a] != depth[b] ? depth[a] < depth[b] : a < b; });
  return order;
}

int Vocab::add(const std::string& w) {
  auto it = index.find(w);
  if (it != index.end()) return it->second;
  int id = int(words.size());
  words.push_back(w);
  index.emplace(w, id);
  return id;
}

int Vocab::id(const std::string& w) const {
  auto it = index.find(w);
  return it == index.end() ? kUnk : it->second;
}

uint64_t Vocab::hash() const {
  uint64_t h = 1469598103934665603ull;
  for (const std::string& w : words) {
    h = fnv1a(w.data(), w.size(), h);
    h = fnv1a("\x1f", 1, h);
  }
  return h;
}

Vocab Vocab::build(const std::vector<DepTree>& corpus) {
  Vocab v;
  for (const DepTree& t : corpus)
    for (const Token& tok : t.tokens) v.add(tok.norm);
  return v;
}

Vec EmbeddingTable::vector_of(const std::string& w) const {
  auto it = index.find(w);
  if (it == index.end()) throw DataError("word not in embedding table: " + w);
  const double* r = vectors.row(it->second);
  return Vec(r, r + dim);
}

EmbeddingTable load_embeddings(const std::string& path, int dim) {
  if (dim < 1) throw ConfigError("embedding dimension must be positive");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings file: " + path);
  EmbeddingTable table;
  table.dim = dim;
  std::vector<Vec> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    Vec v;
    v.reserve(size_t(dim));
    double x;
    while (ss >> x) v.push_back(x);
    bool finite = true;
    for (double y : v) finite = finite && std::isfinite(y);
    if (int(v.size()) != dim || !finite || word.empty() || table.contains(word)) {
      ++table.skipped;
      continue;
    }
    table.index.emplace(word, int(table.words.size()));
    table.words.push_back(word);
    rows.push_back(std::move(v));
  }
  if (rows.empty()) throw DataError("no usable embedding lines in " + path);
  table.vectors = Mat(int(rows.size()), dim);
  for (size_t r = 0; r < rows.size(); ++r)
    std::copy(rows[r].begin(), rows[r].end(), table.vectors.row(int(r)));
  return table;
}

std::vector<std::string> nearest_neighbors(const std::string& word,
                                           const EmbeddingTable& table, int k) {
  if (k < 1) throw ConfigError("nearest_neighbors: k must be >= 1");
  auto it = table.index.find(word);
  if (it == table.index.end()) throw DataError("word not in embedding table: " + word);
  Vec sims(size_t(table.size()), 0.0);
  kern::cosine_scan(table.vectors, table.vectors.row(it->second), sims.data());
  std::vector<int> order;
  order.reserve(size_t(table.size()) - 1);
  for (int i = 0; i < table.size(); ++i)
    if (i != it->second) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return table.words[a] < table.words[b];
  });
  if (int(order.size()) > k) order.resize(size_t(k));
  std::vector<std::string> out;
  out.reserve(order.size());
  for (int i : order) out.push_back(table.words[i]);
  return out;
}

}  // namespace treeperturb::treeio
