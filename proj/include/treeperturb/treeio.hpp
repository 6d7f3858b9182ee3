#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "treeperturb/common.hpp"

namespace treeperturb::treeio {

struct Token {
  int index = 0;  // 1-based surface position
  std::string surface;
  std::string norm;  // lowercased surface
};

// A dependency tree over one sentence. head[i] and relation[i] describe
// token i+1; head value 0 marks the root.
struct DepTree {
  std::vector<Token> tokens;
  std::vector<int> head;
  std::vector<std::string> relation;

  int size() const { return int(tokens.size()); }
  int head_of(int index) const { return head[index - 1]; }
  const std::string& relation_of(int index) const { return relation[index - 1]; }
  std::vector<std::string> surface_tokens() const;
  std::vector<std::string> norm_tokens() const;

  static DepTree from_tokens(const std::vector<std::string>& surfaces,
                             const std::vector<int>& heads,
                             const std::vector<std::string>& relations);
  // Deterministic stub parse for generated sentences: token 1 is the root
  // and every other token attaches to its left neighbour.
  static DepTree chain(const std::vector<std::string>& surfaces);
};

std::vector<DepTree> parse_conllu(const std::string& text);
std::string serialize_conllu(const std::vector<DepTree>& trees);

// Every invariant violation found; an empty list means the tree is valid.
std::vector<std::string> validate(const DepTree& tree);

// Root first, then by increasing depth; ties broken by surface index.
std::vector<int> level_order(const DepTree& tree);

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> words{"<pad>", "<unk>"};
  std::unordered_map<std::string, int> index{{"<pad>", kPad}, {"<unk>", kUnk}};

  int add(const std::string& w);
  int id(const std::string& w) const;
  bool contains(const std::string& w) const { return index.count(w) > 0; }
  const std::string& word(int id) const { return words[size_t(id)]; }
  int size() const { return int(words.size()); }
  uint64_t hash() const;

  static Vocab build(const std::vector<DepTree>& corpus);
};

struct EmbeddingTable {
  int dim = 0;
  std::vector<std::string> words;
  std::unordered_map<std::string, int> index;
  Mat vectors;       // one row per word
  int skipped = 0;   // malformed lines dropped by the loader

  bool contains(const std::string& w) const { return index.count(w) > 0; }
  Vec vector_of(const std::string& w) const;
  int size() const { return int(words.size()); }
};

EmbeddingTable load_embeddings(const std::string& path, int dim);

// k nearest neighbours of `word` by cosine similarity, excluding the word
// itself; similarity ties break lexicographically. If fewer than k other
// words exist, all of them are returned.
std::vector<std::string> nearest_neighbors(const std::string& word,
                                           const EmbeddingTable& table, int k);

}  // namespace treeperturb::treeio
