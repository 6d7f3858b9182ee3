#pragma once

#include <random>
#include <string>
#include <vector>

#include "treeperturb/autodiff.hpp"
#include "treeperturb/treeio.hpp"

namespace treeperturb::autoenc {

struct Dims {
  int hidden = 300;
  int emb = 300;
  int rel = 50;
};

// Child-sum tree cell weights. The U matrices act on a child message,
// which is the child hidden state concatenated with its relation embedding.
struct EncCell {
  ad::Param Wi, Ui, bi;
  ad::Param Wf, Uf, bf;
  ad::Param Wo, Uo, bo;
  ad::Param Wu, Uu, bu;
};

// Decoder cell gates act on [parent hidden; parent word embedding;
// relation embedding]; the memory path runs parent to child.
struct DecCell {
  ad::Param Wi, bi;
  ad::Param Wf, bf;
  ad::Param Wo, bo;
  ad::Param Wu, bu;
};

struct AutoencoderParams {
  Dims dims;
  treeio::Vocab vocab;
  std::vector<std::string> relations;  // [0] is the unseen-relation row
  std::unordered_map<std::string, int> rel_index;

  ad::Param word_emb;  // V x E, shared by encoder input and decoder feedback
  ad::Param rel_emb;   // |relations| x R
  EncCell enc;
  DecCell dec;
  ad::Param proj_w;  // V x H output projection
  ad::Param proj_b;  // V

  int rel_id(const std::string& rel) const;
  std::vector<const ad::Param*> all_params() const;
  void init(std::mt19937_64& rng, double scale = 0.08);

  void save(const std::string& path) const;
  static AutoencoderParams load(const std::string& path);
};

enum class Mode { Sentence, Word };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode m);

struct NodeStates {
  // Indexed by token position (0-based for token index i+1).
  std::vector<Vec> h, c;
};

struct LatentCode {
  Mode mode = Mode::Sentence;
  // Sentence: one vector (the root hidden state). Word: one vector per
  // token in surface order.
  std::vector<Vec> payload;
};

NodeStates encode(const treeio::DepTree& tree, const AutoencoderParams& params);

LatentCode make_latent(const NodeStates& states, const treeio::DepTree& tree, Mode mode);

// Re-aggregates per-token hidden vectors to a fresh root vector: child
// messages are taken from the given (perturbed) vectors at every level
// while the memory path is re-run bottom-up through the encoder cell.
Vec reencode_from_states(const treeio::DepTree& tree, const std::vector<Vec>& per_token_h,
                         const AutoencoderParams& params);

struct HardDecode {
  std::vector<int> order;  // level-order visit sequence (token indices)
  std::vector<int> ids;    // emitted vocab id per token, surface order
  std::vector<std::string> tokens(const AutoencoderParams& params) const;
};

struct SoftDecode {
  std::vector<int> order;
  std::vector<ad::Var> rows;  // per-token distribution over the vocab, surface order
};

// banned_ids, when given, are removed from every node's candidate set
// before the argmax (the attack loop uses this to keep decoded sentences
// disjoint from the protected answer sentence).
HardDecode decode_hard(const LatentCode& code, const treeio::DepTree& tree,
                       const AutoencoderParams& params,
                       const std::vector<int>* banned_ids = nullptr);

// Soft rows as plain values (a convenience wrapper over the tape path).
struct SoftDecodeEval {
  std::vector<int> order;
  std::vector<Vec> rows;
};
SoftDecodeEval decode_soft(const LatentCode& code, const treeio::DepTree& tree,
                           const AutoencoderParams& params, double tau);

// Tape building blocks used by training and by the attack loop.
struct EncTapeStates {
  std::vector<ad::Var> h, c;
};
EncTapeStates encode_tape(ad::Tape& tape, const treeio::DepTree& tree,
                          const AutoencoderParams& params);
ad::Var reencode_tape(ad::Tape& tape, const treeio::DepTree& tree,
                      const std::vector<ad::Var>& per_token_h, const AutoencoderParams& params);
SoftDecode decode_soft_tape(ad::Tape& tape, ad::Var root_code, const treeio::DepTree& tree,
                            const AutoencoderParams& params, double tau,
                            const std::vector<int>* banned_ids = nullptr);
ad::Var recon_loss_tape(ad::Tape& tape, const treeio::DepTree& tree,
                        const AutoencoderParams& params);

double recon_loss(const treeio::DepTree& tree, const AutoencoderParams& params);

struct TrainConfig {
  int epochs = 30;
  double lr = 5e-3;
  double init_scale = 0.08;
  double sample_prob = 0.5;  // scheduled-sampling ceiling after warmup
  uint64_t seed = 42;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
};

AutoencoderParams train_autoencoder(const std::vector<treeio::DepTree>& corpus, const Dims& dims,
                                    const TrainConfig& cfg, std::vector<EpochLog>* log = nullptr);

// Fraction of tokens reproduced exactly by a sentence-level round trip.
double reconstruction_accuracy(const std::vector<treeio::DepTree>& corpus,
                               const AutoencoderParams& params);

}  // namespace treeperturb::autoenc
