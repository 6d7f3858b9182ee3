// treeperturb: latent-space adversarial sentence generation against small
// text classifiers and extractive QA models, plus the scoring harness.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "treeperturb/autoenc.hpp"
#include "treeperturb/checkpoint.hpp"
#include "treeperturb/eval.hpp"
#include "treeperturb/kernels.hpp"
#include "treeperturb/pipeline.hpp"

namespace tp = treeperturb;
using tp::ckpt::Json;

namespace {

constexpr const char* kVersion = "treeperturb 0.1.0";

Json config_snapshot(const CLI::App* cmd) {
  Json snap;
  for (const CLI::Option* opt : cmd->get_options()) {
    std::string name = opt->get_name(false, true);
    while (!name.empty() && name[0] == '-') name.erase(name.begin());
    const size_t comma = name.find(',');
    if (comma != std::string::npos) name = name.substr(0, comma);
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->count() > 0)
      snap[name] = tp::join(opt->results(), ",");
    else
      snap[name] = opt->get_default_str();
  }
  return snap;
}

Json run_header(const std::string& command, const CLI::App* cmd, uint64_t seed,
                const std::vector<std::string>& input_paths) {
  Json hashes;
  for (const std::string& p : input_paths)
    if (!p.empty()) hashes[p] = tp::hex64(tp::fnv1a(tp::read_file(p)));
  return Json{{"schema_version", tp::pipeline::kResultSchemaVersion},
              {"command", command},
              {"version", kVersion},
              {"seed", seed},
              {"config", config_snapshot(cmd)},
              {"input_hashes", hashes}};
}

struct PretrainArgs {
  std::string corpus, out, log;
  int hidden = 300, emb = 300, rel = 50, epochs = 30;
  double lr = 5e-3;
  uint64_t seed = 42;
};

int cmd_pretrain(const PretrainArgs& a, const CLI::App* cmd) {
  const auto trees = tp::treeio::parse_conllu(tp::read_file(a.corpus));
  if (trees.empty()) throw tp::DataError("corpus has no sentences: " + a.corpus);
  tp::autoenc::Dims dims{a.hidden, a.emb, a.rel};
  tp::autoenc::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.seed = a.seed;
  std::vector<tp::autoenc::EpochLog> log;
  tp::autoenc::AutoencoderParams params = tp::autoenc::train_autoencoder(trees, dims, cfg, &log);

  const Json header = run_header("pretrain", cmd, a.seed, {a.corpus});
  params.save(a.out);
  {
    // Re-open the archive to splice the run header into the manifest.
    tp::ckpt::Archive arch = tp::ckpt::Archive::load(a.out);
    arch.manifest["run"] = header;
    arch.save(a.out);
  }
  if (!a.log.empty()) {
    std::ostringstream out;
    out << header.dump() << "\n";
    for (const auto& e : log)
      out << Json{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}}.dump() << "\n";
    tp::write_file_atomic(a.log, out.str());
  }
  const double acc = tp::autoenc::reconstruction_accuracy(trees, params);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "final_loss=%.6f reconstruction_accuracy=%.4f epochs=%d",
                log.empty() ? 0.0 : log.back().mean_loss, acc, a.epochs);
  std::cout << buf << "\n";
  return 0;
}

struct TrainVictimsArgs {
  std::string task = "cls", arch = "attn";
  std::string train, heldout, autoencoder, out;
  int num_classes = 2, epochs = 12;
  double lr = 5e-3, cls_floor = 0.85, qa_floor = 60.0;
  uint64_t seed = 42;
};

int cmd_train_victims(const TrainVictimsArgs& a, const CLI::App* cmd) {
  const tp::autoenc::AutoencoderParams ae = tp::autoenc::AutoencoderParams::load(a.autoencoder);
  tp::victims::VictimTrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.seed = a.seed;
  cfg.cls_accuracy_floor = a.cls_floor;
  cfg.qa_em_floor = a.qa_floor;
  const Json header = run_header("train-victims", cmd, a.seed,
                                 {a.train, a.heldout, a.autoencoder});
  if (a.task == "cls") {
    const auto train = tp::victims::load_cls_jsonl(a.train);
    const auto held = a.heldout.empty() ? train : tp::victims::load_cls_jsonl(a.heldout);
    tp::victims::SentimentModel m =
        tp::victims::train_sentiment(train, held, a.arch, a.num_classes, ae.vocab, cfg);
    m.save(a.out);
    tp::ckpt::Archive arch = tp::ckpt::Archive::load(a.out);
    arch.manifest["run"] = header;
    arch.save(a.out);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "accuracy=%.4f model_id=%s",
                  tp::victims::cls_accuracy(m, held), m.model_id.c_str());
    std::cout << buf << "\n";
  } else if (a.task == "qa") {
    const auto train = tp::victims::load_qa_jsonl(a.train);
    const auto held = a.heldout.empty() ? train : tp::victims::load_qa_jsonl(a.heldout);
    tp::victims::SpanQAModel m = tp::victims::train_qa(train, held, a.arch, ae.vocab, cfg);
    m.save(a.out);
    tp::ckpt::Archive arch = tp::ckpt::Archive::load(a.out);
    arch.manifest["run"] = header;
    arch.save(a.out);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "em=%.2f model_id=%s", tp::victims::qa_exact_match(m, held),
                  m.model_id.c_str());
    std::cout << buf << "\n";
  } else {
    throw tp::ConfigError("unknown task: " + a.task);
  }
  return 0;
}

struct AttackArgs {
  std::string task = "cls", mode = "word";
  std::string autoencoder, victim, data, out;
  std::string qa_target = "position";
  std::string target_answer;
  std::string strategy = "question-based";
  std::string embeddings, rules, stopwords;
  double c = 1000.0, kappa = 0.0, lr = 0.6, tau_start = 5.0, tau_end = 0.01;
  int p = 2, steps = 100, outer = 10, workers = 1, limit = 0;
  bool save_trace = false, timing = false, resume = false, restart_on_filter_fail = false;
  bool search_c = false;
  double c_low = 1.0, c_high = 10000.0;
  int c_rounds = 10;
  uint64_t seed = 42;
};

tp::attack::AttackConfig attack_config(const AttackArgs& a) {
  tp::attack::AttackConfig cfg;
  cfg.mode = tp::autoenc::mode_from_string(a.mode);
  cfg.p = a.p;
  cfg.c = a.c;
  cfg.kappa = a.kappa;
  cfg.lr = a.lr;
  cfg.steps = a.steps;
  cfg.outer_max = a.outer;
  cfg.tau_start = a.tau_start;
  cfg.tau_end = a.tau_end;
  cfg.save_trace = a.save_trace;
  cfg.restart_on_filter_fail = a.restart_on_filter_fail;
  return cfg;
}

int cmd_attack(const AttackArgs& a, const CLI::App* cmd) {
  const tp::autoenc::AutoencoderParams ae = tp::autoenc::AutoencoderParams::load(a.autoencoder);

  tp::pipeline::PipelineOptions opts;
  if (!a.rules.empty()) opts.rules = tp::seedgen::RuleTable::load(a.rules);
  if (!a.stopwords.empty()) opts.stopwords = tp::pipeline::Stopwords::load(a.stopwords);
  tp::treeio::EmbeddingTable table;
  if (!a.embeddings.empty()) {
    // Dimension comes from the first line.
    const std::string first = tp::read_file(a.embeddings).substr(0, 4096);
    const auto toks = tp::split_ws(first.substr(0, first.find('\n')));
    if (toks.size() < 2) throw tp::DataError("embeddings file looks empty: " + a.embeddings);
    table = tp::treeio::load_embeddings(a.embeddings, int(toks.size()) - 1);
    opts.embeddings = &table;
  }
  opts.qa_strategy = a.strategy;
  opts.qa_mode = tp::attack::qa_mode_from_string(a.qa_target);
  if (!a.target_answer.empty())
    for (const std::string& t : tp::split_ws(tp::lower(a.target_answer)))
      opts.targeted_answer.push_back(t);
  if (opts.qa_mode == tp::attack::QAMode::Answer && opts.targeted_answer.empty() &&
      a.task == "qa")
    throw tp::ConfigError("--qa-target answer requires --target-answer");

  const tp::attack::AttackConfig cfg = attack_config(a);
  Json header = run_header("attack", cmd, a.seed,
                           {a.data, a.autoencoder, a.victim, a.embeddings, a.rules, a.stopwords});

  std::optional<tp::victims::SentimentModel> cls_victim;
  std::optional<tp::victims::SpanQAModel> qa_victim;
  if (a.task == "cls")
    cls_victim = tp::victims::SentimentModel::load(a.victim);
  else if (a.task == "qa")
    qa_victim = tp::victims::SpanQAModel::load(a.victim);
  else
    throw tp::ConfigError("unknown task: " + a.task);
  header["victim_model_id"] = a.task == "cls" ? cls_victim->model_id : qa_victim->model_id;

  // Resume: keep already-attacked ids, append the remainder.
  std::vector<std::string> done_lines;
  std::unordered_set<std::string> done_ids;
  if (a.resume && tp::file_exists(a.out)) {
    Json old_header;
    const auto old = tp::pipeline::load_results(a.out, &old_header);
    if (!old_header.is_null() && old_header.contains("config") &&
        old_header["config"] != header["config"])
      throw tp::ConfigError("--resume with a different configuration than " + a.out);
    for (const auto& r : old) done_ids.insert(r.id);
    for (const std::string& line : tp::split_lines(tp::read_file(a.out)))
      if (!line.empty()) done_lines.push_back(line);
  }

  struct Work {
    std::string id;
    int index = 0;
  };
  std::vector<tp::pipeline::ClsExample> cls_examples;
  std::vector<tp::pipeline::QAExample> qa_examples;
  size_t total = 0;
  if (a.task == "cls") {
    cls_examples = tp::pipeline::load_cls_examples(a.data);
    if (a.limit > 0 && int(cls_examples.size()) > a.limit) cls_examples.resize(size_t(a.limit));
    total = cls_examples.size();
  } else {
    qa_examples = tp::pipeline::load_qa_examples(a.data);
    if (a.limit > 0 && int(qa_examples.size()) > a.limit) qa_examples.resize(size_t(a.limit));
    total = qa_examples.size();
  }

  std::vector<int> todo;
  for (size_t i = 0; i < total; ++i) {
    const std::string& id = a.task == "cls" ? cls_examples[i].id : qa_examples[i].id;
    if (!done_ids.count(id)) todo.push_back(int(i));
  }

  std::vector<std::string> lines(todo.size());
  std::vector<std::string> errors(todo.size());

  auto run_one = [&](int k) {
    try {
      tp::pipeline::AttackResult res;
      auto attack_once = [&](double c_value) {
        tp::attack::AttackConfig c2 = cfg;
        c2.c = c_value;
        if (a.task == "cls")
          return tp::pipeline::attack_classification(cls_examples[size_t(todo[size_t(k)])],
                                                     *cls_victim, ae, c2, a.seed);
        return tp::pipeline::attack_qa(qa_examples[size_t(todo[size_t(k)])], *qa_victim, ae, c2,
                                       opts, a.seed);
      };
      if (a.search_c) {
        tp::pipeline::AttackResult best;
        bool have = false;
        auto closure = [&](double c_value) {
          tp::pipeline::AttackResult r = attack_once(c_value);
          if (r.success_targeted && (!have || true)) {
            best = r;
            have = true;
          }
          return r.success_targeted;
        };
        tp::attack::BisectResult bis =
            tp::attack::binary_search_constant(closure, a.c_low, a.c_high, a.c_rounds);
        res = have ? best : attack_once(cfg.c);
        (void)bis;
      } else {
        res = attack_once(cfg.c);
      }
      lines[size_t(k)] = res.to_json(a.timing, a.save_trace).dump();
    } catch (const std::exception& e) {
      errors[size_t(k)] = e.what();
    }
  };

#ifdef _OPENMP
  if (a.workers > 1) {
#pragma omp parallel for num_threads(a.workers) schedule(dynamic)
    for (int k = 0; k < int(todo.size()); ++k) run_one(k);
  } else {
    for (int k = 0; k < int(todo.size()); ++k) run_one(k);
  }
#else
  for (int k = 0; k < int(todo.size()); ++k) run_one(k);
#endif

  std::ostringstream out;
  if (done_lines.empty()) out << header.dump() << "\n";
  for (const std::string& line : done_lines) out << line << "\n";
  for (const std::string& line : lines)
    if (!line.empty()) out << line << "\n";
  tp::write_file_atomic(a.out, out.str());

  int failed = 0;
  for (const std::string& e : errors)
    if (!e.empty()) {
      std::cerr << "example error: " << e << "\n";
      ++failed;
    }
  std::cout << "attacked " << (todo.size() - size_t(failed)) << "/" << todo.size()
            << " examples (" << done_lines.size() << " resumed), results in " << a.out << "\n";
  if (failed) throw tp::RuntimeFailure(std::to_string(failed) + " examples errored");
  return 0;
}

struct EvalArgs {
  std::string results, out, table;
};

int cmd_eval(const EvalArgs& a, const CLI::App* cmd, uint64_t seed) {
  Json header;
  const auto results = tp::pipeline::load_results(a.results, &header);
  if (results.empty()) throw tp::DataError("no results in " + a.results);
  const std::string model_id = header.value("victim_model_id", "unknown");
  const tp::eval::ScoreReport rep = tp::eval::score_results(results, model_id);
  Json out = run_header("eval", cmd, seed, {a.results});
  out["report"] = rep.to_json();
  if (!a.out.empty()) tp::write_file_atomic(a.out, out.dump(2) + "\n");
  if (!a.table.empty()) tp::write_file_atomic(a.table, rep.to_table());
  std::cout << rep.to_table();
  return 0;
}

struct TransferArgs {
  std::string results, victim, out, table;
};

int cmd_transfer(const TransferArgs& a, const CLI::App* cmd, uint64_t seed) {
  Json header;
  const auto results = tp::pipeline::load_results(a.results, &header);
  if (results.empty()) throw tp::DataError("no results in " + a.results);
  const tp::ckpt::Archive arch = tp::ckpt::Archive::load(a.victim);
  const std::string kind = arch.manifest.value("kind", "");
  tp::eval::ScoreReport rep;
  if (kind == "sentiment")
    rep = tp::eval::transfer_eval(results, tp::victims::SentimentModel::load(a.victim));
  else if (kind == "qa")
    rep = tp::eval::transfer_eval(results, tp::victims::SpanQAModel::load(a.victim));
  else
    throw tp::DataError("victim checkpoint has unknown kind: " + kind);
  Json out = run_header("transfer", cmd, seed, {a.results, a.victim});
  out["report"] = rep.to_json();
  if (!a.out.empty()) tp::write_file_atomic(a.out, out.dump(2) + "\n");
  if (!a.table.empty()) tp::write_file_atomic(a.table, rep.to_table());
  std::cout << rep.to_table();
  return 0;
}

struct AblateArgs {
  std::string results, victim, out, table;
};

int cmd_ablate(const AblateArgs& a, const CLI::App* cmd, uint64_t seed) {
  Json header;
  const auto results = tp::pipeline::load_results(a.results, &header);
  if (results.empty()) throw tp::DataError("no results in " + a.results);
  const tp::ckpt::Archive arch = tp::ckpt::Archive::load(a.victim);
  const std::string kind = arch.manifest.value("kind", "");
  tp::eval::AblationReport rep;
  if (kind == "sentiment")
    rep = tp::eval::position_ablation(results, tp::victims::SentimentModel::load(a.victim));
  else if (kind == "qa")
    rep = tp::eval::position_ablation(results, tp::victims::SpanQAModel::load(a.victim));
  else
    throw tp::DataError("victim checkpoint has unknown kind: " + kind);
  Json out = run_header("ablate", cmd, seed, {a.results, a.victim});
  out["report"] = rep.to_json();
  if (!a.out.empty()) tp::write_file_atomic(a.out, out.dump(2) + "\n");
  if (!a.table.empty()) tp::write_file_atomic(a.table, rep.to_table());
  std::cout << rep.to_table();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(kVersion) +
               " - syntactically constrained adversarial text via latent perturbation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI config with one section per subcommand");

  PretrainArgs pa;
  CLI::App* pretrain = app.add_subcommand("pretrain", "train the tree autoencoder");
  pretrain->add_option("--corpus", pa.corpus, "CoNLL-U training corpus")
      ->required()
      ->check(CLI::ExistingFile);
  pretrain->add_option("--out", pa.out, "checkpoint path")->required();
  pretrain->add_option("--log", pa.log, "training log path (jsonl)");
  pretrain->add_option("--hidden", pa.hidden, "hidden size")->capture_default_str();
  pretrain->add_option("--emb", pa.emb, "word embedding size")->capture_default_str();
  pretrain->add_option("--rel", pa.rel, "relation embedding size")->capture_default_str();
  pretrain->add_option("--epochs", pa.epochs, "training epochs")->capture_default_str();
  pretrain->add_option("--lr", pa.lr, "learning rate")->capture_default_str();
  pretrain->add_option("--seed", pa.seed, "rng seed")
      ->envname("TREEPERTURB_SEED")
      ->capture_default_str();

  TrainVictimsArgs ta;
  CLI::App* trainv = app.add_subcommand("train-victims", "train a bundled victim model");
  trainv->add_option("--task", ta.task, "cls|qa")->capture_default_str();
  trainv->add_option("--arch", ta.arch, "cls: attn|recurrent, qa: window|bilstm")
      ->capture_default_str();
  trainv->add_option("--train", ta.train, "training jsonl")->required()->check(CLI::ExistingFile);
  trainv->add_option("--heldout", ta.heldout, "heldout jsonl")->check(CLI::ExistingFile);
  trainv->add_option("--autoencoder", ta.autoencoder, "autoencoder checkpoint (vocabulary source)")
      ->required()
      ->check(CLI::ExistingFile);
  trainv->add_option("--out", ta.out, "checkpoint path")->required();
  trainv->add_option("--classes", ta.num_classes, "number of classes")->capture_default_str();
  trainv->add_option("--epochs", ta.epochs, "training epochs")->capture_default_str();
  trainv->add_option("--lr", ta.lr, "learning rate")->capture_default_str();
  trainv->add_option("--cls-floor", ta.cls_floor, "accuracy floor")->capture_default_str();
  trainv->add_option("--qa-floor", ta.qa_floor, "EM floor")->capture_default_str();
  trainv->add_option("--seed", ta.seed, "rng seed")
      ->envname("TREEPERTURB_SEED")
      ->capture_default_str();

  AttackArgs aa;
  CLI::App* attack = app.add_subcommand("attack", "run attacks over a dataset");
  attack->add_option("--task", aa.task, "cls|qa")->capture_default_str();
  attack->add_option("--mode", aa.mode, "sent|word")->capture_default_str();
  attack->add_option("--autoencoder", aa.autoencoder, "autoencoder checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  attack->add_option("--victim", aa.victim, "victim checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  attack->add_option("--data", aa.data, "attack dataset jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  attack->add_option("--out", aa.out, "results jsonl")->required();
  attack->add_option("--qa-target", aa.qa_target, "position|answer")->capture_default_str();
  attack->add_option("--target-answer", aa.target_answer, "answer-targeted string");
  attack->add_option("--strategy", aa.strategy,
                     "question-based|answer-based|random-sentence")
      ->capture_default_str();
  attack->add_option("--embeddings", aa.embeddings, "embedding table for fake answers")
      ->check(CLI::ExistingFile);
  attack->add_option("--rules", aa.rules, "question rewrite rules")->check(CLI::ExistingFile);
  attack->add_option("--stopwords", aa.stopwords, "stopword list")->check(CLI::ExistingFile);
  attack->add_option("--c", aa.c, "objective constant c")->capture_default_str();
  attack->add_option("--kappa", aa.kappa, "confidence margin")->capture_default_str();
  attack->add_option("--lr", aa.lr, "inner learning rate")->capture_default_str();
  attack->add_option("--steps", aa.steps, "inner steps")->capture_default_str();
  attack->add_option("--outer", aa.outer, "outer iterations")->capture_default_str();
  attack->add_option("--tau-start", aa.tau_start, "initial temperature")->capture_default_str();
  attack->add_option("--tau-end", aa.tau_end, "final temperature")->capture_default_str();
  attack->add_option("--p", aa.p, "perturbation norm order (1|2)")->capture_default_str();
  attack->add_option("--workers", aa.workers, "parallel workers")->capture_default_str();
  attack->add_option("--limit", aa.limit, "attack only the first N examples")
      ->capture_default_str();
  attack->add_flag("--save-trace", aa.save_trace, "store per-step traces");
  attack->add_flag("--timing", aa.timing, "store wall-clock seconds in results");
  attack->add_flag("--resume", aa.resume, "skip ids already present in --out");
  attack->add_flag("--restart-on-filter-fail", aa.restart_on_filter_fail,
                   "restart from the seed when the contradiction filter fails");
  attack->add_flag("--search-c", aa.search_c, "bisection search over c per example");
  attack->add_option("--c-low", aa.c_low, "search lower bound")->capture_default_str();
  attack->add_option("--c-high", aa.c_high, "search upper bound")->capture_default_str();
  attack->add_option("--c-rounds", aa.c_rounds, "search rounds")->capture_default_str();
  attack->add_option("--seed", aa.seed, "rng seed")
      ->envname("TREEPERTURB_SEED")
      ->capture_default_str();

  EvalArgs ea;
  CLI::App* evalc = app.add_subcommand("eval", "score a results file");
  evalc->add_option("--results", ea.results, "results jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  evalc->add_option("--out", ea.out, "report json path");
  evalc->add_option("--table", ea.table, "plain-text table path");

  TransferArgs tra;
  CLI::App* transfer = app.add_subcommand("transfer", "re-score results under another model");
  transfer->add_option("--results", tra.results, "results jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  transfer->add_option("--victim", tra.victim, "blackbox victim checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  transfer->add_option("--out", tra.out, "report json path");
  transfer->add_option("--table", tra.table, "plain-text table path");

  AblateArgs aba;
  CLI::App* ablate = app.add_subcommand("ablate", "insertion-position ablation");
  ablate->add_option("--results", aba.results, "results jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  ablate->add_option("--victim", aba.victim, "victim checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  ablate->add_option("--out", aba.out, "report json path");
  ablate->add_option("--table", aba.table, "plain-text table path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*pretrain) return cmd_pretrain(pa, pretrain);
    if (*trainv) return cmd_train_victims(ta, trainv);
    if (*attack) return cmd_attack(aa, attack);
    if (*evalc) return cmd_eval(ea, evalc, 42);
    if (*transfer) return cmd_transfer(tra, transfer, 42);
    if (*ablate) return cmd_ablate(aba, ablate, 42);
  } catch (const tp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
