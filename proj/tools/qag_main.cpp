// qag: question-answer pair generation over a passage corpus.
//
// Subcommands: synth, analyze, train, generate, evaluate. Every run writes
// its resolved configuration next to its outputs; reruns with the same
// options (single-threaded, fixed seed) reproduce outputs bit-exactly.
// Exit codes: 0 success, 1 internal error, 2 input/validation error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qag/agents.hpp"
#include "qag/corpus.hpp"
#include "qag/metrics.hpp"
#include "qag/model_io.hpp"

namespace fs = std::filesystem;
using namespace qag;

namespace {

struct CommonOpts {
  std::string data;
  std::string out = ".";
  std::uint64_t seed = 0;
};

struct ModelOverrides {
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_ff = 256;
  int max_len = 256;
  double stream_w1 = 0.5;

  ModelConfig to_config(int vocab_size) const {
    ModelConfig cfg;
    cfg.d_model = d_model;
    cfg.n_heads = n_heads;
    cfg.n_enc_layers = n_enc_layers;
    cfg.n_dec_layers = n_dec_layers;
    cfg.d_ff = d_ff;
    cfg.max_len = max_len;
    cfg.vocab_size = vocab_size;
    cfg.stream_loss_weights = {stream_w1, 1.0 - stream_w1};
    return cfg;
  }
};

void add_model_flags(CLI::App* cmd, ModelOverrides& m) {
  cmd->add_option("--d-model", m.d_model, "model width");
  cmd->add_option("--n-heads", m.n_heads, "attention heads");
  cmd->add_option("--n-enc-layers", m.n_enc_layers, "encoder layers");
  cmd->add_option("--n-dec-layers", m.n_dec_layers, "decoder layers");
  cmd->add_option("--d-ff", m.d_ff, "feed-forward width");
  cmd->add_option("--max-len", m.max_len, "maximum sequence length");
  cmd->add_option("--stream-w1", m.stream_w1, "next-token stream loss weight (w2 = 1 - w1)");
}

// Section-scoped dump of the invoked subcommand only; `qag <sub> --config
// <file>` reads it back.
void write_resolved_config(CLI::App* cmd, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / ("resolved_" + cmd->get_name() + ".ini"));
  out << "[" << cmd->get_name() << "]\n" << cmd->config_to_str(true, false);
}

std::vector<QagExample> load_or_die(const std::string& path, bool allow_empty,
                                    std::vector<std::string>* errors_out = nullptr) {
  auto report = load_dataset(path);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  if (!report.errors.empty()) {
    for (const auto& e : report.errors) std::cerr << "error: " << path << " " << e << "\n";
    std::cerr << path << ": " << report.errors.size() << " invalid record(s), "
              << report.examples.size() << " loaded\n";
    if (errors_out) {
      *errors_out = report.errors;
    } else {
      throw ValidationError(path + " has invalid records");
    }
  }
  if (!allow_empty && report.examples.empty())
    throw ValidationError(path + " contains no usable records");
  return report.examples;
}

Vocab load_or_build_vocab(const std::string& vocab_path,
                          const std::vector<const std::vector<QagExample>*>& corpora,
                          const std::string& out_dir) {
  if (!vocab_path.empty()) return Vocab::load(vocab_path);
  std::vector<std::string> docs;
  for (const auto* corpus : corpora)
    for (const auto& ex : *corpus) {
      docs.push_back(ex.passage);
      docs.push_back(ex.question);
      docs.push_back(ex.answer);
    }
  auto vocab = Vocab::build(docs, 1);
  fs::create_directories(out_dir);
  vocab.save((fs::path(out_dir) / "vocab.txt").string());
  return vocab;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const CommonOpts& common, int size, const std::string& profile) {
  fs::create_directories(common.out);
  auto path = fs::path(common.out) / ("synthetic_" + profile + ".jsonl");
  write_synthetic_corpus(path.string(), common.seed, size, parse_profile(profile));
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

int cmd_analyze(const CommonOpts& common) {
  std::vector<std::string> errors;
  auto examples = load_or_die(common.data, true, &errors);
  auto stats = analyze_dataset(examples);
  std::cout << format_stats_human(stats);
  for (const auto& line : format_stats_kv(stats)) std::cout << line << "\n";
  if (!common.out.empty() && common.out != ".") {
    fs::create_directories(common.out);
    std::ofstream rep(fs::path(common.out) / "analysis.txt");
    rep << format_stats_human(stats);
    for (const auto& line : format_stats_kv(stats)) rep << line << "\n";
  }
  return errors.empty() ? 0 : 2;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string stage;
  std::string aug_data;
  std::string vocab_path;
  std::string strategy = "two_stage";
  std::string kp_ckpt, qg_ckpt;
  std::string mode = "fanout";
  int batch_size = 10;
  int epochs = -1;  // -1 = per-stage default
  int epochs_stage1 = 15;
  int epochs_stage2 = 10;
  double lr = 1e-3;
  bool unguided = false;
};

int cmd_train(const CommonOpts& common, const TrainFlags& flags, const ModelOverrides& overrides) {
  fs::create_directories(common.out);
  auto data = load_or_die(common.data, false);
  const auto mode = parse_phrase_mode(flags.mode);

  TrainOptions opts;
  opts.batch_size = flags.batch_size;
  opts.lr = static_cast<float>(flags.lr);
  opts.seed = common.seed;

  auto open_log = [&](const std::string& name) {
    return std::ofstream(fs::path(common.out) / ("loss_" + name + ".txt"));
  };
  auto ckpt_path = [&](const std::string& name) {
    return (fs::path(common.out) / name).string();
  };

  if (flags.stage == "keyphrase") {
    std::vector<QagExample> aug;
    if (!flags.aug_data.empty()) aug = load_or_die(flags.aug_data, false);
    StrategyOptions strat;
    strat.strategy = parse_strategy(flags.strategy);
    strat.epochs_stage1 = flags.epochs_stage1;
    strat.epochs_stage2 = flags.epochs_stage2;
    if ((strat.strategy == TrainStrategy::squad_only || strat.strategy == TrainStrategy::mixed ||
         strat.strategy == TrainStrategy::two_stage) &&
        aug.empty())
      throw ConfigError("strategy " + flags.strategy + " needs --aug-data");
    auto vocab = load_or_build_vocab(flags.vocab_path, {&aug, &data}, common.out);
    auto cfg = overrides.to_config(vocab.size());
    auto log = open_log("keyphrase");
    opts.log = &log;
    auto model = train_keyphrase_agent(aug, data, strat, cfg, opts, vocab);
    save_model(ckpt_path("keyphrase"), model);
    auto items = make_keyphrase_items(data, KeyphraseStyle::stripped, vocab, cfg);
    std::cout << "keyphrase agent saved; final nll1=" << mean_next_token_nll(model, items) << "\n";
    return 0;
  }

  auto vocab = load_or_build_vocab(flags.vocab_path, {&data}, common.out);
  auto cfg = overrides.to_config(vocab.size());

  if (flags.stage == "qg" || flags.stage == "answer") {
    const bool is_qg = flags.stage == "qg";
    auto items = is_qg ? make_question_items(data, vocab, cfg, !flags.unguided, mode)
                       : (flags.unguided ? [&] {
                           std::vector<TrainItem> out;
                           for (const auto& ex : data) {
                             if (ex.split != "train" || ex.answer.empty()) continue;
                             auto tgt = encode(ex.answer, vocab);
                             tgt.push_back(Vocab::kEos);
                             out.push_back(make_item(
                                 passage_encoder_input(ex.passage, vocab, cfg.max_len), tgt));
                           }
                           return out;
                         }()
                                         : make_answer_items(data, vocab, cfg, mode));
    if (items.empty()) throw ConfigError("no usable training records in " + common.data);
    auto model = ModelParams::init(cfg, opts.seed);
    opts.epochs = flags.epochs >= 0 ? flags.epochs : 15;
    auto log = open_log(flags.stage);
    opts.log = &log;
    train_seq2seq(model, items, opts);
    save_model(ckpt_path(flags.stage), model);
    std::cout << flags.stage << " agent saved; final nll1=" << mean_next_token_nll(model, items)
              << "\n";
    return 0;
  }

  if (flags.stage == "kg") {
    if (flags.qg_ckpt.empty()) throw ConfigError("train kg needs --qg-ckpt");
    auto qg = load_model<float>(flags.qg_ckpt);
    auto model = flags.kp_ckpt.empty() ? ModelParams::init(cfg, opts.seed)
                                       : load_model<float>(flags.kp_ckpt);
    auto items = make_refine_items(data, qg, vocab, model.config, mode);
    if (items.empty()) throw ConfigError("no usable training records in " + common.data);
    opts.epochs = flags.epochs >= 0 ? flags.epochs : 10;
    auto log = open_log("kg");
    opts.log = &log;
    train_seq2seq(model, items, opts);
    save_model(ckpt_path("kg"), model);
    std::cout << "kg agent saved; final nll1=" << mean_next_token_nll(model, items) << "\n";
    return 0;
  }

  if (flags.stage == "shared_encoder") {
    auto model = SharedEncoderModel::init(cfg, opts.seed);
    opts.epochs = flags.epochs >= 0 ? flags.epochs : 15;
    auto log = open_log("shared_encoder");
    opts.log = &log;
    train_shared_encoder(model, data, vocab, opts);
    save_shared_model(ckpt_path("shared_encoder"), model);
    std::cout << "shared-encoder baseline saved\n";
    return 0;
  }

  throw ConfigError("unknown stage '" + flags.stage +
                    "' (keyphrase|qg|kg|answer|shared_encoder)");
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateFlags {
  std::string vocab_path;
  std::string kp_ckpt, qg_ckpt, kg_ckpt, ans_ckpt;
  std::string mode = "fanout";
  int m = 2;
  int beam = 1;
  int max_new = 48;
  double length_penalty = 1.0;
};

int cmd_generate(const CommonOpts& common, const GenerateFlags& flags) {
  fs::create_directories(common.out);
  auto out_path = fs::path(common.out) / "generated.jsonl";
  auto examples = load_or_die(common.data, true);
  if (examples.empty()) {
    save_generated(out_path.string(), {});
    std::cout << "wrote " << out_path.string() << " (0 triplets)\n";
    return 0;
  }
  if (flags.vocab_path.empty()) throw ConfigError("generate needs --vocab");
  auto vocab = Vocab::load(flags.vocab_path);
  auto kp = load_model<float>(flags.kp_ckpt);
  auto qg = load_model<float>(flags.qg_ckpt);
  auto kg = flags.kg_ckpt.empty() ? kp.clone() : load_model<float>(flags.kg_ckpt);
  auto ans = load_model<float>(flags.ans_ckpt);

  DecodeOptions dopts;
  dopts.beam = flags.beam;
  dopts.max_new = flags.max_new;
  dopts.length_penalty = flags.length_penalty;
  const auto mode = parse_phrase_mode(flags.mode);

  std::vector<GeneratedRecord> records;
  for (const auto& group : group_by_passage(examples)) {
    auto result = run_pipeline(group.passage, kp, qg, kg, ans, flags.m, vocab, dopts, mode);
    for (const auto& w : result.warnings)
      std::cerr << "warning: passage " << group.passage_id << ": " << w << "\n";
    int k = 0;
    for (const auto& t : result.triplets) {
      GeneratedRecord r;
      r.id = group.passage_id + "-g" + std::to_string(k++);
      r.passage_id = group.passage_id;
      r.keyphrases = split_keyphrase_output(encode(t.keyphrase, vocab), vocab);
      r.question = t.question;
      r.answer = t.answer;
      r.iteration = flags.m;
      records.push_back(std::move(r));
    }
  }
  save_generated(out_path.string(), records);
  std::cout << "wrote " << out_path.string() << " (" << records.size() << " triplets, m=" << flags.m
            << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

int cmd_evaluate(const CommonOpts& common, const std::string& generated_path) {
  auto references = load_or_die(common.data, false);
  auto generated = load_generated(generated_path);

  // Any example id of a passage group resolves to that group.
  auto groups = group_by_passage(references);
  std::map<std::string, std::size_t> id_to_group;
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (const auto* ex : groups[gi].examples) id_to_group[ex->id] = gi;

  std::vector<std::string> unmatched;
  std::vector<EvalPair> q_pairs, a_pairs;
  for (const auto& rec : generated) {
    auto it = id_to_group.find(rec.passage_id);
    if (it == id_to_group.end()) {
      unmatched.push_back(rec.passage_id);
      continue;
    }
    std::vector<std::string> q_refs, a_refs;
    for (const auto* ex : groups[it->second].examples) {
      if (!ex->question.empty()) q_refs.push_back(ex->question);
      if (!ex->answer.empty()) a_refs.push_back(ex->answer);
    }
    if (!q_refs.empty()) q_pairs.push_back(make_eval_pair(rec.question, q_refs));
    if (!a_refs.empty()) a_pairs.push_back(make_eval_pair(rec.answer, a_refs));
  }
  if (!unmatched.empty()) {
    std::cerr << "error: " << unmatched.size() << " generated record(s) with unmatched ids:\n";
    for (const auto& id : unmatched) std::cerr << "  " << id << "\n";
    return 2;
  }
  if (q_pairs.empty()) throw ValidationError("nothing to evaluate in " + generated_path);

  auto q_report = evaluate_pairs(q_pairs);
  auto a_report = evaluate_pairs(a_pairs);
  std::cout << "question generation: BLEU-4 " << q_report.bleu4 * 100 << ", ROUGE-L "
            << q_report.rouge_l * 100 << ", METEOR-lite " << q_report.meteor * 100 << " over "
            << q_report.n << " pairs\n";
  std::cout << "answer generation:   BLEU-4 " << a_report.bleu4 * 100 << ", ROUGE-L "
            << a_report.rouge_l * 100 << ", METEOR-lite " << a_report.meteor * 100 << " over "
            << a_report.n << " pairs\n";
  std::cout << report_kv_line("qg", q_report) << "\n";
  std::cout << report_kv_line("ag", a_report) << "\n";
  if (!common.out.empty() && common.out != ".") {
    fs::create_directories(common.out);
    std::ofstream rep(fs::path(common.out) / "metrics.txt");
    rep << report_kv_line("qg", q_report) << "\n" << report_kv_line("ag", a_report) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"question-answer pair generation pipeline"};
  app.require_subcommand(1);
  // Defaults serialize into the resolved config, so reruns see every value.
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "read options from a resolved config file");
  app.fallthrough();

  CommonOpts common;
  ModelOverrides overrides;
  TrainFlags train_flags;
  GenerateFlags gen_flags;
  int synth_size = 50;
  std::string synth_profile = "abstractive";
  std::string generated_path;

  auto add_common = [&](CLI::App* cmd, bool with_data = true) {
    cmd->configurable();
    if (with_data) cmd->add_option("--data", common.data, "dataset path (jsonl)")->required();
    cmd->add_option("--out", common.out, "output directory");
    cmd->add_option("--seed", common.seed, "rng seed (always explicit in the resolved config)");
  };

  auto* synth = app.add_subcommand("synth", "write a synthetic corpus");
  add_common(synth, false);
  synth->add_option("--size", synth_size, "number of examples");
  synth->add_option("--profile", synth_profile, "extractive|abstractive");

  auto* analyze = app.add_subcommand("analyze", "dataset diagnostics");
  add_common(analyze);

  auto* train = app.add_subcommand("train", "train one pipeline stage");
  add_common(train);
  train->add_option("--stage", train_flags.stage, "keyphrase|qg|kg|answer|shared_encoder")
      ->required();
  train->add_option("--aug-data", train_flags.aug_data, "extractive augmentation corpus");
  train->add_option("--vocab", train_flags.vocab_path, "existing vocab file");
  train->add_option("--strategy", train_flags.strategy, "race_only|squad_only|mixed|two_stage");
  train->add_option("--kp-ckpt", train_flags.kp_ckpt, "keyphrase checkpoint base (kg init)");
  train->add_option("--qg-ckpt", train_flags.qg_ckpt, "question agent checkpoint base");
  train->add_option("--mode", train_flags.mode, "fanout|joint keyphrase handling");
  train->add_option("--batch-size", train_flags.batch_size, "examples per optimizer step");
  train->add_option("--epochs", train_flags.epochs, "epochs (single-stage trainings)");
  train->add_option("--epochs-stage1", train_flags.epochs_stage1, "keyphrase stage-1 epochs");
  train->add_option("--epochs-stage2", train_flags.epochs_stage2, "keyphrase stage-2 epochs");
  train->add_option("--lr", train_flags.lr, "adam learning rate");
  train->add_flag("--unguided", train_flags.unguided, "train qg/answer on the passage alone");
  add_model_flags(train, overrides);

  auto* generate = app.add_subcommand("generate", "run the pipeline over passages");
  add_common(generate);
  generate->add_option("--vocab", gen_flags.vocab_path, "vocab file")->required();
  generate->add_option("--kp-ckpt", gen_flags.kp_ckpt, "keyphrase agent checkpoint")->required();
  generate->add_option("--qg-ckpt", gen_flags.qg_ckpt, "question agent checkpoint")->required();
  generate->add_option("--kg-ckpt", gen_flags.kg_ckpt, "refinement agent checkpoint (default: kp)");
  generate->add_option("--ans-ckpt", gen_flags.ans_ckpt, "answer agent checkpoint")->required();
  generate->add_option("--m", gen_flags.m, "refinement iterations");
  generate->add_option("--beam", gen_flags.beam, "beam width (1 = greedy)");
  generate->add_option("--max-new", gen_flags.max_new, "generation budget per sequence");
  generate->add_option("--length-penalty", gen_flags.length_penalty, "beam length penalty");
  generate->add_option("--mode", gen_flags.mode, "fanout|joint keyphrase handling");

  auto* evaluate = app.add_subcommand("evaluate", "score generated triplets against references");
  add_common(evaluate);
  evaluate->add_option("--generated", generated_path, "generated.jsonl path")->required();

  try {
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    write_resolved_config(sub, common.out);
    if (sub == synth) return cmd_synth(common, synth_size, synth_profile);
    if (sub == analyze) return cmd_analyze(common);
    if (sub == train) return cmd_train(common, train_flags, overrides);
    if (sub == generate) return cmd_generate(common, gen_flags);
    if (sub == evaluate) return cmd_evaluate(common, generated_path);
    return 1;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
