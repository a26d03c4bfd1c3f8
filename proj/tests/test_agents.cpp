#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <set>
#include <sstream>

#include "qag/agents.hpp"
#include "qag/metrics.hpp"
#include "qag/model_io.hpp"

using qag::ModelConfig;
using qag::ModelParams;
using qag::QagExample;
using qag::TokenSeq;
using qag::Vocab;

namespace {

ModelConfig small_config(int vocab_size, int max_len = 96) {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.d_ff = 64;
  cfg.max_len = max_len;
  cfg.vocab_size = vocab_size;
  return cfg;
}

Vocab corpus_vocab(const std::vector<QagExample>& examples) {
  std::vector<std::string> docs;
  for (const auto& ex : examples) {
    docs.push_back(ex.passage);
    docs.push_back(ex.question);
    docs.push_back(ex.answer);
  }
  return Vocab::build(docs, 1);
}

// Trains until the next-token NLL clears the threshold (bounded rounds).
void train_until(ModelParams& model, const std::vector<qag::TrainItem>& items, double threshold,
                 std::uint64_t seed, int max_rounds = 12) {
  qag::TrainOptions opts;
  opts.epochs = 25;
  opts.batch_size = 10;
  opts.lr = 2e-3f;
  opts.seed = seed;
  for (int round = 0; round < max_rounds; ++round) {
    if (qag::mean_next_token_nll(model, items) < threshold) return;
    qag::train_seq2seq(model, items, opts);
    opts.seed += 1;
  }
}

const std::unordered_set<std::string>& stops() { return qag::stopword_set(); }

}  // namespace

TEST_CASE("answer stripping: stop words split phrases") {
  // "bread with butter" with 'with' as a stop word.
  auto phrases = qag::answer_phrases("bread with butter", stops(), qag::KeyphraseStyle::stripped);
  CHECK(phrases == std::vector<std::string>{"bread", "butter"});
}

TEST_CASE("answer with no stop words stays one phrase") {
  auto phrases = qag::answer_phrases("golden harbor lights", stops(), qag::KeyphraseStyle::stripped);
  CHECK(phrases == std::vector<std::string>{"golden harbor lights"});
}

TEST_CASE("all-stop-word answer falls back to the raw answer") {
  bool fell_back = false;
  auto phrases = qag::answer_phrases("it is the same", stops(), qag::KeyphraseStyle::stripped, &fell_back);
  CHECK(fell_back);
  CHECK(phrases == std::vector<std::string>{"it is the same"});
}

TEST_CASE("raw style keeps answers unstripped") {
  auto phrases = qag::answer_phrases("bread with butter", stops(), qag::KeyphraseStyle::raw);
  CHECK(phrases == std::vector<std::string>{"bread with butter"});
}

TEST_CASE("two answers on one passage serialize with exactly one separator") {
  std::vector<QagExample> examples{
      QagExample{"a", "shared passage text", "q1 ?", "golden harbor", "train"},
      QagExample{"b", "shared passage text", "q2 ?", "quiet meadow", "train"},
  };
  auto targets = qag::build_keyphrase_targets(examples, stops(), qag::KeyphraseStyle::stripped);
  REQUIRE(targets.size() == 1);
  CHECK(targets[0].passage_id == "a");
  CHECK(targets[0].phrases == std::vector<std::string>{"golden harbor", "quiet meadow"});
  auto s = targets[0].serialized();
  CHECK(s == "golden harbor [kpsep] quiet meadow");
  std::size_t count = 0, pos = 0;
  while ((pos = s.find("[kpsep]", pos)) != std::string::npos) {
    ++count;
    pos += 7;
  }
  CHECK(count == 1);
}

TEST_CASE("stripping warning is surfaced through build_keyphrase_targets") {
  std::vector<QagExample> examples{QagExample{"a", "p text", "q ?", "of the", "train"}};
  std::vector<std::string> warnings;
  auto targets = qag::build_keyphrase_targets(examples, stops(), qag::KeyphraseStyle::stripped, &warnings);
  REQUIRE(targets.size() == 1);
  CHECK(targets[0].phrases == std::vector<std::string>{"of the"});
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("stop words") != std::string::npos);
}

TEST_CASE("encoder input layouts match the documented bracket forms") {
  auto v = Vocab::build({"the fox runs red what ?"}, 1);
  SUBCASE("question input") {
    auto ids = qag::qg_encoder_input("the fox runs", "red fox", v, 64);
    CHECK(qag::decode(ids, v, true) == "[bos] the fox runs [cls] red fox [eos]");
  }
  SUBCASE("question input without keyphrase degenerates to passage only") {
    auto ids = qag::qg_encoder_input("the fox runs", "", v, 64);
    CHECK(qag::decode(ids, v, true) == "[bos] the fox runs [eos]");
  }
  SUBCASE("answer input") {
    auto ids = qag::ag_encoder_input("red fox", "what runs ?", "the fox runs", v, 64);
    CHECK(qag::decode(ids, v, true) == "[bos] red fox [cls] what runs ? [cls] the fox runs [eos]");
  }
  SUBCASE("answer input keeps the separator when the keyphrase is empty") {
    auto ids = qag::ag_encoder_input("", "what runs ?", "the fox runs", v, 64);
    CHECK(qag::decode(ids, v, true) == "[bos] [cls] what runs ? [cls] the fox runs [eos]");
  }
  SUBCASE("overlength truncates the passage, never the keyphrase") {
    auto ids = qag::qg_encoder_input("the fox runs the fox runs the fox runs", "red fox", v, 10);
    CHECK(static_cast<int>(ids.size()) == 10);
    CHECK(qag::decode(ids, v, true) == "[bos] the fox runs the fox [cls] red fox [eos]");
    auto aids = qag::ag_encoder_input("red fox", "what runs ?", "the fox runs the fox runs", v, 12);
    CHECK(static_cast<int>(aids.size()) == 12);
    CHECK(qag::decode(aids, v, true) == "[bos] red fox [cls] what runs ? [cls] the fox runs [eos]");
  }
  SUBCASE("a keyphrase that cannot fit is a config error") {
    CHECK_THROWS_AS(qag::qg_encoder_input("p", "a b c d e f g h", v, 8), qag::ConfigError);
  }
}

TEST_CASE("keyphrase output splitting drops empty segments") {
  auto v = Vocab::build({"x y"}, 1);
  const int kp = Vocab::kKpsep;
  CHECK(qag::split_keyphrase_output({v.id("x"), kp, kp, v.id("y")}, v) ==
        std::vector<std::string>{"x", "y"});
  CHECK(qag::split_keyphrase_output({v.id("x"), v.id("y")}, v) ==
        std::vector<std::string>{"x y"});  // no separator -> single phrase
  CHECK(qag::split_keyphrase_output({}, v).empty());
  CHECK(qag::split_keyphrase_output({kp, kp}, v).empty());
}

TEST_CASE("phrase fallback guides with the first sentence") {
  std::vector<std::string> warnings;
  auto phrases = qag::phrases_or_fallback("first part here . second part there .", {}, &warnings);
  CHECK(phrases == std::vector<std::string>{"first part here"});
  REQUIRE(warnings.size() == 1);
  // duplicates collapse, order preserved
  warnings.clear();
  auto deduped = qag::phrases_or_fallback("p .", {"a", "b", "a", "c", "b"}, &warnings);
  CHECK(deduped == std::vector<std::string>{"a", "b", "c"});
  CHECK(warnings.empty());
}

TEST_CASE("keyphrase agent strategies") {
  auto aug = qag::make_synthetic_corpus(100, 20, qag::SyntheticProfile::extractive);
  auto gen = qag::make_synthetic_corpus(200, 20, qag::SyntheticProfile::abstractive);
  std::vector<std::string> docs;
  for (const auto& c : {aug, gen})
    for (const auto& ex : c) {
      docs.push_back(ex.passage);
      docs.push_back(ex.question);
      docs.push_back(ex.answer);
    }
  auto vocab = Vocab::build(docs, 1);
  auto cfg = small_config(vocab.size());
  qag::TrainOptions opts;
  opts.seed = 7;
  opts.lr = 2e-3f;

  SUBCASE("zero epochs returns the initialization") {
    qag::StrategyOptions strat;
    strat.epochs_stage1 = 0;
    strat.epochs_stage2 = 0;
    auto trained = qag::train_keyphrase_agent(aug, gen, strat, cfg, opts, vocab);
    auto fresh = ModelParams::init(cfg, opts.seed);
    CHECK(qag::model_checksum(trained) == qag::model_checksum(fresh));
  }

  SUBCASE("two-stage training improves the generative-corpus NLL beyond stage 1") {
    qag::StrategyOptions stage1_only;
    stage1_only.strategy = qag::TrainStrategy::squad_only;
    stage1_only.epochs_stage1 = 6;
    auto after_stage1 = qag::train_keyphrase_agent(aug, gen, stage1_only, cfg, opts, vocab);

    qag::StrategyOptions two_stage;
    two_stage.epochs_stage1 = 6;
    two_stage.epochs_stage2 = 6;
    auto after_two_stage = qag::train_keyphrase_agent(aug, gen, two_stage, cfg, opts, vocab);

    auto gen_items = qag::make_keyphrase_items(gen, qag::KeyphraseStyle::stripped, vocab, cfg);
    CHECK(qag::mean_next_token_nll(after_two_stage, gen_items) <
          qag::mean_next_token_nll(after_stage1, gen_items));
  }

  SUBCASE("mixed and two-stage produce distinct parameters under one seed") {
    qag::StrategyOptions mixed;
    mixed.strategy = qag::TrainStrategy::mixed;
    mixed.epochs_stage1 = 3;
    mixed.epochs_stage2 = 3;
    qag::StrategyOptions two_stage;
    two_stage.epochs_stage1 = 3;
    two_stage.epochs_stage2 = 3;
    auto a = qag::train_keyphrase_agent(aug, gen, mixed, cfg, opts, vocab);
    auto b = qag::train_keyphrase_agent(aug, gen, two_stage, cfg, opts, vocab);
    CHECK(qag::model_checksum(a) != qag::model_checksum(b));
  }

  SUBCASE("an empty selected corpus is a config error") {
    qag::StrategyOptions strat;
    strat.strategy = qag::TrainStrategy::race_only;
    CHECK_THROWS_AS(qag::train_keyphrase_agent(aug, {}, strat, cfg, opts, vocab), qag::ConfigError);
  }
}

TEST_CASE("training logs one line per epoch and is seed-reproducible") {
  auto gen = qag::make_synthetic_corpus(300, 6, qag::SyntheticProfile::abstractive);
  auto vocab = corpus_vocab(gen);
  auto cfg = small_config(vocab.size());
  auto items = qag::make_keyphrase_items(gen, qag::KeyphraseStyle::stripped, vocab, cfg);
  auto run = [&] {
    auto model = ModelParams::init(cfg, 3);
    std::ostringstream log;
    qag::TrainOptions opts;
    opts.epochs = 3;
    opts.seed = 3;
    opts.log = &log;
    qag::train_seq2seq(model, items, opts);
    return std::make_pair(log.str(), qag::model_checksum(model));
  };
  auto [log_a, sum_a] = run();
  auto [log_b, sum_b] = run();
  CHECK(log_a == log_b);
  CHECK(sum_a == sum_b);
  CHECK(std::count(log_a.begin(), log_a.end(), '\n') == 3);
  CHECK(log_a.find("epoch=1 loss=") != std::string::npos);
}

TEST_CASE("pipeline end to end on an overfit toy corpus") {
  auto corpus = qag::make_synthetic_corpus(55, 8, qag::SyntheticProfile::abstractive);
  auto vocab = corpus_vocab(corpus);
  auto cfg = small_config(vocab.size());

  auto kp = ModelParams::init(cfg, 1);
  auto kp_items = qag::make_keyphrase_items(corpus, qag::KeyphraseStyle::stripped, vocab, cfg);
  train_until(kp, kp_items, 0.05, 11);

  auto qg = ModelParams::init(cfg, 2);
  auto qg_items = qag::make_question_items(corpus, vocab, cfg, true);
  train_until(qg, qg_items, 0.05, 12);

  auto ans = ModelParams::init(cfg, 3);
  auto ans_items = qag::make_answer_items(corpus, vocab, cfg);
  train_until(ans, ans_items, 0.05, 13);

  auto kg = kp.clone();  // refinement continues from the rough keyphrase agent
  auto kg_items = qag::make_refine_items(corpus, qg, vocab, cfg);
  train_until(kg, kg_items, 0.05, 14);

  auto groups = qag::group_by_passage(corpus);

  SUBCASE("rough keyphrases reproduce the training targets") {
    auto targets = qag::build_keyphrase_targets(corpus, stops(), qag::KeyphraseStyle::stripped);
    int hits = 0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      auto phrases = qag::generate_rough_keyphrases(groups[i].passage, kp, vocab);
      if (phrases == targets[i].phrases) ++hits;
    }
    CHECK(hits >= static_cast<int>(groups.size()) - 1);
  }

  SUBCASE("overfit qg_step regenerates gold questions with token-aligned states") {
    const auto& ex = *groups[0].examples[0];
    auto phrases = qag::answer_phrases(ex.answer, stops(), qag::KeyphraseStyle::stripped);
    auto step = qag::qg_step(ex.passage, phrases[0], qg, vocab);
    CHECK(step.question == qag::normalize(ex.question));
    CHECK(step.h_q.dim(0) == static_cast<int>(qag::encode(step.question, vocab).size()));
    CHECK(step.h_q.dim(1) == cfg.d_model);
  }

  SUBCASE("iterate fans out one state per phrase and is incremental across m") {
    const auto& passage = groups[0].passage;
    std::vector<std::string> phrases{"alpha one", "beta two", "gamma three"};
    auto states = qag::iterate(passage, phrases, qg, kg, 1, vocab);
    CHECK(states.size() == 3);
    for (std::size_t i = 0; i < states.size(); ++i) {
      CHECK(states[i].iteration == 1);
      CHECK(states[i].history.size() == 1);
      CHECK(states[i].history[0].keyphrase == phrases[i]);
    }
    auto deeper = qag::iterate(passage, phrases, qg, kg, 2, vocab);
    REQUIRE(deeper.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(deeper[i].history.size() == 2);
      CHECK(deeper[i].history[0].keyphrase == states[i].history[0].keyphrase);
      CHECK(deeper[i].history[0].question == states[i].history[0].question);
    }
    CHECK_THROWS_AS(qag::iterate(passage, phrases, qg, kg, 0, vocab), qag::ConfigError);
  }

  SUBCASE("full pipeline regenerates most gold pairs and deduplicates") {
    int gold = 0, found = 0;
    bool any_out_of_passage_token = false;
    for (const auto& g : groups) {
      auto rough = qag::phrases_or_fallback(g.passage,
                                            qag::generate_rough_keyphrases(g.passage, kp, vocab),
                                            nullptr);
      auto result = qag::run_pipeline(g.passage, kp, qg, kg, ans, 2, vocab);
      std::set<std::pair<std::string, std::string>> produced;
      for (const auto& t : result.triplets) {
        CHECK_FALSE(t.question.empty());
        CHECK_FALSE(t.answer.empty());
        auto key = std::make_pair(t.question, t.answer);
        CHECK(produced.insert(key).second);  // dedup held
        auto passage_tokens = qag::tokenize(g.passage);
        for (const auto& tok : qag::tokenize(t.answer))
          if (std::find(passage_tokens.begin(), passage_tokens.end(), tok) == passage_tokens.end())
            any_out_of_passage_token = true;
      }
      // fan-out: one triplet per deduplicated rough phrase (all pairs are
      // distinct on this corpus, so no dedup shrinkage)
      if (result.warnings.empty()) CHECK(result.triplets.size() == rough.size());
      for (const auto* ex : g.examples) {
        ++gold;
        if (produced.count({qag::normalize(ex->question), qag::normalize(ex->answer)})) ++found;
      }
    }
    CHECK(static_cast<double>(found) / gold >= 0.75);
    // answers are free-form generation, never constrained to passage spans
    CHECK(any_out_of_passage_token);
  }

  SUBCASE("pipeline is deterministic end to end") {
    const auto& passage = groups[0].passage;
    auto a = qag::run_pipeline(passage, kp, qg, kg, ans, 2, vocab);
    auto b = qag::run_pipeline(passage, kp, qg, kg, ans, 2, vocab);
    REQUIRE(a.triplets.size() == b.triplets.size());
    for (std::size_t i = 0; i < a.triplets.size(); ++i) {
      CHECK(a.triplets[i].question == b.triplets[i].question);
      CHECK(a.triplets[i].answer == b.triplets[i].answer);
    }
  }

  SUBCASE("joint mode produces a single state per passage") {
    auto result = qag::run_pipeline(groups[0].passage, kp, qg, kg, ans, 1, vocab, {},
                                    qag::PhraseMode::joint);
    CHECK(result.triplets.size() <= 1);
  }

  SUBCASE("answer_step requires a question") {
    CHECK_THROWS_AS(qag::answer_step("p", "k", "", ans, vocab), qag::ContractError);
  }
}

TEST_CASE("kg refinement with empty hidden states matches rough generation") {
  auto corpus = qag::make_synthetic_corpus(77, 4, qag::SyntheticProfile::abstractive);
  auto vocab = corpus_vocab(corpus);
  auto cfg = small_config(vocab.size());
  auto model = ModelParams::init(cfg, 5);
  const auto& passage = corpus[0].passage;
  auto refined = qag::kg_refine_step(passage, qag::Tensor::zeros({0, cfg.d_model}), model, vocab);
  auto rough = qag::generate_rough_keyphrases(passage, model, vocab);
  auto resplit = qag::split_keyphrase_output(qag::encode(refined, vocab), vocab);
  CHECK(resplit == rough);
  // fixed hidden states give deterministic refinements
  auto step = qag::qg_step(passage, "anything", model, vocab);
  auto r1 = qag::kg_refine_step(passage, step.h_q, model, vocab);
  auto r2 = qag::kg_refine_step(passage, step.h_q, model, vocab);
  CHECK(r1 == r2);
  // hidden states of the wrong width violate the contract
  CHECK_THROWS_AS(
      qag::kg_refine_step(passage, qag::Tensor::zeros({2, cfg.d_model + 1}), model, vocab),
      qag::ContractError);
}

TEST_CASE("empty generations are dropped with warnings, never emitted") {
  auto corpus = qag::make_synthetic_corpus(88, 4, qag::SyntheticProfile::abstractive);
  auto vocab = corpus_vocab(corpus);
  auto cfg = small_config(vocab.size());
  auto kp = ModelParams::init(cfg, 6);
  auto mute = ModelParams::init(cfg, 7);
  mute.out_b.data()[Vocab::kEos] = 60.0f;  // every generation ends immediately
  auto result = qag::run_pipeline(corpus[0].passage, kp, mute, kp, kp, 1, vocab);
  CHECK(result.triplets.empty());
  CHECK_FALSE(result.warnings.empty());
  bool mentions_drop = false;
  for (const auto& w : result.warnings) mentions_drop = mentions_drop || w.find("dropped") != std::string::npos;
  CHECK(mentions_drop);

  // A mute keyphrase agent triggers the most-similar-sentence fallback.
  auto fallback = qag::run_pipeline(corpus[0].passage, mute, kp, kp, kp, 1, vocab);
  bool mentions_fallback = false;
  for (const auto& w : fallback.warnings)
    mentions_fallback = mentions_fallback || w.find("most similar sentence") != std::string::npos;
  CHECK(mentions_fallback);
}

TEST_CASE("shared-encoder baseline shares exactly one encoder") {
  auto corpus = qag::make_synthetic_corpus(99, 6, qag::SyntheticProfile::abstractive);
  auto vocab = corpus_vocab(corpus);
  auto cfg = small_config(vocab.size());
  auto model = qag::SharedEncoderModel::init(cfg, 9);
  CHECK(model.encoder_is_shared());
  CHECK(model.question_head.stream_emb.node() != model.answer_head.stream_emb.node());

  SUBCASE("joint loss equals the sum of per-head losses") {
    const auto& ex = corpus[0];
    auto src = qag::passage_encoder_input(ex.passage, vocab, cfg.max_len);
    auto tgt_q = qag::encode(ex.question, vocab);
    tgt_q.push_back(Vocab::kEos);
    auto tgt_a = qag::encode(ex.answer, vocab);
    tgt_a.push_back(Vocab::kEos);
    auto enc = qag::encode(src, model.question_head);
    auto dec_q = qag::decode_train(tgt_q, enc, model.question_head);
    auto dec_a = qag::decode_train(tgt_a, enc, model.answer_head);
    auto lq = qag::stream_loss(dec_q.logits1, dec_q.logits2, tgt_q, cfg.stream_loss_weights);
    auto la = qag::stream_loss(dec_a.logits1, dec_a.logits2, tgt_a, cfg.stream_loss_weights);
    auto joint = qag::add(lq, la);
    CHECK(joint.item() == lq.item() + la.item());
  }

  SUBCASE("training runs and the checkpoint round-trips") {
    qag::TrainOptions opts;
    opts.epochs = 3;
    opts.seed = 10;
    auto stats = qag::train_shared_encoder(model, corpus, vocab, opts);
    CHECK(stats.size() == 3);
    CHECK(stats.back().loss < stats.front().loss);
    qag::save_shared_model("shared_test_ckpt", model);
    auto loaded = qag::load_shared_model("shared_test_ckpt");
    CHECK(loaded.encoder_is_shared());
    auto a = qag::shared_encoder_generate(model, corpus[0].passage, vocab);
    auto b = qag::shared_encoder_generate(loaded, corpus[0].passage, vocab);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    std::remove("shared_test_ckpt.manifest");
    std::remove("shared_test_ckpt.bin");
  }
}
