#include "qag/agents.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

#include "qag/checkpoint.hpp"
#include "qag/model_io.hpp"

namespace qag {

// ---------------------------------------------------------------------------
// Keyphrase targets
// ---------------------------------------------------------------------------

std::string KeyphraseTarget::serialized() const {
  std::string out;
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    if (i) out += " " + Vocab::reserved_tokens()[Vocab::kKpsep] + " ";
    out += phrases[i];
  }
  return out;
}

std::vector<std::string> answer_phrases(const std::string& answer,
                                        const std::unordered_set<std::string>& stopwords,
                                        KeyphraseStyle style, bool* fell_back) {
  if (fell_back) *fell_back = false;
  auto tokens = tokenize(answer);
  if (tokens.empty()) return {};
  if (style == KeyphraseStyle::raw) return {normalize(answer)};
  std::vector<std::string> phrases;
  std::string cur;
  for (const auto& tok : tokens) {
    if (stopwords.count(tok)) {
      if (!cur.empty()) phrases.push_back(cur);
      cur.clear();
    } else {
      if (!cur.empty()) cur += ' ';
      cur += tok;
    }
  }
  if (!cur.empty()) phrases.push_back(cur);
  if (phrases.empty()) {
    if (fell_back) *fell_back = true;
    return {normalize(answer)};
  }
  return phrases;
}

std::vector<KeyphraseTarget> build_keyphrase_targets(const std::vector<QagExample>& examples,
                                                     const std::unordered_set<std::string>& stopwords,
                                                     KeyphraseStyle style,
                                                     std::vector<std::string>* warnings) {
  std::vector<KeyphraseTarget> targets;
  for (const auto& group : group_by_passage(examples)) {
    KeyphraseTarget t;
    t.passage_id = group.passage_id;
    for (const auto* ex : group.examples) {
      if (ex->answer.empty()) {
        if (warnings) warnings->push_back("example " + ex->id + " has no answer; skipped");
        continue;
      }
      bool fell_back = false;
      for (auto& phrase : answer_phrases(ex->answer, stopwords, style, &fell_back))
        t.phrases.push_back(std::move(phrase));
      if (fell_back && warnings)
        warnings->push_back("answer of " + ex->id + " is all stop words; kept raw");
    }
    if (!t.phrases.empty()) targets.push_back(std::move(t));
  }
  return targets;
}

// ---------------------------------------------------------------------------
// Encoder input layouts
// ---------------------------------------------------------------------------

namespace {

TokenSeq truncate_to(TokenSeq ids, int limit) {
  if (limit < 0) limit = 0;
  if (static_cast<int>(ids.size()) > limit) ids.resize(static_cast<std::size_t>(limit));
  return ids;
}

}  // namespace

TokenSeq qg_encoder_input(const std::string& passage, const std::string& keyphrase,
                          const Vocab& vocab, int max_len) {
  TokenSeq k = encode(keyphrase, vocab);
  TokenSeq p = encode(passage, vocab);
  if (k.empty()) {
    TokenSeq out{Vocab::kBos};
    for (int id : truncate_to(p, max_len - 2)) out.push_back(id);
    out.push_back(Vocab::kEos);
    return out;
  }
  const int overhead = 3 + static_cast<int>(k.size());  // bos + cls + k + eos
  if (overhead > max_len)
    throw ConfigError("qg input: keyphrase of " + std::to_string(k.size()) +
                      " tokens cannot fit max_len " + std::to_string(max_len));
  TokenSeq out{Vocab::kBos};
  for (int id : truncate_to(p, max_len - overhead)) out.push_back(id);
  out.push_back(Vocab::kCls);
  out.insert(out.end(), k.begin(), k.end());
  out.push_back(Vocab::kEos);
  return out;
}

TokenSeq passage_encoder_input(const std::string& passage, const Vocab& vocab, int max_len,
                               int reserve) {
  TokenSeq out{Vocab::kBos};
  for (int id : truncate_to(encode(passage, vocab), max_len - reserve - 2)) out.push_back(id);
  out.push_back(Vocab::kEos);
  return out;
}

TokenSeq ag_encoder_input(const std::string& keyphrase, const std::string& question,
                          const std::string& passage, const Vocab& vocab, int max_len) {
  TokenSeq k = encode(keyphrase, vocab);
  TokenSeq q = encode(question, vocab);
  TokenSeq p = encode(passage, vocab);
  const int overhead = 4 + static_cast<int>(k.size()) + static_cast<int>(q.size());
  if (overhead > max_len)
    throw ConfigError("answer input: keyphrase and question cannot fit max_len " +
                      std::to_string(max_len));
  TokenSeq out{Vocab::kBos};
  out.insert(out.end(), k.begin(), k.end());
  out.push_back(Vocab::kCls);
  out.insert(out.end(), q.begin(), q.end());
  out.push_back(Vocab::kCls);
  for (int id : truncate_to(p, max_len - overhead)) out.push_back(id);
  out.push_back(Vocab::kEos);
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainStrategy parse_strategy(const std::string& name) {
  if (name == "race_only") return TrainStrategy::race_only;
  if (name == "squad_only") return TrainStrategy::squad_only;
  if (name == "mixed") return TrainStrategy::mixed;
  if (name == "two_stage") return TrainStrategy::two_stage;
  throw ConfigError("unknown strategy '" + name + "' (race_only|squad_only|mixed|two_stage)");
}

std::string strategy_name(TrainStrategy s) {
  switch (s) {
    case TrainStrategy::race_only: return "race_only";
    case TrainStrategy::squad_only: return "squad_only";
    case TrainStrategy::mixed: return "mixed";
    case TrainStrategy::two_stage: return "two_stage";
  }
  return "?";
}

PhraseMode parse_phrase_mode(const std::string& name) {
  if (name == "fanout") return PhraseMode::fanout;
  if (name == "joint") return PhraseMode::joint;
  throw ConfigError("unknown phrase mode '" + name + "' (fanout|joint)");
}

TrainItem make_item(TokenSeq src, TokenSeq tgt) {
  return TrainItem{Tensor::zeros({0, 0}), std::move(src), std::move(tgt)};
}

namespace {

TokenSeq target_ids(const std::string& text, const Vocab& vocab, int max_len) {
  TokenSeq tgt = encode(text, vocab);
  tgt.push_back(Vocab::kEos);
  return truncate_to(std::move(tgt), max_len);
}

EncOut encode_item(const TrainItem& item, const ModelParams& params) {
  if (item.prefix.defined() && item.prefix.numel() > 0)
    return encode_prefixed(item.prefix, item.src, params);
  return encode(item.src, params);
}

}  // namespace

std::vector<EpochStats> train_seq2seq(ModelParams& model, const std::vector<TrainItem>& items,
                                      const TrainOptions& opts) {
  if (items.empty()) throw ConfigError("train_seq2seq: empty training set");
  auto params = model.params();
  AdamStateT<float> adam;
  adam.lr = opts.lr;
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochStats> stats;
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0, nll1_sum = 0, nll2_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
      model.zero_grad();
      Tensor batch_loss;
      for (std::size_t k = start; k < end; ++k) {
        const auto& item = items[order[k]];
        auto enc = encode_item(item, model);
        auto dec = decode_train(item.tgt, enc, model);
        auto l1 = cross_entropy(dec.logits1, std::vector<int>(item.tgt.begin(), item.tgt.end()), -1);
        std::vector<int> labels2(item.tgt.size(), -1);
        for (std::size_t i = 0; i + 1 < item.tgt.size(); ++i) labels2[i] = item.tgt[i + 1];
        auto l2 = cross_entropy(dec.logits2, labels2, -1);
        auto item_loss = add(scale(l1, static_cast<float>(model.config.stream_loss_weights[0])),
                             scale(l2, static_cast<float>(model.config.stream_loss_weights[1])));
        nll1_sum += l1.item();
        nll2_sum += l2.item();
        batch_loss = batch_loss.defined() ? add(batch_loss, item_loss) : item_loss;
      }
      batch_loss = scale(batch_loss, 1.0f / static_cast<float>(end - start));
      backward(batch_loss);
      adam_step<float>(params, adam);
      loss_sum += static_cast<double>(batch_loss.item()) * static_cast<double>(end - start);
    }
    EpochStats es;
    es.epoch = epoch;
    es.loss = loss_sum / static_cast<double>(items.size());
    es.nll1 = nll1_sum / static_cast<double>(items.size());
    es.nll2 = nll2_sum / static_cast<double>(items.size());
    stats.push_back(es);
    if (opts.log) {
      char line[160];
      std::snprintf(line, sizeof(line), "%sepoch=%d loss=%.6f nll1=%.6f nll2=%.6f",
                    opts.log_prefix.c_str(), es.epoch, es.loss, es.nll1, es.nll2);
      *opts.log << line << "\n";
    }
  }
  return stats;
}

double mean_next_token_nll(const ModelParams& model, const std::vector<TrainItem>& items) {
  NoGradGuard ng;
  double total = 0;
  long tokens = 0;
  for (const auto& item : items) {
    auto enc = encode_item(item, model);
    auto dec = decode_train(item.tgt, enc, model);
    auto l1 = cross_entropy(dec.logits1, std::vector<int>(item.tgt.begin(), item.tgt.end()), -1);
    total += static_cast<double>(l1.item()) * static_cast<double>(item.tgt.size());
    tokens += static_cast<long>(item.tgt.size());
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

std::vector<TrainItem> make_keyphrase_items(const std::vector<QagExample>& examples,
                                            KeyphraseStyle style, const Vocab& vocab,
                                            const ModelConfig& cfg) {
  std::vector<QagExample> train;
  for (const auto& ex : examples)
    if (ex.split == "train") train.push_back(ex);
  std::vector<TrainItem> items;
  for (const auto& target : build_keyphrase_targets(train, stopword_set(), style)) {
    // group_by_passage keyed targets by the first example's id; recover the
    // passage text from any member example.
    const QagExample* owner = nullptr;
    for (const auto& ex : train)
      if (ex.id == target.passage_id) {
        owner = &ex;
        break;
      }
    if (!owner) continue;
    items.push_back(make_item(passage_encoder_input(owner->passage, vocab, cfg.max_len),
                              target_ids(target.serialized(), vocab, cfg.max_len)));
  }
  return items;
}

std::vector<TrainItem> make_question_items(const std::vector<QagExample>& examples, const Vocab& vocab,
                                           const ModelConfig& cfg, bool guided, PhraseMode mode,
                                           KeyphraseStyle style) {
  std::vector<TrainItem> items;
  for (const auto& ex : examples) {
    if (ex.split != "train" || ex.question.empty()) continue;
    auto tgt = target_ids(ex.question, vocab, cfg.max_len);
    if (!guided) {
      items.push_back(make_item(passage_encoder_input(ex.passage, vocab, cfg.max_len), tgt));
      continue;
    }
    auto phrases = answer_phrases(ex.answer, stopword_set(), style);
    if (phrases.empty()) continue;
    if (mode == PhraseMode::joint) {
      KeyphraseTarget t;
      t.phrases = phrases;
      items.push_back(make_item(qg_encoder_input(ex.passage, t.serialized(), vocab, cfg.max_len), tgt));
    } else {
      for (const auto& phrase : phrases)
        items.push_back(make_item(qg_encoder_input(ex.passage, phrase, vocab, cfg.max_len), tgt));
    }
  }
  return items;
}

std::vector<TrainItem> make_answer_items(const std::vector<QagExample>& examples, const Vocab& vocab,
                                         const ModelConfig& cfg, PhraseMode mode,
                                         KeyphraseStyle style) {
  std::vector<TrainItem> items;
  for (const auto& ex : examples) {
    if (ex.split != "train" || ex.answer.empty()) continue;
    auto tgt = target_ids(ex.answer, vocab, cfg.max_len);
    auto phrases = answer_phrases(ex.answer, stopword_set(), style);
    if (phrases.empty()) continue;
    if (mode == PhraseMode::joint) {
      KeyphraseTarget t;
      t.phrases = phrases;
      items.push_back(
          make_item(ag_encoder_input(t.serialized(), ex.question, ex.passage, vocab, cfg.max_len), tgt));
    } else {
      for (const auto& phrase : phrases)
        items.push_back(
            make_item(ag_encoder_input(phrase, ex.question, ex.passage, vocab, cfg.max_len), tgt));
    }
  }
  return items;
}

namespace {

// Final-layer main-stream decoder states over the question tokens, computed
// by a teacher-forced pass; row j corresponds to question token j.
Tensor question_states(const EncOut& enc, const TokenSeq& question_ids, const ModelParams& params) {
  NoGradGuard ng;
  if (question_ids.empty()) return Tensor::zeros({0, params.config.d_model});
  TokenSeq dec_input;
  dec_input.reserve(question_ids.size() + 1);
  dec_input.push_back(Vocab::kBos);
  dec_input.insert(dec_input.end(), question_ids.begin(), question_ids.end());
  auto result = decode_forward(dec_input, enc, params);
  const int t = result.states.final_main.dim(0);
  return slice_rows(result.states.final_main, 1, t).detach();
}

}  // namespace

std::vector<TrainItem> make_refine_items(const std::vector<QagExample>& examples,
                                         const ModelParams& qg_params, const Vocab& vocab,
                                         const ModelConfig& cfg, PhraseMode mode,
                                         KeyphraseStyle style) {
  std::vector<TrainItem> items;
  for (const auto& ex : examples) {
    if (ex.split != "train" || ex.question.empty() || ex.answer.empty()) continue;
    auto phrases = answer_phrases(ex.answer, stopword_set(), style);
    if (phrases.empty()) continue;
    auto add_instance = [&](const std::string& guidance, const std::string& target) {
      auto enc = encode(qg_encoder_input(ex.passage, guidance, vocab, qg_params.config.max_len),
                        qg_params);
      auto h_q = question_states(enc, encode(ex.question, vocab), qg_params);
      TrainItem item;
      item.prefix = h_q;
      item.src = passage_encoder_input(ex.passage, vocab, cfg.max_len, h_q.dim(0));
      item.tgt = target_ids(target, vocab, cfg.max_len);
      items.push_back(std::move(item));
    };
    if (mode == PhraseMode::joint) {
      KeyphraseTarget t;
      t.phrases = phrases;
      add_instance(t.serialized(), t.serialized());
    } else {
      for (const auto& phrase : phrases) add_instance(phrase, phrase);
    }
  }
  return items;
}

ModelParams train_keyphrase_agent(const std::vector<QagExample>& corpus_aug,
                                  const std::vector<QagExample>& corpus_gen,
                                  const StrategyOptions& strategy, const ModelConfig& cfg,
                                  TrainOptions opts, const Vocab& vocab,
                                  std::vector<EpochStats>* stats) {
  if (strategy.epochs_stage1 < 0 || strategy.epochs_stage2 < 0)
    throw ConfigError("train_keyphrase_agent: negative epochs");
  auto model = ModelParams::init(cfg, opts.seed);
  auto items_aug = [&] { return make_keyphrase_items(corpus_aug, KeyphraseStyle::raw, vocab, cfg); };
  auto items_gen = [&] { return make_keyphrase_items(corpus_gen, KeyphraseStyle::stripped, vocab, cfg); };
  auto run = [&](const std::vector<TrainItem>& items, int epochs, const std::string& prefix) {
    if (items.empty()) throw ConfigError("train_keyphrase_agent: selected corpus is empty");
    if (epochs == 0) return;
    TrainOptions stage = opts;
    stage.epochs = epochs;
    stage.log_prefix = prefix + opts.log_prefix;
    auto s = train_seq2seq(model, items, stage);
    if (stats) stats->insert(stats->end(), s.begin(), s.end());
  };
  switch (strategy.strategy) {
    case TrainStrategy::squad_only:
      run(items_aug(), strategy.epochs_stage1, "stage=aug ");
      break;
    case TrainStrategy::race_only:
      run(items_gen(), strategy.epochs_stage2, "stage=gen ");
      break;
    case TrainStrategy::mixed: {
      auto items = items_aug();
      auto gen = items_gen();
      items.insert(items.end(), std::make_move_iterator(gen.begin()), std::make_move_iterator(gen.end()));
      run(items, strategy.epochs_stage1 + strategy.epochs_stage2, "stage=mixed ");
      break;
    }
    case TrainStrategy::two_stage:
      run(items_aug(), strategy.epochs_stage1, "stage=1 ");
      run(items_gen(), strategy.epochs_stage2, "stage=2 ");
      break;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Pipeline inference
// ---------------------------------------------------------------------------

TokenSeq decode_tokens(const EncOut& enc, const ModelParams& params, const DecodeOptions& opts) {
  if (opts.beam < 1) throw ConfigError("decode: beam must be >= 1");
  const int budget = std::min(opts.max_new, params.config.max_len - 1);
  auto scorer = make_step_scorer(enc, params);
  if (opts.beam == 1) return decoding::greedy(scorer, Vocab::kEos, budget);
  return decoding::beam(scorer, Vocab::kEos, budget, opts.beam, opts.length_penalty);
}

std::vector<std::string> split_keyphrase_output(const TokenSeq& ids, const Vocab& vocab) {
  std::vector<std::string> phrases;
  TokenSeq segment;
  auto flush = [&] {
    if (!segment.empty()) {
      auto text = decode(segment, vocab);
      if (!text.empty()) phrases.push_back(text);
    }
    segment.clear();
  };
  for (int id : ids) {
    if (id == Vocab::kKpsep) flush();
    else segment.push_back(id);
  }
  flush();
  return phrases;
}

std::vector<std::string> generate_rough_keyphrases(const std::string& passage,
                                                   const ModelParams& kp_params, const Vocab& vocab,
                                                   const DecodeOptions& opts) {
  NoGradGuard ng;
  auto enc = encode(passage_encoder_input(passage, vocab, kp_params.config.max_len), kp_params);
  return split_keyphrase_output(decode_tokens(enc, kp_params, opts), vocab);
}

QgStep qg_step(const std::string& passage, const std::string& keyphrase, const ModelParams& qg_params,
               const Vocab& vocab, const DecodeOptions& opts) {
  NoGradGuard ng;
  auto enc = encode(qg_encoder_input(passage, keyphrase, vocab, qg_params.config.max_len), qg_params);
  auto q_ids = decode_tokens(enc, qg_params, opts);
  QgStep step;
  step.question = decode(q_ids, vocab);
  // Re-pass over the generated question (teacher forcing the greedy output)
  // for the hidden-state feedback signal.
  step.h_q = question_states(enc, q_ids, qg_params);
  return step;
}

std::string kg_refine_step(const std::string& passage, const Tensor& h_q_prev,
                           const ModelParams& kg_params, const Vocab& vocab,
                           const DecodeOptions& opts) {
  NoGradGuard ng;
  const int n_prefix = h_q_prev.defined() && h_q_prev.numel() > 0 ? h_q_prev.dim(0) : 0;
  if (n_prefix > 0 && h_q_prev.dim(1) != kg_params.config.d_model)
    throw ContractError("kg_refine_step: hidden-state width " + std::to_string(h_q_prev.dim(1)) +
                        " != d_model " + std::to_string(kg_params.config.d_model));
  auto tokens = passage_encoder_input(passage, vocab, kg_params.config.max_len, n_prefix);
  auto enc = n_prefix > 0 ? encode_prefixed(h_q_prev, tokens, kg_params) : encode(tokens, kg_params);
  return decode(decode_tokens(enc, kg_params, opts), vocab);
}

std::vector<PipelineState> iterate(const std::string& passage, const std::vector<std::string>& k1,
                                   const ModelParams& qg_params, const ModelParams& kg_params, int m,
                                   const Vocab& vocab, const DecodeOptions& opts) {
  if (m < 1) throw ConfigError("iterate: m must be >= 1");
  std::vector<PipelineState> states;
  for (const auto& phrase : k1) {
    PipelineState st;
    st.keyphrase = phrase;
    for (int i = 1; i <= m; ++i) {
      auto step = qg_step(passage, st.keyphrase, qg_params, vocab, opts);
      st.iteration = i;
      st.question = step.question;
      st.h_q = step.h_q;
      st.history.push_back({st.keyphrase, st.question});
      if (i < m) st.keyphrase = kg_refine_step(passage, st.h_q, kg_params, vocab, opts);
    }
    states.push_back(std::move(st));
  }
  return states;
}

std::string answer_step(const std::string& passage, const std::string& keyphrase,
                        const std::string& question, const ModelParams& ans_params, const Vocab& vocab,
                        const DecodeOptions& opts) {
  if (question.empty()) throw ContractError("answer_step: empty question");
  NoGradGuard ng;
  auto enc =
      encode(ag_encoder_input(keyphrase, question, passage, vocab, ans_params.config.max_len), ans_params);
  return decode(decode_tokens(enc, ans_params, opts), vocab);
}

std::vector<std::string> phrases_or_fallback(const std::string& passage,
                                             std::vector<std::string> phrases,
                                             std::vector<std::string>* warnings) {
  // Order-preserving dedup.
  std::vector<std::string> unique;
  for (auto& p : phrases)
    if (std::find(unique.begin(), unique.end(), p) == unique.end()) unique.push_back(std::move(p));
  if (unique.empty()) {
    if (warnings) warnings->push_back("no keyphrases generated; guiding with the most similar sentence");
    unique.push_back(most_similar_sentence(passage, {}));
  }
  return unique;
}

PipelineResult run_pipeline(const std::string& passage, const ModelParams& kp_params,
                            const ModelParams& qg_params, const ModelParams& kg_params,
                            const ModelParams& ans_params, int m, const Vocab& vocab,
                            const DecodeOptions& opts, PhraseMode mode) {
  PipelineResult result;
  auto phrases =
      phrases_or_fallback(passage, generate_rough_keyphrases(passage, kp_params, vocab, opts),
                          &result.warnings);
  if (mode == PhraseMode::joint) {
    KeyphraseTarget t;
    t.phrases = phrases;
    phrases = {t.serialized()};
  }
  auto states = iterate(passage, phrases, qg_params, kg_params, m, vocab, opts);
  for (const auto& st : states) {
    if (st.question.empty()) {
      result.warnings.push_back("empty question for keyphrase '" + st.keyphrase + "'; dropped");
      continue;
    }
    auto answer = answer_step(passage, st.keyphrase, st.question, ans_params, vocab, opts);
    if (answer.empty()) {
      result.warnings.push_back("empty answer for question '" + st.question + "'; dropped");
      continue;
    }
    result.triplets.push_back(Triplet{st.keyphrase, st.question, answer});
  }
  // Drop duplicate (question, answer) pairs, keeping the first.
  std::vector<Triplet> unique;
  for (auto& t : result.triplets) {
    bool dup = false;
    for (const auto& u : unique) dup = dup || (u.question == t.question && u.answer == t.answer);
    if (!dup) unique.push_back(std::move(t));
  }
  result.triplets = std::move(unique);
  return result;
}

// ---------------------------------------------------------------------------
// Shared-encoder baseline
// ---------------------------------------------------------------------------

namespace {

bool is_decoder_side(const std::string& name) {
  return name == "stream_emb" || name.rfind("dec.", 0) == 0 || name.rfind("dec_final_ln", 0) == 0 ||
         name == "out_w" || name == "out_b";
}

}  // namespace

SharedEncoderModel SharedEncoderModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  SharedEncoderModel m;
  m.question_head = ModelParams::init(cfg, seed);
  m.answer_head = ModelParams::init(cfg, seed + 1);
  // Alias every encoder-side tensor to the question head's instance.
  m.answer_head.tok_emb = m.question_head.tok_emb;
  m.answer_head.pos_emb = m.question_head.pos_emb;
  m.answer_head.enc_layers = m.question_head.enc_layers;
  m.answer_head.enc_final_ln = m.question_head.enc_final_ln;
  return m;
}

bool SharedEncoderModel::encoder_is_shared() const {
  bool shared = answer_head.tok_emb.node() == question_head.tok_emb.node() &&
                answer_head.pos_emb.node() == question_head.pos_emb.node() &&
                answer_head.enc_final_ln.gamma.node() == question_head.enc_final_ln.gamma.node();
  for (std::size_t i = 0; i < question_head.enc_layers.size(); ++i)
    shared = shared &&
             answer_head.enc_layers[i].attn.wq.node() == question_head.enc_layers[i].attn.wq.node() &&
             answer_head.enc_layers[i].ffn.w1.node() == question_head.enc_layers[i].ffn.w1.node();
  return shared;
}

std::vector<std::pair<std::string, Tensor*>> SharedEncoderModel::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : question_head.named_params()) out.emplace_back("q." + name, t);
  for (auto& [name, t] : answer_head.named_params())
    if (is_decoder_side(name)) out.emplace_back("a." + name, t);
  return out;
}

std::vector<Tensor*> SharedEncoderModel::params() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

void SharedEncoderModel::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

std::vector<EpochStats> train_shared_encoder(SharedEncoderModel& model,
                                             const std::vector<QagExample>& examples,
                                             const Vocab& vocab, const TrainOptions& opts) {
  struct Instance {
    TokenSeq src, tgt_q, tgt_a;
  };
  std::vector<Instance> items;
  const auto& cfg = model.question_head.config;
  for (const auto& ex : examples) {
    if (ex.split != "train" || ex.question.empty() || ex.answer.empty()) continue;
    items.push_back(Instance{passage_encoder_input(ex.passage, vocab, cfg.max_len),
                             target_ids(ex.question, vocab, cfg.max_len),
                             target_ids(ex.answer, vocab, cfg.max_len)});
  }
  if (items.empty()) throw ConfigError("train_shared_encoder: empty training set");

  auto params = model.params();
  AdamStateT<float> adam;
  adam.lr = opts.lr;
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochStats> stats;
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
      model.zero_grad();
      Tensor batch_loss;
      for (std::size_t k = start; k < end; ++k) {
        const auto& item = items[order[k]];
        auto enc = encode(item.src, model.question_head);
        auto dec_q = decode_train(item.tgt_q, enc, model.question_head);
        auto dec_a = decode_train(item.tgt_a, enc, model.answer_head);
        auto loss_q = stream_loss(dec_q.logits1, dec_q.logits2, item.tgt_q, cfg.stream_loss_weights);
        auto loss_a = stream_loss(dec_a.logits1, dec_a.logits2, item.tgt_a, cfg.stream_loss_weights);
        auto joint = add(loss_q, loss_a);  // sum of the two per-head losses
        batch_loss = batch_loss.defined() ? add(batch_loss, joint) : joint;
      }
      batch_loss = scale(batch_loss, 1.0f / static_cast<float>(end - start));
      backward(batch_loss);
      adam_step<float>(params, adam);
      loss_sum += static_cast<double>(batch_loss.item()) * static_cast<double>(end - start);
    }
    EpochStats es;
    es.epoch = epoch;
    es.loss = loss_sum / static_cast<double>(items.size());
    stats.push_back(es);
    if (opts.log) {
      char line[120];
      std::snprintf(line, sizeof(line), "%sepoch=%d loss=%.6f", opts.log_prefix.c_str(), es.epoch,
                    es.loss);
      *opts.log << line << "\n";
    }
  }
  return stats;
}

std::pair<std::string, std::string> shared_encoder_generate(const SharedEncoderModel& model,
                                                            const std::string& passage,
                                                            const Vocab& vocab,
                                                            const DecodeOptions& opts) {
  NoGradGuard ng;
  auto enc = encode(passage_encoder_input(passage, vocab, model.question_head.config.max_len),
                    model.question_head);
  auto q = decode(decode_tokens(enc, model.question_head, opts), vocab);
  auto a = decode(decode_tokens(enc, model.answer_head, opts), vocab);
  return {q, a};
}

void save_shared_model(const std::string& base, SharedEncoderModel& model) {
  auto header = config_header(model.question_head.config);
  header.kv["kind"] = "shared_encoder";
  save_checkpoint<float>(base, model.named_params(), header);
}

SharedEncoderModel load_shared_model(const std::string& base) {
  auto header = read_checkpoint_header(base);
  auto cfg = config_from_header(header);
  auto model = SharedEncoderModel::init(cfg, 0);
  auto named = model.named_params();
  load_checkpoint<float>(base, named);
  return model;
}

}  // namespace qag
