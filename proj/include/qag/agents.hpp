#pragma once

// The three-stage generation pipeline: a rough keyphrase agent with
// two-stage fine-tuning, iterative question-keyphrase refinement, and
// keyphrase-and-question guided answer generation. All agents share one
// architecture and vocabulary; each owns its weights.

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "qag/corpus.hpp"
#include "qag/stopwords.hpp"
#include "qag/transformer.hpp"
#include "qag/vocab.hpp"

namespace qag {

// ---------------------------------------------------------------------------
// Keyphrase targets
// ---------------------------------------------------------------------------

// stripped: remove stop words from each answer; maximal runs of surviving
// tokens become separate phrases (the generative-corpus target).
// raw: keep each answer whole (the extractive augmentation-corpus target).
enum class KeyphraseStyle { stripped, raw };

struct KeyphraseTarget {
  std::string passage_id;
  std::vector<std::string> phrases;

  // Phrases joined by the keyphrase separator token.
  std::string serialized() const;
};

// Phrase fragments of a single answer. An answer that strips to nothing
// falls back to its raw form (sets *fell_back).
std::vector<std::string> answer_phrases(const std::string& answer,
                                        const std::unordered_set<std::string>& stopwords,
                                        KeyphraseStyle style, bool* fell_back = nullptr);

// One target per passage: every reference answer's fragments concatenated in
// example order.
std::vector<KeyphraseTarget> build_keyphrase_targets(const std::vector<QagExample>& examples,
                                                     const std::unordered_set<std::string>& stopwords,
                                                     KeyphraseStyle style,
                                                     std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------
// Encoder input layouts
// ---------------------------------------------------------------------------

// [bos] p [cls] k [eos]; an empty keyphrase degenerates to [bos] p [eos]
// (the unguided mode). The passage truncates from the right; the keyphrase
// never does.
TokenSeq qg_encoder_input(const std::string& passage, const std::string& keyphrase,
                          const Vocab& vocab, int max_len);

// [bos] p [eos] with the passage truncated to leave `reserve` positions.
TokenSeq passage_encoder_input(const std::string& passage, const Vocab& vocab, int max_len,
                               int reserve = 0);

// [bos] k [cls] q [cls] p [eos]; only the passage truncates. An empty k
// keeps its [cls] slot.
TokenSeq ag_encoder_input(const std::string& keyphrase, const std::string& question,
                          const std::string& passage, const Vocab& vocab, int max_len);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class TrainStrategy { race_only, squad_only, mixed, two_stage };

TrainStrategy parse_strategy(const std::string& name);
std::string strategy_name(TrainStrategy s);

struct StrategyOptions {
  TrainStrategy strategy = TrainStrategy::two_stage;
  int epochs_stage1 = 15;
  int epochs_stage2 = 10;
};

struct TrainOptions {
  int epochs = 10;
  int batch_size = 10;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;       // one line per epoch
  std::string log_prefix;            // e.g. "stage=1 "
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;  // weighted stream loss
  double nll1 = 0.0;  // mean per-example stream-1 NLL
  double nll2 = 0.0;
};

// One teacher-forced training instance. A non-empty prefix is injected in
// front of the token embeddings (sequence-axis concatenation).
struct TrainItem {
  Tensor prefix;  // [n x d_model] or zero rows
  TokenSeq src;
  TokenSeq tgt;  // ends with EOS
};

TrainItem make_item(TokenSeq src, TokenSeq tgt);

// Seeded, single-threaded teacher forcing with per-batch Adam updates.
std::vector<EpochStats> train_seq2seq(ModelParams& params, const std::vector<TrainItem>& items,
                                      const TrainOptions& opts);

// Mean per-token next-token NLL (stream 1) over the items.
double mean_next_token_nll(const ModelParams& params, const std::vector<TrainItem>& items);

// Dataset builders (train-split records only).
enum class PhraseMode { fanout, joint };

PhraseMode parse_phrase_mode(const std::string& name);

std::vector<TrainItem> make_keyphrase_items(const std::vector<QagExample>& examples,
                                            KeyphraseStyle style, const Vocab& vocab,
                                            const ModelConfig& cfg);
// guided=false drops the keyphrase slot entirely (passage-only questioning).
std::vector<TrainItem> make_question_items(const std::vector<QagExample>& examples, const Vocab& vocab,
                                           const ModelConfig& cfg, bool guided,
                                           PhraseMode mode = PhraseMode::fanout,
                                           KeyphraseStyle style = KeyphraseStyle::stripped);
std::vector<TrainItem> make_answer_items(const std::vector<QagExample>& examples, const Vocab& vocab,
                                         const ModelConfig& cfg, PhraseMode mode = PhraseMode::fanout,
                                         KeyphraseStyle style = KeyphraseStyle::stripped);
// Refinement instances: encoder input [h_q(gold question) : p], target the
// example's own phrases. Needs a trained question agent for the hidden
// states.
std::vector<TrainItem> make_refine_items(const std::vector<QagExample>& examples,
                                         const ModelParams& qg_params, const Vocab& vocab,
                                         const ModelConfig& cfg, PhraseMode mode = PhraseMode::fanout,
                                         KeyphraseStyle style = KeyphraseStyle::stripped);

// Strategy-driven keyphrase agent training. corpus_aug is the extractive
// augmentation corpus (raw targets), corpus_gen the generative target corpus
// (stripped targets). two_stage runs aug then gen; mixed shuffles the union.
ModelParams train_keyphrase_agent(const std::vector<QagExample>& corpus_aug,
                                  const std::vector<QagExample>& corpus_gen,
                                  const StrategyOptions& strategy, const ModelConfig& cfg,
                                  TrainOptions opts, const Vocab& vocab,
                                  std::vector<EpochStats>* stats = nullptr);

// ---------------------------------------------------------------------------
// Pipeline inference
// ---------------------------------------------------------------------------

struct DecodeOptions {
  int beam = 1;  // 1 = greedy
  int max_new = 48;
  double length_penalty = 1.0;
};

TokenSeq decode_tokens(const EncOut& enc, const ModelParams& params, const DecodeOptions& opts);

// Splits a generated keyphrase sequence on the separator id, dropping empty
// segments.
std::vector<std::string> split_keyphrase_output(const TokenSeq& ids, const Vocab& vocab);

std::vector<std::string> generate_rough_keyphrases(const std::string& passage,
                                                   const ModelParams& kp_params, const Vocab& vocab,
                                                   const DecodeOptions& opts = {});

struct QgStep {
  std::string question;
  Tensor h_q;  // [question tokens x d_model], final-layer main-stream states
};

QgStep qg_step(const std::string& passage, const std::string& keyphrase, const ModelParams& qg_params,
               const Vocab& vocab, const DecodeOptions& opts = {});

std::string kg_refine_step(const std::string& passage, const Tensor& h_q_prev,
                           const ModelParams& kg_params, const Vocab& vocab,
                           const DecodeOptions& opts = {});

struct IterationRecord {
  std::string keyphrase;
  std::string question;
};

struct PipelineState {
  int iteration = 0;      // i, 1-based
  std::string keyphrase;  // k_i
  std::string question;   // q_i
  Tensor h_q;
  std::vector<IterationRecord> history;  // one record per completed iteration
};

// Runs the refinement loop independently for each initial phrase; this
// fan-out is how multiple Q-A pairs per passage arise.
std::vector<PipelineState> iterate(const std::string& passage, const std::vector<std::string>& k1,
                                   const ModelParams& qg_params, const ModelParams& kg_params, int m,
                                   const Vocab& vocab, const DecodeOptions& opts = {});

std::string answer_step(const std::string& passage, const std::string& keyphrase,
                        const std::string& question, const ModelParams& ans_params, const Vocab& vocab,
                        const DecodeOptions& opts = {});

struct Triplet {
  std::string keyphrase;
  std::string question;
  std::string answer;
};

struct PipelineResult {
  std::vector<Triplet> triplets;
  std::vector<std::string> warnings;
};

// Phrase fallback when rough generation yields nothing: guide with the
// passage's most similar sentence (the first sentence for empty phrases).
std::vector<std::string> phrases_or_fallback(const std::string& passage,
                                             std::vector<std::string> phrases,
                                             std::vector<std::string>* warnings);

PipelineResult run_pipeline(const std::string& passage, const ModelParams& kp_params,
                            const ModelParams& qg_params, const ModelParams& kg_params,
                            const ModelParams& ans_params, int m, const Vocab& vocab,
                            const DecodeOptions& opts = {}, PhraseMode mode = PhraseMode::fanout);

// ---------------------------------------------------------------------------
// Shared-encoder baseline: one passage encoder, two decoders trained on the
// summed loss.
// ---------------------------------------------------------------------------

struct SharedEncoderModel {
  ModelParams question_head;  // owns the shared encoder tensors
  ModelParams answer_head;    // encoder-side tensors alias question_head's

  static SharedEncoderModel init(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<Tensor*> params();  // each shared tensor listed once
  std::vector<std::pair<std::string, Tensor*>> named_params();
  void zero_grad();
  bool encoder_is_shared() const;
};

std::vector<EpochStats> train_shared_encoder(SharedEncoderModel& model,
                                             const std::vector<QagExample>& examples,
                                             const Vocab& vocab, const TrainOptions& opts);

// Generates (question, answer) from one encoding of the passage alone.
std::pair<std::string, std::string> shared_encoder_generate(const SharedEncoderModel& model,
                                                            const std::string& passage,
                                                            const Vocab& vocab,
                                                            const DecodeOptions& opts = {});

void save_shared_model(const std::string& base, SharedEncoderModel& model);
SharedEncoderModel load_shared_model(const std::string& base);

}  // namespace qag
