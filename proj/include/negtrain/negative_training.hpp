#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "negtrain/corpus.hpp"
#include "negtrain/hit_eval.hpp"
#include "negtrain/language_model.hpp"
#include "negtrain/seq2seq.hpp"
#include "negtrain/trigger_search.hpp"

namespace negtrain {

enum class NegTrainMode { Malicious, Frequent };

struct NegTrainConfig {
  double lambda_pos = 0.1;
  double lr = 0.01;
  std::size_t batch_size = 100;
  std::size_t iterations = 20;
  double r_thres = 0.01;  // frequent mode only
  std::vector<std::string> fwa_words = {"<eos>", "you", "i", "me", "are", "to", "do"};
  double eos_scale = 0.1;               // frequent mode only
  double clip_norm = 5.0;               // <= 0 disables clipping
  std::size_t window_batches = 201;     // current + last 200 mini-batches
  std::size_t max_decode_len = 20;      // frequent mode response length
  bool sample_responses = false;        // frequent mode: sample instead of greedy
  std::uint64_t seed = 0;

  void validate(NegTrainMode mode) const;

  static NegTrainConfig malicious_defaults();
  static NegTrainConfig frequent_defaults();
};

// Token ids of the FWA words present in the vocabulary.
std::set<TokenId> resolve_fwa_set(const Vocabulary& vocab, const std::vector<std::string>& words);

// Per-token weights of the negative term. Malicious mode zeroes every avoided
// token; frequent mode scales <eos> by eos_scale.
std::vector<double> fwa_mask(const TokenSeq& target_ids, NegTrainMode mode, const std::set<TokenId>& avoid,
                             double eos_scale = 0.1);

struct WeightedExample {
  TokenSeq input_ids;
  TokenSeq target_ids;
  std::vector<double> weights;  // empty means all ones
};

// theta <- theta + step * (1/B) sum_b grad sum_t w_bt log P(y_bt | .),
// with the averaged gradient clipped to clip_norm when clip_norm > 0.
// Returns the pre-clip gradient norm. Throws NumericError on NaN.
double apply_logprob_update(Seq2Seq& model, std::span<const WeightedExample> batch, double step, double clip_norm,
                            std::vector<GradientTrace>* traces = nullptr);

// Descends the masked log-likelihood of (x, y).
void negative_step(Seq2Seq& model, const TokenSeq& input_ids, const TokenSeq& target_ids,
                   const std::vector<double>& mask, double lr, double clip_norm = 0.0);
// Ascends lambda_pos * log P(y | x).
void positive_step(Seq2Seq& model, const TokenSeq& input_ids, const TokenSeq& target_ids, double lambda_pos,
                   double lr, double clip_norm = 0.0);

struct MaliciousIteration {
  std::size_t iteration = 0;  // 1-based
  std::size_t hits = 0;
  double hit_rate = 0.0;  // measured by the searches of this iteration, before its updates
  std::size_t negative_examples = 0;
  std::optional<double> valid_ppl;  // after the iteration
  double seconds = 0.0;
};

// Algorithm 1, mini-batched: each batch of targets is searched against the
// current model, then one negative update over the hits and one positive
// update over as many training pairs (taken in order, cycling).
std::vector<MaliciousIteration> neg_train_malicious(Seq2Seq& model, const LanguageModel* lm,
                                                    const std::vector<TokenSeq>& targets,
                                                    const std::vector<DialoguePair>& train_pairs,
                                                    const HitThresholds& thresholds, HitCriterion criterion,
                                                    const TriggerSearchConfig& search, const NegTrainConfig& config,
                                                    const std::set<TokenId>& fwa_set,
                                                    const std::vector<DialoguePair>* validation = nullptr,
                                                    std::size_t max_out = 20);

struct FrequentEpoch {
  std::size_t epoch = 0;  // 1-based
  std::size_t negative_examples = 0;
  std::optional<double> max_ratio;  // greedy responses on the validation inputs
  std::optional<double> ent2;
  std::optional<double> ent3;
  std::optional<double> valid_ppl;
  double seconds = 0.0;
};

// Algorithm 2. Responses generated for each training mini-batch enter a
// window of the last window_batches batches; a response whose ratio in that
// window exceeds r_thres is pushed down while the reference is pulled up.
// The window is carried across epochs.
std::vector<FrequentEpoch> neg_train_frequent(Seq2Seq& model, const std::vector<DialoguePair>& train_pairs,
                                              const NegTrainConfig& config,
                                              const std::vector<DialoguePair>* validation = nullptr);

std::vector<TokenSeq> greedy_responses(const Seq2Seq& model, const std::vector<DialoguePair>& pairs,
                                       std::size_t max_len);

void write_malicious_log(const std::filesystem::path& path, const std::vector<MaliciousIteration>& log);
void write_frequent_log(const std::filesystem::path& path, const std::vector<FrequentEpoch>& log);

}  // namespace negtrain
