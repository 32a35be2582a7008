#pragma once

#include <cstdint>
#include <string>

#include "negtrain/common.hpp"
#include "negtrain/nn.hpp"

namespace negtrain {

struct LanguageModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 300;
  std::size_t hidden_dim = 600;
  double dropout_rate = 0.0;

  void validate() const;
  friend bool operator==(const LanguageModelConfig&, const LanguageModelConfig&) = default;
};

struct LanguageModelParams {
  Mat embedding;  // E x V
  LstmParams lstm;
  Mat output_weights;  // V x H
  Vec output_bias;     // V

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("lm.embedding"), self.embedding);
    LstmParams::visit(self.lstm, "lm.lstm", f);
    f(std::string("lm.output.weights"), self.output_weights);
    f(std::string("lm.output.bias"), self.output_bias);
  }
  template <class F> void for_each(F&& f) { visit(*this, f); }
  template <class F> void for_each(F&& f) const { visit(*this, f); }
};

// Unconditional LSTM language model. Sequences are scored from a <bos>
// start state: P(w_1..w_k) = prod_t P(w_t | <bos>, w_<t).
class LanguageModel {
 public:
  struct State {
    LstmState lstm;
  };

  explicit LanguageModel(LanguageModelConfig config);
  static LanguageModel initialized(const LanguageModelConfig& config, std::uint64_t seed, double radius = 0.1);

  const LanguageModelConfig& config() const { return config_; }
  LanguageModelParams& params() { return params_; }
  const LanguageModelParams& params() const { return params_; }
  std::size_t vocab_size() const { return config_.vocab_size; }

  State start() const;
  Vec step(State& state, TokenId previous) const;  // log-distribution over V

  // log P(. | <bos>, prefix_ids)
  Vec step_distribution(const TokenSeq& prefix_ids) const;
  TokenLogProbs lm_logprobs(const TokenSeq& token_ids) const;

  // Log-distributions (V x k) for a sequence of raw input embeddings, the
  // first of which is normally the <bos> embedding.
  Mat step_logprobs_from_embeddings(const Mat& input_embeddings) const;

  // Gradient of mean_t log P(x_t | x_<t) with respect to the one-hot vectors
  // x_t, counting both the input route and the predicted-token route. n x V.
  Mat input_onehot_gradient(const TokenSeq& token_ids) const;

 private:
  LanguageModelConfig config_;
  LanguageModelParams params_;
};

// Forward/backward for J = sum_t w_t log P(w_t | w_<t); adds scale * dJ/dtheta
// into *grads. input_embedding_grad, if requested, has one column per
// consumed input (<bos>, w_1, ..., w_{k-1}).
TokenLogProbs accumulate_gradient(const LanguageModel& model, const TokenSeq& token_ids,
                                  LanguageModelParams* grads, const GradientRequest& request = {});

}  // namespace negtrain
