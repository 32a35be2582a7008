#pragma once

#include <cstdint>
#include <string>

#include "negtrain/common.hpp"
#include "negtrain/nn.hpp"

namespace negtrain {

class LanguageModel;

struct Seq2SeqConfig {
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 300;
  std::size_t hidden_dim = 600;
  std::size_t num_layers = 1;  // only single-layer models are supported
  double dropout_rate = 0.0;   // applied to the attentional output layer while training

  void validate() const;
  friend bool operator==(const Seq2SeqConfig&, const Seq2SeqConfig&) = default;
};

// Embedding matrices store one column per vocabulary entry, so embedding a
// one-hot vector x is the product E * x.
struct Seq2SeqParams {
  Mat encoder_embedding;  // E x V
  Mat decoder_embedding;  // E x V
  LstmParams encoder;
  LstmParams decoder;
  Mat attention;        // H x H, score_i = s^T W h_i
  Mat combine_weights;  // H x 2H, over [decoder state; context]
  Vec combine_bias;     // H
  Mat output_weights;   // V x H
  Vec output_bias;      // V

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("encoder.embedding"), self.encoder_embedding);
    f(std::string("decoder.embedding"), self.decoder_embedding);
    LstmParams::visit(self.encoder, "encoder.lstm", f);
    LstmParams::visit(self.decoder, "decoder.lstm", f);
    f(std::string("attention.weights"), self.attention);
    f(std::string("combine.weights"), self.combine_weights);
    f(std::string("combine.bias"), self.combine_bias);
    f(std::string("output.weights"), self.output_weights);
    f(std::string("output.bias"), self.output_bias);
  }
  template <class F> void for_each(F&& f) { visit(*this, f); }
  template <class F> void for_each(F&& f) const { visit(*this, f); }
};

// LSTM encoder-decoder with Luong "general" global attention.
class Seq2Seq {
 public:
  // Incremental decoding state for one input sequence.
  struct DecoderState {
    Mat encoder_states;  // H x n
    LstmState lstm;
  };

  explicit Seq2Seq(Seq2SeqConfig config);  // all parameters zero
  static Seq2Seq initialized(const Seq2SeqConfig& config, std::uint64_t seed, double radius = 0.1);

  const Seq2SeqConfig& config() const { return config_; }
  Seq2SeqParams& params() { return params_; }
  const Seq2SeqParams& params() const { return params_; }
  std::size_t vocab_size() const { return config_.vocab_size; }

  // Encoder output vectors, one column per input position.
  Mat encode(const TokenSeq& input_ids) const;
  Mat embed_input(const TokenSeq& input_ids) const;  // E x n

  // Attention distribution over encoder positions for one decoder state.
  Vec attention_mask(const Vec& decoder_state, const Mat& encoder_states) const;

  DecoderState start(const TokenSeq& input_ids) const;
  DecoderState start_from_embeddings(const Mat& input_embeddings) const;
  Vec step(DecoderState& state, TokenId previous) const;  // log-distribution over V

  // log P(. | prefix, x); prefix[0] must be <bos>.
  Vec step_distribution(const TokenSeq& prefix_ids, const TokenSeq& input_ids) const;

  // Teacher-forced per-token log-probabilities of target given input.
  TokenLogProbs sequence_logprobs(const TokenSeq& input_ids, const TokenSeq& target_ids) const;
  TokenLogProbs sequence_logprobs_from_embeddings(const Mat& input_embeddings, const TokenSeq& target_ids) const;

  TokenSeq greedy_decode(const TokenSeq& input_ids, std::size_t max_len) const;
  TokenSeq sample_decode(const TokenSeq& input_ids, std::size_t max_len, std::uint64_t seed) const;
  // Greedy decoding under log P(y_t|.) - lambda * log P_LM(y_t|.) for the
  // first gamma steps and plain log P(y_t|.) afterwards.
  TokenSeq mmi_antilm_decode(const TokenSeq& input_ids, const LanguageModel& lm, double lambda_mmi,
                             std::size_t gamma, std::size_t max_len) const;

  // d(mean_t log P(y_t|y_<t, x)) / d x_t[j] for the one-hot input vectors,
  // i.e. the gradient of the negated target NLL. Shape n x V.
  Mat input_onehot_gradient(const TokenSeq& input_ids, const TokenSeq& target_ids) const;

 private:
  Seq2SeqConfig config_;
  Seq2SeqParams params_;
};

// Runs forward and backward for J = sum_t w_t log P(y_t|y_<t, x) and adds
// request.scale * dJ/dtheta into *grads (skipped when grads is null).
// Returns the forward log-probabilities.
TokenLogProbs accumulate_gradient(const Seq2Seq& model, const TokenSeq& input_ids, const TokenSeq& target_ids,
                                  Seq2SeqParams* grads, const GradientRequest& request = {});

}  // namespace negtrain
