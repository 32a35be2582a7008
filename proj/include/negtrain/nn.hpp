#pragma once

// Shared neural building blocks: LSTM cell with explicit backward pass,
// softmax helpers and the per-token log-probability summary.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "negtrain/common.hpp"
#include "negtrain/rng.hpp"

namespace negtrain {

// Gate rows are stacked as [input; forget; cell; output].
struct LstmParams {
  Mat input_weights;      // 4H x E
  Mat recurrent_weights;  // 4H x H
  Vec bias;               // 4H

  static LstmParams zeros(Eigen::Index input_dim, Eigen::Index hidden_dim);
  Eigen::Index hidden_dim() const { return recurrent_weights.cols(); }

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + ".input_weights", self.input_weights);
    f(prefix + ".recurrent_weights", self.recurrent_weights);
    f(prefix + ".bias", self.bias);
  }
};

struct LstmState {
  Vec h;
  Vec c;

  static LstmState zeros(Eigen::Index hidden_dim) { return {Vec::Zero(hidden_dim), Vec::Zero(hidden_dim)}; }
};

struct LstmStepCache {
  Vec input;
  Vec h_prev;
  Vec c_prev;
  Vec i, f, g, o;
  Vec c;
  Vec tanh_c;
};

LstmState lstm_step(const LstmParams& p, const Eigen::Ref<const Vec>& input, const LstmState& prev,
                    LstmStepCache* cache = nullptr);

// Backpropagates (dh, dc) at the step output. Parameter gradients are added
// into *grads when non-null; d_input, dh_prev and dc_prev are overwritten.
void lstm_step_backward(const LstmParams& p, const LstmStepCache& cache, const Vec& dh, const Vec& dc,
                        LstmParams* grads, Vec& d_input, Vec& dh_prev, Vec& dc_prev);

Vec log_softmax(const Vec& logits);
Vec softmax(const Vec& logits);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Log-probabilities a model assigns to each token of a sequence.
struct TokenLogProbs {
  std::vector<double> per_token;
  double total = 0.0;
  double mean = 0.0;
  double min = 0.0;

  static TokenLogProbs from(std::vector<double> values);
};

// Observes output-layer gradients of one backward pass, one entry per
// target position: d(objective)/d(logits) and the hidden vector fed to the
// output projection.
struct GradientTrace {
  std::vector<Vec> logit_grads;
  std::vector<Vec> output_inputs;
};

// Options for accumulate_gradient(). The objective is
//   J = sum_t weights[t] * log P(y_t | ...)
// and scale * dJ/dtheta is added into the gradient struct.
struct GradientRequest {
  std::span<const double> weights;  // empty means all ones
  double scale = 1.0;
  Rng* dropout_rng = nullptr;           // dropout is active only when set
  Mat* input_embedding_grad = nullptr;  // receives scale * dJ/d(input embeddings), E x n
  GradientTrace* trace = nullptr;       // logit grads include the scale
};

void check_token_range(const TokenSeq& ids, std::size_t vocab_size);

}  // namespace negtrain
