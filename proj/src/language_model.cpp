#include "negtrain/language_model.hpp"

#include "negtrain/params.hpp"

namespace negtrain {

namespace {

struct LmStepCache {
  LstmStepCache lstm;
  TokenId previous = kBos;
  Vec dropout;
  Vec output_input;
  Vec log_probs;
};

Vec lm_step(const LanguageModelParams& p, const Eigen::Ref<const Vec>& input, LstmState& lstm, LmStepCache* cache,
            Rng* dropout_rng, double dropout_rate) {
  lstm = lstm_step(p.lstm, input, lstm, cache ? &cache->lstm : nullptr);
  Vec output_input = lstm.h;
  Vec dropout;
  if (dropout_rng && dropout_rate > 0.0) {
    const double keep = 1.0 - dropout_rate;
    dropout.resize(output_input.size());
    for (Eigen::Index k = 0; k < dropout.size(); ++k) dropout[k] = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
    output_input = output_input.cwiseProduct(dropout);
  }
  Vec logits = p.output_bias;
  logits.noalias() += p.output_weights * output_input;
  Vec log_probs = log_softmax(logits);
  if (cache) {
    cache->dropout = std::move(dropout);
    cache->output_input = std::move(output_input);
    cache->log_probs = log_probs;
  }
  return log_probs;
}

}  // namespace

void LanguageModelConfig::validate() const {
  if (vocab_size < 1 || embedding_dim < 1 || hidden_dim < 1) throw Error("language model dimensions must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("dropout rate must be in [0, 1)");
}

LanguageModel::LanguageModel(LanguageModelConfig config) : config_(config) {
  config_.validate();
  const auto V = static_cast<Eigen::Index>(config_.vocab_size);
  const auto E = static_cast<Eigen::Index>(config_.embedding_dim);
  const auto H = static_cast<Eigen::Index>(config_.hidden_dim);
  params_.embedding = Mat::Zero(E, V);
  params_.lstm = LstmParams::zeros(E, H);
  params_.output_weights = Mat::Zero(V, H);
  params_.output_bias = Vec::Zero(V);
}

LanguageModel LanguageModel::initialized(const LanguageModelConfig& config, std::uint64_t seed, double radius) {
  LanguageModel lm(config);
  Rng rng(seed);
  init_uniform(lm.params_, rng, radius);
  return lm;
}

LanguageModel::State LanguageModel::start() const {
  return {LstmState::zeros(static_cast<Eigen::Index>(config_.hidden_dim))};
}

Vec LanguageModel::step(State& state, TokenId previous) const {
  return lm_step(params_, params_.embedding.col(previous), state.lstm, nullptr, nullptr, 0.0);
}

Vec LanguageModel::step_distribution(const TokenSeq& prefix_ids) const {
  check_token_range(prefix_ids, config_.vocab_size);
  State state = start();
  Vec lp = step(state, kBos);
  for (TokenId tok : prefix_ids) lp = step(state, tok);
  return lp;
}

TokenLogProbs LanguageModel::lm_logprobs(const TokenSeq& token_ids) const {
  if (token_ids.empty()) throw Error("language model input is empty");
  check_token_range(token_ids, config_.vocab_size);
  State state = start();
  std::vector<double> values;
  values.reserve(token_ids.size());
  TokenId previous = kBos;
  for (TokenId tok : token_ids) {
    values.push_back(step(state, previous)[tok]);
    previous = tok;
  }
  return TokenLogProbs::from(std::move(values));
}

Mat LanguageModel::step_logprobs_from_embeddings(const Mat& input_embeddings) const {
  LstmState lstm = LstmState::zeros(static_cast<Eigen::Index>(config_.hidden_dim));
  Mat out(static_cast<Eigen::Index>(config_.vocab_size), input_embeddings.cols());
  for (Eigen::Index t = 0; t < input_embeddings.cols(); ++t) {
    out.col(t) = lm_step(params_, input_embeddings.col(t), lstm, nullptr, nullptr, 0.0);
  }
  return out;
}

Mat LanguageModel::input_onehot_gradient(const TokenSeq& token_ids) const {
  const std::size_t n = token_ids.size();
  const std::vector<double> weights(n, 1.0 / static_cast<double>(n));
  Mat d_emb;
  GradientRequest req;
  req.weights = weights;
  req.input_embedding_grad = &d_emb;
  accumulate_gradient(*this, token_ids, nullptr, req);

  // Input route: x_t is consumed as the input of step t + 1.
  Mat grad = Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(config_.vocab_size));
  if (n > 1) {
    grad.topRows(static_cast<Eigen::Index>(n - 1)) =
        d_emb.rightCols(static_cast<Eigen::Index>(n - 1)).transpose() * params_.embedding;
  }
  // Predicted-token route: log P(x_t) = sum_j x_t[j] * log p_t[j].
  const Mat step_lp = [&] {
    Mat inputs(params_.embedding.rows(), static_cast<Eigen::Index>(n));
    inputs.col(0) = params_.embedding.col(kBos);
    for (std::size_t t = 1; t < n; ++t) inputs.col(static_cast<Eigen::Index>(t)) = params_.embedding.col(token_ids[t - 1]);
    return step_logprobs_from_embeddings(inputs);
  }();
  grad += step_lp.transpose() / static_cast<double>(n);
  return grad;
}

TokenLogProbs accumulate_gradient(const LanguageModel& model, const TokenSeq& token_ids, LanguageModelParams* grads,
                                  const GradientRequest& req) {
  if (token_ids.empty()) throw Error("language model input is empty");
  check_token_range(token_ids, model.vocab_size());
  const std::size_t m = token_ids.size();
  if (!req.weights.empty() && req.weights.size() != m) throw Error("gradient weights do not match sequence length");
  const auto& p = model.params();
  const auto H = static_cast<Eigen::Index>(model.config().hidden_dim);

  std::vector<LmStepCache> caches(m);
  std::vector<double> logps(m);
  LstmState lstm = LstmState::zeros(H);
  TokenId previous = kBos;
  for (std::size_t t = 0; t < m; ++t) {
    caches[t].previous = previous;
    const Vec lp = lm_step(p, p.embedding.col(previous), lstm, &caches[t], req.dropout_rng, model.config().dropout_rate);
    logps[t] = lp[token_ids[t]];
    previous = token_ids[t];
  }

  if (req.input_embedding_grad) req.input_embedding_grad->resize(p.embedding.rows(), static_cast<Eigen::Index>(m));
  if (req.trace) {
    req.trace->logit_grads.assign(m, Vec());
    req.trace->output_inputs.assign(m, Vec());
  }
  Vec dh_next = Vec::Zero(H);
  Vec dc_next = Vec::Zero(H);
  Vec d_input, dh_prev, dc_prev;
  for (std::size_t t = m; t-- > 0;) {
    const auto& k = caches[t];
    const double w = (req.weights.empty() ? 1.0 : req.weights[t]) * req.scale;
    Vec d_logits;
    if (w == 0.0) {
      d_logits = Vec::Zero(k.log_probs.size());
    } else {
      d_logits = -w * k.log_probs.array().exp();
      d_logits[token_ids[t]] += w;
    }
    if (req.trace) {
      req.trace->logit_grads[t] = d_logits;
      req.trace->output_inputs[t] = k.output_input;
    }
    if (grads) {
      grads->output_weights.noalias() += d_logits * k.output_input.transpose();
      grads->output_bias += d_logits;
    }
    Vec dh = p.output_weights.transpose() * d_logits;
    if (k.dropout.size() > 0) dh = dh.cwiseProduct(k.dropout);
    dh += dh_next;
    lstm_step_backward(p.lstm, k.lstm, dh, dc_next, grads ? &grads->lstm : nullptr, d_input, dh_prev, dc_prev);
    if (grads) grads->embedding.col(k.previous) += d_input;
    if (req.input_embedding_grad) req.input_embedding_grad->col(static_cast<Eigen::Index>(t)) = d_input;
    dh_next = dh_prev;
    dc_next = dc_prev;
  }
  return TokenLogProbs::from(std::move(logps));
}

}  // namespace negtrain
