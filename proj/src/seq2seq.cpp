#include "negtrain/seq2seq.hpp"

#include <cmath>

#include "negtrain/language_model.hpp"
#include "negtrain/params.hpp"

namespace negtrain {

namespace {

struct DecoderStepCache {
  LstmStepCache lstm;
  TokenId previous = kBos;
  Vec state;  // decoder LSTM output s_t
  Vec query;  // W_att^T s_t
  Vec mask;
  Vec concat;    // [s_t; context]
  Vec combined;  // tanh(W_c concat + b_c)
  Vec dropout;   // inverted-dropout multipliers; empty when inactive
  Vec output_input;
  Vec log_probs;
};

struct Attention {
  Vec query;
  Vec mask;
  Vec context;
};

Attention attend(const Mat& attention_weights, const Vec& state, const Mat& encoder_states) {
  Attention a;
  a.query.noalias() = attention_weights.transpose() * state;
  const Vec scores = encoder_states.transpose() * a.query;
  a.mask = softmax(scores);
  a.context.noalias() = encoder_states * a.mask;
  return a;
}

// One decoder step. The same arithmetic is used by inference and training so
// teacher-forced scores match step-by-step decoding bit for bit.
Vec decoder_step(const Seq2SeqParams& p, const Mat& encoder_states, LstmState& lstm, TokenId previous,
                 DecoderStepCache* cache, Rng* dropout_rng, double dropout_rate) {
  const Eigen::Index H = p.decoder.hidden_dim();
  lstm = lstm_step(p.decoder, p.decoder_embedding.col(previous), lstm, cache ? &cache->lstm : nullptr);
  Attention att = attend(p.attention, lstm.h, encoder_states);

  Vec concat(2 * H);
  concat << lstm.h, att.context;
  Vec combined = p.combine_bias;
  combined.noalias() += p.combine_weights * concat;
  combined = combined.array().tanh();

  Vec dropout;
  Vec output_input = combined;
  if (dropout_rng && dropout_rate > 0.0) {
    dropout.resize(H);
    const double keep = 1.0 - dropout_rate;
    for (Eigen::Index k = 0; k < H; ++k) dropout[k] = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
    output_input = output_input.cwiseProduct(dropout);
  }

  Vec logits = p.output_bias;
  logits.noalias() += p.output_weights * output_input;
  Vec log_probs = log_softmax(logits);

  if (cache) {
    cache->previous = previous;
    cache->state = lstm.h;
    cache->query = std::move(att.query);
    cache->mask = std::move(att.mask);
    cache->concat = std::move(concat);
    cache->combined = std::move(combined);
    cache->dropout = std::move(dropout);
    cache->output_input = std::move(output_input);
    cache->log_probs = log_probs;
  }
  return log_probs;
}

Mat run_encoder(const LstmParams& p, const Mat& embeddings, LstmState& state, std::vector<LstmStepCache>* caches) {
  const Eigen::Index n = embeddings.cols();
  Mat states(p.hidden_dim(), n);
  if (caches) caches->resize(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    state = lstm_step(p, embeddings.col(t), state, caches ? &(*caches)[static_cast<std::size_t>(t)] : nullptr);
    states.col(t) = state.h;
  }
  return states;
}

void check_target(const TokenSeq& target_ids, std::size_t vocab_size) {
  if (target_ids.empty()) throw Error("target sequence is empty");
  check_token_range(target_ids, vocab_size);
}

TokenLogProbs forward_backward(const Seq2Seq& model, const Mat& input_embeddings, const TokenSeq* input_ids,
                               const TokenSeq& target_ids, Seq2SeqParams* grads, const GradientRequest& req) {
  const auto& p = model.params();
  const Eigen::Index H = static_cast<Eigen::Index>(model.config().hidden_dim);
  const Eigen::Index n = input_embeddings.cols();
  const std::size_t m = target_ids.size();
  if (!req.weights.empty() && req.weights.size() != m) throw Error("gradient weights do not match target length");

  // Forward.
  std::vector<LstmStepCache> enc_caches;
  LstmState state = LstmState::zeros(H);
  const Mat enc_states = run_encoder(p.encoder, input_embeddings, state, &enc_caches);

  std::vector<DecoderStepCache> dec(m);
  std::vector<double> logps(m);
  TokenId previous = kBos;
  for (std::size_t t = 0; t < m; ++t) {
    const Vec lp = decoder_step(p, enc_states, state, previous, &dec[t], req.dropout_rng, model.config().dropout_rate);
    logps[t] = lp[target_ids[t]];
    previous = target_ids[t];
  }

  // Backward.
  Mat d_enc_states = Mat::Zero(H, n);
  Vec dh_next = Vec::Zero(H);
  Vec dc_next = Vec::Zero(H);
  Vec d_input, dh_prev, dc_prev;
  if (req.trace) {
    req.trace->logit_grads.assign(m, Vec());
    req.trace->output_inputs.assign(m, Vec());
  }
  for (std::size_t t = m; t-- > 0;) {
    const auto& k = dec[t];
    const double w = (req.weights.empty() ? 1.0 : req.weights[t]) * req.scale;
    Vec d_logits;
    if (w == 0.0) {
      d_logits = Vec::Zero(k.log_probs.size());
    } else {
      d_logits = -w * k.log_probs.array().exp();
      d_logits[target_ids[t]] += w;
    }
    if (req.trace) {
      req.trace->logit_grads[t] = d_logits;
      req.trace->output_inputs[t] = k.output_input;
    }
    if (grads) {
      grads->output_weights.noalias() += d_logits * k.output_input.transpose();
      grads->output_bias += d_logits;
    }
    Vec d_combined = p.output_weights.transpose() * d_logits;
    if (k.dropout.size() > 0) d_combined = d_combined.cwiseProduct(k.dropout);
    const Vec d_pre = d_combined.cwiseProduct((1.0 - k.combined.array().square()).matrix());
    if (grads) {
      grads->combine_weights.noalias() += d_pre * k.concat.transpose();
      grads->combine_bias += d_pre;
    }
    const Vec d_concat = p.combine_weights.transpose() * d_pre;
    Vec d_state = d_concat.head(H);
    const Vec d_context = d_concat.tail(H);

    d_enc_states.noalias() += d_context * k.mask.transpose();
    const Vec d_mask = enc_states.transpose() * d_context;
    const Vec d_scores = k.mask.cwiseProduct((d_mask.array() - k.mask.dot(d_mask)).matrix());
    const Vec d_query = enc_states * d_scores;
    d_enc_states.noalias() += k.query * d_scores.transpose();
    if (grads) grads->attention.noalias() += k.state * d_query.transpose();
    d_state.noalias() += p.attention * d_query;

    d_state += dh_next;
    lstm_step_backward(p.decoder, k.lstm, d_state, dc_next, grads ? &grads->decoder : nullptr, d_input, dh_prev,
                       dc_prev);
    if (grads) grads->decoder_embedding.col(k.previous) += d_input;
    dh_next = dh_prev;
    dc_next = dc_prev;
  }

  if (req.input_embedding_grad) req.input_embedding_grad->resize(input_embeddings.rows(), n);
  for (Eigen::Index t = n; t-- > 0;) {
    const Vec dh = d_enc_states.col(t) + dh_next;
    lstm_step_backward(p.encoder, enc_caches[static_cast<std::size_t>(t)], dh, dc_next,
                       grads ? &grads->encoder : nullptr, d_input, dh_prev, dc_prev);
    if (req.input_embedding_grad) req.input_embedding_grad->col(t) = d_input;
    if (grads && input_ids) grads->encoder_embedding.col((*input_ids)[static_cast<std::size_t>(t)]) += d_input;
    dh_next = dh_prev;
    dc_next = dc_prev;
  }
  return TokenLogProbs::from(std::move(logps));
}

}  // namespace

void Seq2SeqConfig::validate() const {
  if (vocab_size < 1 || embedding_dim < 1 || hidden_dim < 1) throw Error("seq2seq dimensions must be >= 1");
  if (num_layers != 1) throw Error("only single-layer seq2seq models are supported");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("dropout rate must be in [0, 1)");
}

Seq2Seq::Seq2Seq(Seq2SeqConfig config) : config_(config) {
  config_.validate();
  const auto V = static_cast<Eigen::Index>(config_.vocab_size);
  const auto E = static_cast<Eigen::Index>(config_.embedding_dim);
  const auto H = static_cast<Eigen::Index>(config_.hidden_dim);
  params_.encoder_embedding = Mat::Zero(E, V);
  params_.decoder_embedding = Mat::Zero(E, V);
  params_.encoder = LstmParams::zeros(E, H);
  params_.decoder = LstmParams::zeros(E, H);
  params_.attention = Mat::Zero(H, H);
  params_.combine_weights = Mat::Zero(H, 2 * H);
  params_.combine_bias = Vec::Zero(H);
  params_.output_weights = Mat::Zero(V, H);
  params_.output_bias = Vec::Zero(V);
}

Seq2Seq Seq2Seq::initialized(const Seq2SeqConfig& config, std::uint64_t seed, double radius) {
  Seq2Seq model(config);
  Rng rng(seed);
  init_uniform(model.params_, rng, radius);
  return model;
}

Mat Seq2Seq::embed_input(const TokenSeq& input_ids) const {
  check_token_range(input_ids, config_.vocab_size);
  Mat emb(params_.encoder_embedding.rows(), static_cast<Eigen::Index>(input_ids.size()));
  for (std::size_t t = 0; t < input_ids.size(); ++t) {
    emb.col(static_cast<Eigen::Index>(t)) = params_.encoder_embedding.col(input_ids[t]);
  }
  return emb;
}

Mat Seq2Seq::encode(const TokenSeq& input_ids) const { return start(input_ids).encoder_states; }

Vec Seq2Seq::attention_mask(const Vec& decoder_state, const Mat& encoder_states) const {
  return attend(params_.attention, decoder_state, encoder_states).mask;
}

Seq2Seq::DecoderState Seq2Seq::start(const TokenSeq& input_ids) const {
  if (input_ids.empty()) throw Error("input sequence is empty");
  return start_from_embeddings(embed_input(input_ids));
}

Seq2Seq::DecoderState Seq2Seq::start_from_embeddings(const Mat& input_embeddings) const {
  DecoderState s;
  s.lstm = LstmState::zeros(static_cast<Eigen::Index>(config_.hidden_dim));
  s.encoder_states = run_encoder(params_.encoder, input_embeddings, s.lstm, nullptr);
  return s;
}

Vec Seq2Seq::step(DecoderState& state, TokenId previous) const {
  return decoder_step(params_, state.encoder_states, state.lstm, previous, nullptr, nullptr, 0.0);
}

Vec Seq2Seq::step_distribution(const TokenSeq& prefix_ids, const TokenSeq& input_ids) const {
  if (prefix_ids.empty() || prefix_ids.front() != kBos) throw Error("decoder prefix must begin with <bos>");
  check_token_range(prefix_ids, config_.vocab_size);
  DecoderState state = start(input_ids);
  Vec lp;
  for (TokenId tok : prefix_ids) lp = step(state, tok);
  return lp;
}

TokenLogProbs Seq2Seq::sequence_logprobs(const TokenSeq& input_ids, const TokenSeq& target_ids) const {
  if (input_ids.empty()) throw Error("input sequence is empty");
  return sequence_logprobs_from_embeddings(embed_input(input_ids), target_ids);
}

TokenLogProbs Seq2Seq::sequence_logprobs_from_embeddings(const Mat& input_embeddings,
                                                         const TokenSeq& target_ids) const {
  check_target(target_ids, config_.vocab_size);
  DecoderState state = start_from_embeddings(input_embeddings);
  std::vector<double> values;
  values.reserve(target_ids.size());
  TokenId previous = kBos;
  for (TokenId tok : target_ids) {
    values.push_back(step(state, previous)[tok]);
    previous = tok;
  }
  return TokenLogProbs::from(std::move(values));
}

TokenSeq Seq2Seq::greedy_decode(const TokenSeq& input_ids, std::size_t max_len) const {
  if (max_len < 1) throw Error("max_len must be >= 1");
  DecoderState state = start(input_ids);
  TokenSeq out;
  TokenId previous = kBos;
  while (out.size() < max_len) {
    Eigen::Index best;
    step(state, previous).maxCoeff(&best);
    previous = static_cast<TokenId>(best);
    out.push_back(previous);
    if (previous == kEos) break;
  }
  return out;
}

TokenSeq Seq2Seq::sample_decode(const TokenSeq& input_ids, std::size_t max_len, std::uint64_t seed) const {
  if (max_len < 1) throw Error("max_len must be >= 1");
  Rng rng(seed);
  DecoderState state = start(input_ids);
  TokenSeq out;
  TokenId previous = kBos;
  while (out.size() < max_len) {
    const Vec probs = step(state, previous).array().exp();
    previous = static_cast<TokenId>(rng.categorical(std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size()))));
    out.push_back(previous);
    if (previous == kEos) break;
  }
  return out;
}

TokenSeq Seq2Seq::mmi_antilm_decode(const TokenSeq& input_ids, const LanguageModel& lm, double lambda_mmi,
                                    std::size_t gamma, std::size_t max_len) const {
  if (max_len < 1) throw Error("max_len must be >= 1");
  if (!(lambda_mmi >= 0.0 && lambda_mmi < 1.0)) throw Error("lambda_mmi must be in [0, 1)");
  if (lm.vocab_size() != config_.vocab_size) throw Error("language model vocabulary does not match");
  DecoderState state = start(input_ids);
  auto lm_state = lm.start();
  TokenSeq out;
  TokenId previous = kBos;
  while (out.size() < max_len) {
    Vec score = step(state, previous);
    if (out.size() < gamma && lambda_mmi > 0.0) {
      score -= lambda_mmi * lm.step(lm_state, previous);
    }
    Eigen::Index best;
    score.maxCoeff(&best);
    previous = static_cast<TokenId>(best);
    out.push_back(previous);
    if (previous == kEos) break;
  }
  return out;
}

Mat Seq2Seq::input_onehot_gradient(const TokenSeq& input_ids, const TokenSeq& target_ids) const {
  const std::vector<double> weights(target_ids.size(), 1.0 / static_cast<double>(target_ids.size()));
  Mat d_emb;
  GradientRequest req;
  req.weights = weights;
  req.input_embedding_grad = &d_emb;
  accumulate_gradient(*this, input_ids, target_ids, nullptr, req);
  return d_emb.transpose() * params_.encoder_embedding;
}

TokenLogProbs accumulate_gradient(const Seq2Seq& model, const TokenSeq& input_ids, const TokenSeq& target_ids,
                                  Seq2SeqParams* grads, const GradientRequest& request) {
  if (input_ids.empty()) throw Error("input sequence is empty");
  check_target(target_ids, model.vocab_size());
  return forward_backward(model, model.embed_input(input_ids), &input_ids, target_ids, grads, request);
}

}  // namespace negtrain
