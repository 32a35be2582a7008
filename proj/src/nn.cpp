#include "negtrain/nn.hpp"

#include <algorithm>
#include <cmath>

namespace negtrain {

LstmParams LstmParams::zeros(Eigen::Index input_dim, Eigen::Index hidden_dim) {
  return {Mat::Zero(4 * hidden_dim, input_dim), Mat::Zero(4 * hidden_dim, hidden_dim), Vec::Zero(4 * hidden_dim)};
}

LstmState lstm_step(const LstmParams& p, const Eigen::Ref<const Vec>& input, const LstmState& prev,
                    LstmStepCache* cache) {
  const Eigen::Index H = p.hidden_dim();
  Vec z = p.bias;
  z.noalias() += p.input_weights * input;
  z.noalias() += p.recurrent_weights * prev.h;

  Vec i = z.segment(0, H).unaryExpr([](double v) { return sigmoid(v); });
  Vec f = z.segment(H, H).unaryExpr([](double v) { return sigmoid(v); });
  Vec g = z.segment(2 * H, H).array().tanh();
  Vec o = z.segment(3 * H, H).unaryExpr([](double v) { return sigmoid(v); });

  LstmState next;
  next.c = f.cwiseProduct(prev.c) + i.cwiseProduct(g);
  Vec tanh_c = next.c.array().tanh();
  next.h = o.cwiseProduct(tanh_c);

  if (cache) {
    cache->input = input;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->i = std::move(i);
    cache->f = std::move(f);
    cache->g = std::move(g);
    cache->o = std::move(o);
    cache->c = next.c;
    cache->tanh_c = std::move(tanh_c);
  }
  return next;
}

void lstm_step_backward(const LstmParams& p, const LstmStepCache& k, const Vec& dh, const Vec& dc,
                        LstmParams* grads, Vec& d_input, Vec& dh_prev, Vec& dc_prev) {
  const Eigen::Index H = p.hidden_dim();
  const Vec d_o = dh.cwiseProduct(k.tanh_c);
  const Vec dc_total = dc + dh.cwiseProduct(k.o).cwiseProduct((1.0 - k.tanh_c.array().square()).matrix());

  Vec dz(4 * H);
  dz.segment(0, H) = dc_total.cwiseProduct(k.g).cwiseProduct(k.i.cwiseProduct((1.0 - k.i.array()).matrix()));
  dz.segment(H, H) = dc_total.cwiseProduct(k.c_prev).cwiseProduct(k.f.cwiseProduct((1.0 - k.f.array()).matrix()));
  dz.segment(2 * H, H) = dc_total.cwiseProduct(k.i).cwiseProduct((1.0 - k.g.array().square()).matrix());
  dz.segment(3 * H, H) = d_o.cwiseProduct(k.o.cwiseProduct((1.0 - k.o.array()).matrix()));

  if (grads) {
    grads->input_weights.noalias() += dz * k.input.transpose();
    grads->recurrent_weights.noalias() += dz * k.h_prev.transpose();
    grads->bias += dz;
  }

  d_input.noalias() = p.input_weights.transpose() * dz;
  dh_prev.noalias() = p.recurrent_weights.transpose() * dz;
  dc_prev = dc_total.cwiseProduct(k.f);
}

Vec log_softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

Vec softmax(const Vec& logits) {
  Vec e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

TokenLogProbs TokenLogProbs::from(std::vector<double> values) {
  TokenLogProbs out;
  out.per_token = std::move(values);
  if (out.per_token.empty()) return out;
  for (double v : out.per_token) out.total += v;
  out.mean = out.total / static_cast<double>(out.per_token.size());
  out.min = *std::min_element(out.per_token.begin(), out.per_token.end());
  return out;
}

void check_token_range(const TokenSeq& ids, std::size_t vocab_size) {
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw Error("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(vocab_size));
    }
  }
}

}  // namespace negtrain
