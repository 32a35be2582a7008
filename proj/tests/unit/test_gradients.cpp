#include <doctest.h>

#include "fd.hpp"
#include "negtrain/language_model.hpp"
#include "negtrain/seq2seq.hpp"
#include "toy.hpp"

using namespace negtrain;
using negtrain::testing::fd_check;
using negtrain::testing::rel_error;

namespace {

double weighted_logp(const Seq2Seq& m, const TokenSeq& x, const TokenSeq& y, const std::vector<double>& w,
                     std::uint64_t dropout_seed = 0) {
  GradientRequest req;
  req.weights = w;
  Rng rng(dropout_seed);
  if (m.config().dropout_rate > 0.0) req.dropout_rng = &rng;
  const auto lp = accumulate_gradient(m, x, y, nullptr, req);
  double j = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) j += w[t] * lp.per_token[t];
  return j;
}

}  // namespace

TEST_SUITE("gradients") {
  TEST_CASE("seq2seq parameter gradients match finite differences") {
    for (double dropout : {0.0, 0.3}) {
      Seq2Seq m = negtrain::testing::tiny_seq2seq(20, 8, 12, 7, dropout);
      Rng rng(11);
      const TokenSeq x = negtrain::testing::random_tokens(20, 4, rng);
      const TokenSeq y = negtrain::testing::random_tokens(20, 3, rng, true);
      const std::vector<double> w = {0.5, -1.0, 2.0, 1.0};
      auto grads = zeros_like(m.params());
      GradientRequest req;
      req.weights = w;
      req.scale = 0.7;
      Rng drop(99);
      if (dropout > 0.0) req.dropout_rng = &drop;
      accumulate_gradient(m, x, y, &grads, req);
      scale_all(grads, 1.0 / 0.7);
      const auto res = fd_check(m.params(), grads, [&] { return weighted_logp(m, x, y, w, 99); });
      INFO(res.worst);
      CHECK(res.max_rel_error < 1e-3);
      CHECK(res.checked == parameter_count(m.params()));
    }
  }

  TEST_CASE("language model parameter gradients match finite differences") {
    LanguageModel lm = negtrain::testing::tiny_lm();
    Rng rng(5);
    const TokenSeq s = negtrain::testing::random_tokens(20, 5, rng, true);
    const std::vector<double> w = {1.0, 0.3, -0.5, 1.0, 2.0, 1.0};
    auto grads = zeros_like(lm.params());
    GradientRequest req;
    req.weights = w;
    accumulate_gradient(lm, s, &grads, req);
    const auto res = fd_check(lm.params(), grads, [&] {
      const auto lp = lm.lm_logprobs(s);
      double j = 0.0;
      for (std::size_t t = 0; t < s.size(); ++t) j += w[t] * lp.per_token[t];
      return j;
    });
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-3);
  }

  TEST_CASE("seq2seq input one-hot gradient matches finite differences") {
    Seq2Seq m = negtrain::testing::tiny_seq2seq();
    Rng rng(3);
    const TokenSeq x = negtrain::testing::random_tokens(20, 4, rng);
    const TokenSeq y = negtrain::testing::random_tokens(20, 4, rng, true);
    const Mat g = m.input_onehot_gradient(x, y);
    REQUIRE(g.rows() == 4);
    REQUIRE(g.cols() == 20);
    const Mat& E = m.params().encoder_embedding;
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index t = 0; t < 4; ++t) {
      for (Eigen::Index j = 0; j < 20; ++j) {
        Mat emb = m.embed_input(x);
        emb.col(t) += h * E.col(j);
        const double up = m.sequence_logprobs_from_embeddings(emb, y).mean;
        emb.col(t) -= 2.0 * h * E.col(j);
        const double down = m.sequence_logprobs_from_embeddings(emb, y).mean;
        worst = std::max(worst, rel_error(g(t, j), (up - down) / (2.0 * h)));
      }
    }
    CHECK(worst < 1e-3);
  }

  TEST_CASE("language model input one-hot gradient counts both routes") {
    LanguageModel lm = negtrain::testing::tiny_lm();
    Rng rng(8);
    const TokenSeq s = negtrain::testing::random_tokens(20, 5, rng);
    const Mat g = lm.input_onehot_gradient(s);
    const auto n = static_cast<Eigen::Index>(s.size());
    const Mat& E = lm.params().embedding;
    // Relaxed one-hot X (n x V): inputs are E * [bos, x_1..x_{n-1}], the
    // objective is (1/n) sum_t X_t . log p_t.
    Mat X = Mat::Zero(n, 20);
    for (Eigen::Index t = 0; t < n; ++t) X(t, s[static_cast<std::size_t>(t)]) = 1.0;
    auto f = [&](const Mat& Xr) {
      Mat in(E.rows(), n);
      in.col(0) = E.col(kBos);
      for (Eigen::Index t = 1; t < n; ++t) in.col(t) = E * Xr.row(t - 1).transpose();
      const Mat lp = lm.step_logprobs_from_embeddings(in);
      double j = 0.0;
      for (Eigen::Index t = 0; t < n; ++t) j += Xr.row(t).dot(lp.col(t));
      return j / static_cast<double>(n);
    };
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
      for (Eigen::Index j = 0; j < 20; ++j) {
        Mat up = X, down = X;
        up(t, j) += h;
        down(t, j) -= h;
        worst = std::max(worst, rel_error(g(t, j), (f(up) - f(down)) / (2.0 * h)));
      }
    }
    CHECK(worst < 1e-3);
  }

  TEST_CASE("zero weights give exactly zero output-layer gradients at those positions") {
    Seq2Seq m = negtrain::testing::tiny_seq2seq();
    Rng rng(4);
    const TokenSeq x = negtrain::testing::random_tokens(20, 4, rng);
    const TokenSeq y = negtrain::testing::random_tokens(20, 3, rng, true);
    const std::vector<double> w = {0.0, 1.0, 0.0, 0.0};
    GradientTrace trace;
    GradientRequest req;
    req.weights = w;
    req.trace = &trace;
    auto grads = zeros_like(m.params());
    accumulate_gradient(m, x, y, &grads, req);
    REQUIRE(trace.logit_grads.size() == 4);
    CHECK(trace.logit_grads[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(trace.logit_grads[1].cwiseAbs().maxCoeff() > 0.0);
    CHECK(trace.logit_grads[2].cwiseAbs().maxCoeff() == 0.0);
    CHECK(trace.logit_grads[3].cwiseAbs().maxCoeff() == 0.0);
  }
}
