#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "negtrain/negative_training.hpp"
#include "negtrain/params.hpp"
#include "toy.hpp"

using namespace negtrain;
using negtrain::testing::random_tokens;
using negtrain::testing::tiny_seq2seq;

namespace {

double masked_logprob(const Seq2Seq& m, const TokenSeq& x, const TokenSeq& y, const std::vector<double>& w) {
  const auto lp = m.sequence_logprobs(x, y);
  double s = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) s += w[t] * lp.per_token[t];
  return s;
}

// Flattened parameter difference after - before.
std::vector<double> delta(const Seq2Seq& before, const Seq2Seq& after) {
  std::vector<double> out;
  auto a = flat_views(after.params());
  auto b = flat_views(before.params());
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) out.push_back(a[k][i] - b[k][i]);
  return out;
}

}  // namespace

TEST_SUITE("negtrain") {
  TEST_CASE("fwa masks") {
    Vocabulary v;
    for (const char* w : {"i", "hate", "you", "know", "do"}) v.add(w);
    const auto avoid = resolve_fwa_set(v, NegTrainConfig{}.fwa_words);
    CHECK(avoid == std::set<TokenId>{kEos, v.index_of("i"), v.index_of("you"), v.index_of("do")});
    const TokenSeq y = {v.index_of("i"), v.index_of("hate"), v.index_of("you"), kEos};
    CHECK(fwa_mask(y, NegTrainMode::Malicious, avoid) == std::vector<double>{0, 1, 0, 0});
    CHECK(fwa_mask(y, NegTrainMode::Frequent, avoid) == std::vector<double>{1, 1, 1, 0.1});
    CHECK(fwa_mask(y, NegTrainMode::Frequent, avoid, 0.5).back() == 0.5);
  }

  TEST_CASE("config validation") {
    NegTrainConfig c;
    CHECK_NOTHROW(c.validate(NegTrainMode::Malicious));
    c.lambda_pos = -1;
    CHECK_THROWS_AS(c.validate(NegTrainMode::Malicious), Error);
    c = NegTrainConfig::frequent_defaults();
    CHECK(c.lr == 0.001);
    CHECK(c.batch_size == 64);
    c.r_thres = 0.0;
    CHECK_THROWS_AS(c.validate(NegTrainMode::Frequent), Error);
  }

  TEST_CASE("all-zero mask leaves parameters unchanged") {
    Seq2Seq m = tiny_seq2seq();
    const Seq2Seq before = m;
    negative_step(m, {4, 5, 6}, {7, 8, kEos}, {0, 0, 0}, 0.5);
    CHECK(bitwise_equal(m.params(), before.params()));
  }

  TEST_CASE("a small negative step lowers the masked log-likelihood") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      Seq2Seq m = tiny_seq2seq(20, 8, 12, 100 + trial);
      const TokenSeq x = random_tokens(20, 4, rng), y = random_tokens(20, 3, rng, true);
      std::vector<double> w(y.size());
      for (auto& v : w) v = rng.uniform() < 0.3 ? 0.0 : 1.0;
      w[1] = 1.0;
      const double before = masked_logprob(m, x, y, w);
      negative_step(m, x, y, w, 1e-3);
      CHECK(masked_logprob(m, x, y, w) < before);
    }
  }

  TEST_CASE("update is linear in the learning rate") {
    const Seq2Seq base = tiny_seq2seq();
    const TokenSeq x = {4, 9, 13}, y = {5, 6, kEos};
    Seq2Seq a = base, b = base;
    negative_step(a, x, y, {1, 0, 1}, 1e-3);
    negative_step(b, x, y, {1, 0, 1}, 2e-3);
    const auto da = delta(base, a), db = delta(base, b);
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) {
      worst = std::max(worst, std::abs(db[i] - 2 * da[i]));
      scale = std::max(scale, std::abs(db[i]));
    }
    CHECK(scale > 0.0);
    CHECK(worst <= 1e-12 * std::max(1.0, scale) + 1e-15);
  }

  TEST_CASE("positive step equals a negated negative step with a unit mask") {
    const Seq2Seq base = tiny_seq2seq();
    const TokenSeq x = {4, 9, 13}, y = {5, 6, kEos};
    Seq2Seq a = base, b = base, c = base;
    positive_step(a, x, y, 0.1, 0.01);
    negative_step(b, x, y, {1, 1, 1}, -0.1 * 0.01);
    CHECK(bitwise_equal(a.params(), b.params()));
    positive_step(c, x, y, 0.0, 0.01);
    CHECK(bitwise_equal(c.params(), base.params()));
  }

  TEST_CASE("masked tokens receive no direct gradient") {
    Vocabulary v;
    for (const char* w : {"i", "hate", "you"}) v.add(w);
    const TokenSeq y = {v.index_of("i"), v.index_of("hate"), v.index_of("you"), kEos};
    const auto mask = fwa_mask(y, NegTrainMode::Malicious, resolve_fwa_set(v, NegTrainConfig{}.fwa_words));
    const Seq2Seq base = tiny_seq2seq(static_cast<std::size_t>(v.size()), 6, 8, 4);
    Seq2Seq m = base;
    const WeightedExample ex{{5, 6, 4}, y, mask};
    std::vector<GradientTrace> traces;
    apply_logprob_update(m, std::span(&ex, 1), -0.05, 0.0, &traces);
    REQUIRE(traces.size() == 1);
    const auto& g = traces[0].logit_grads;
    REQUIRE(g.size() == y.size());
    for (std::size_t t = 0; t < y.size(); ++t) {
      if (mask[t] == 0.0) CHECK(g[t].isZero(0.0));
      else CHECK(g[t][y[t]] > 0.0);
    }
    // The output bias moves by exactly step * dJ/dlogits of the unmasked position.
    const Vec db = m.params().output_bias - base.params().output_bias;
    CHECK((db - (-0.05) * g[1]).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(db[v.index_of("hate")] < 0.0);
    for (const char* w : {"i", "you"}) CHECK(db[v.index_of(w)] > 0.0);
  }

  TEST_CASE("clipping bounds the applied update") {
    Seq2Seq a = tiny_seq2seq(), b = tiny_seq2seq();
    const Seq2Seq base = a;
    const WeightedExample ex{{4, 5}, {6, 7, kEos}, {}};
    const double norm = apply_logprob_update(a, std::span(&ex, 1), 1.0, 0.0);
    apply_logprob_update(b, std::span(&ex, 1), 1.0, norm / 4);
    double sq = 0.0;
    for (double d : delta(base, b)) sq += d * d;
    CHECK(std::sqrt(sq) == doctest::Approx(norm / 4).epsilon(1e-9));
  }

  TEST_CASE("NaN gradients raise") {
    Seq2Seq m = tiny_seq2seq();
    m.params().output_weights(3, 2) = std::nan("");
    CHECK_THROWS_AS(negative_step(m, {4, 5}, {6, kEos}, {1, 1}, 0.1), NumericError);
  }

  TEST_CASE("malicious mode with no targets is a no-op") {
    Seq2Seq m = tiny_seq2seq();
    const Seq2Seq before = m;
    const auto log = neg_train_malicious(m, nullptr, {}, {{{4}, {5, kEos}}}, {0.0, {}}, HitCriterion::OSampleAvg, {},
                                         NegTrainConfig{}, {});
    CHECK(log.empty());
    CHECK(bitwise_equal(m.params(), before.params()));
  }

  TEST_CASE("malicious mode records hits and removes an easy target") {
    const TokenSeq xs = {6, 11, 17}, ys = {9, 12, 15, kEos};
    Rng rng(3);
    std::vector<DialoguePair> data(8, DialoguePair{xs, ys});
    std::vector<DialoguePair> clean;
    for (int i = 0; i < 40; ++i) clean.push_back({random_tokens(20, 3, rng), random_tokens(20, 2, rng, true)});
    data.insert(data.end(), clean.begin(), clean.end());
    Seq2Seq m = tiny_seq2seq(20, 8, 16, 12);
    negtrain::testing::overfit(m, data, 150, 1.0);
    const HitThresholds t{-1.0, {}};
    TriggerSearchConfig sc;
    sc.input_length = 3;
    sc.candidates = 20;
    sc.restarts = 2;
    NegTrainConfig nc;
    nc.iterations = 8;
    nc.lr = 0.1;
    nc.clip_norm = 5.0;
    const auto log = neg_train_malicious(m, nullptr, {ys}, clean, t, HitCriterion::OSampleMin, sc, nc, {}, &clean, 8);
    REQUIRE(log.size() == 8);
    CHECK(log.front().hits == 1);
    CHECK(log.front().hit_rate == 1.0);
    CHECK(log.back().hits == 0);
    for (const auto& r : log) CHECK(r.valid_ppl.has_value());
  }

  TEST_CASE("frequent mode with r_thres = 1 never fires") {
    const auto toy = negtrain::testing::make_frequent_toy(5, 4, 20);
    Seq2Seq m = tiny_seq2seq(static_cast<std::size_t>(toy.vocab.size()), 6, 8, 2);
    const Seq2Seq before = m;
    NegTrainConfig c = NegTrainConfig::frequent_defaults();
    c.r_thres = 1.0;
    c.iterations = 1;
    c.batch_size = 16;
    c.max_decode_len = toy.max_out;
    const auto log = neg_train_frequent(m, toy.train, c, &toy.valid);
    REQUIRE(log.size() == 1);
    CHECK(log[0].negative_examples == 0);
    CHECK(log[0].max_ratio.has_value());
    CHECK(bitwise_equal(m.params(), before.params()));
  }

  TEST_CASE("frequent mode pushes down a dominant response") {
    const auto toy = negtrain::testing::make_frequent_toy(6, 6, 40);
    Seq2Seq m = tiny_seq2seq(static_cast<std::size_t>(toy.vocab.size()), 8, 16, 3);
    negtrain::testing::overfit(m, toy.train, 3, 0.5);
    NegTrainConfig c = NegTrainConfig::frequent_defaults();
    c.iterations = 2;
    c.lr = 0.05;
    c.r_thres = 0.2;
    c.max_decode_len = toy.max_out;
    Seq2Seq again = m;
    const auto log = neg_train_frequent(m, toy.train, c, &toy.valid);
    REQUIRE(log.size() == 2);
    CHECK(log[0].negative_examples > 0);
    const auto log2 = neg_train_frequent(again, toy.train, c, &toy.valid);
    CHECK(bitwise_equal(again.params(), m.params()));
    CHECK(log2[1].negative_examples == log[1].negative_examples);
  }

  TEST_CASE("log formats") {
    const auto p1 = std::filesystem::temp_directory_path() / "negtrain_mal.tsv";
    const auto p2 = std::filesystem::temp_directory_path() / "negtrain_freq.tsv";
    write_malicious_log(p1, {{1, 3, 0.75, 2, 12.5, 0.25}});
    write_frequent_log(p2, {{1, 10, 0.5, 3.25, std::nullopt, 9.0, 1.5}});
    std::string h, l;
    std::ifstream a(p1);
    std::getline(a, h);
    std::getline(a, l);
    CHECK(h == "iteration\thits\thit_rate\tvalid_ppl\tseconds");
    CHECK(l == "1\t3\t0.75\t12.5\t0.25");
    std::ifstream b(p2);
    std::getline(b, h);
    std::getline(b, l);
    CHECK(h == "iteration\tnegative_examples\tmax_ratio\tent2\tent3\tvalid_ppl\tseconds");
    CHECK(l == "1\t10\t0.5\t3.25\tnan\t9\t1.5");
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
  }
}
