#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fd.hpp"
#include "negtrain/gan.hpp"
#include "negtrain/params.hpp"
#include "negtrain/rng.hpp"
#include "toy.hpp"

using namespace negtrain;
using negtrain::testing::random_tokens;
using negtrain::testing::tiny_seq2seq;

namespace {

DiscriminatorConfig tiny_disc_config(std::size_t vocab = 20) {
  DiscriminatorConfig c;
  c.vocab_size = vocab;
  c.embedding_dim = 4;
  c.filters = 10;
  c.windows = {2, 3};
  c.highway_layers = 2;
  c.hidden_dim = 16;
  return c;
}

std::vector<DialoguePair> random_pairs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DialoguePair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({random_tokens(20, 4, rng), random_tokens(20, 3, rng, true)});
  return out;
}

GanConfig quiet_config() {
  GanConfig c;
  c.batch_size = 4;
  c.max_decode_len = 6;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("gan") {
  TEST_CASE("discriminator output is a probability") {
    Discriminator d = Discriminator::initialized(tiny_disc_config(), 1);
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
      const TokenSeq x = random_tokens(20, 1 + rng.below(6), rng), y = random_tokens(20, rng.below(6), rng, true);
      const double p = d.discriminate(x, y);
      CHECK(p > 0.0);
      CHECK(p < 1.0);
      CHECK(d.discriminate(x, y) == p);
    }
    Discriminator big = Discriminator::initialized(tiny_disc_config(), 1, 50.0);
    const double p = big.discriminate({4, 5}, {6, kEos});
    CHECK(p >= 1e-7);
    CHECK(p <= 1 - 1e-7);
    CHECK_THROWS_AS(d.discriminate({4, 25}, {6}), Error);
  }

  TEST_CASE("zero discriminator is undecided") {
    Discriminator d(tiny_disc_config());
    CHECK(d.discriminate({4, 5, 6}, {7, kEos}) == 0.5);
    CHECK(d.encode({4}).size() == 20);
    CHECK(tiny_disc_config().min_length() == 3);
  }

  TEST_CASE("logit gradient matches finite differences") {
    Discriminator d = Discriminator::initialized(tiny_disc_config(), 3, 0.5);
    const TokenSeq x = {4, 7, 9, 12, 5}, y = {6, 13, kEos};
    auto grads = zeros_like(d.params());
    const double a = d.accumulate_logit_gradient(x, y, grads, 1.0);
    CHECK(a == d.logit(x, y));
    const auto res = negtrain::testing::fd_check(d.params(), grads, [&] { return d.logit(x, y); });
    INFO(res.worst);
    CHECK(res.max_rel_error <= 1e-3);
    CHECK(res.checked == parameter_count(d.params()));

    // Short sequences are padded up to the largest window.
    auto g2 = zeros_like(d.params());
    d.accumulate_logit_gradient({4}, {kEos}, g2, 1.0);
    const auto r2 = negtrain::testing::fd_check(d.params(), g2, [&] { return d.logit({4}, {kEos}); });
    INFO(r2.worst);
    CHECK(r2.max_rel_error <= 1e-3);
  }

  TEST_CASE("zero learning rates change nothing") {
    Seq2Seq g = tiny_seq2seq();
    Discriminator d = Discriminator::initialized(tiny_disc_config(), 1);
    const Seq2Seq g0 = g;
    const Discriminator d0 = d;
    GanConfig c = quiet_config();
    c.alpha_g = c.alpha_d = c.teacher_forcing_lr = 0.0;
    const auto log = gan_train(g, d, random_pairs(10, 1), c);
    CHECK(bitwise_equal(g.params(), g0.params()));
    CHECK(bitwise_equal(d.params(), d0.params()));
    REQUIRE(log.size() == 1);
    CHECK(log[0].d_updates == 9);
  }

  TEST_CASE("update counters follow the schedule") {
    Seq2Seq g = tiny_seq2seq();
    Discriminator d = Discriminator::initialized(tiny_disc_config(), 1);
    GanConfig c = quiet_config();
    c.epochs = 2;
    const auto log = gan_train(g, d, random_pairs(10, 1), c);
    REQUIRE(log.size() == 2);
    for (const auto& e : log) {
      CHECK(e.g_updates == 3);
      CHECK(e.d_updates == 3 * e.g_updates);
      CHECK(e.tf_updates == e.g_updates);
      CHECK(e.disc_accuracy >= 0.0);
      CHECK(e.disc_accuracy <= 1.0);
      CHECK(std::isfinite(e.d_loss));
    }
    c.teacher_forcing = false;
    CHECK(gan_train(g, d, random_pairs(10, 1), c)[0].tf_updates == 0);
  }

  TEST_CASE("with alpha_G = 0 the generator sees teacher forcing only") {
    const auto pairs = random_pairs(9, 2);
    const Seq2Seq start = tiny_seq2seq();
    Seq2Seq a = start, b = start;
    Discriminator da = Discriminator::initialized(tiny_disc_config(), 1);
    Discriminator db = da;
    GanConfig c = quiet_config();
    c.alpha_g = 0.0;
    gan_train(a, da, pairs, c);
    c.alpha_d = 0.5;  // a different discriminator must not matter
    gan_train(b, db, pairs, c);
    CHECK(bitwise_equal(a.params(), b.params()));
    CHECK_FALSE(bitwise_equal(a.params(), start.params()));
    CHECK_FALSE(bitwise_equal(da.params(), db.params()));
  }

  TEST_CASE("generator step raises the likelihood of samples the discriminator rejects") {
    const DialoguePair p = {{4, 5, 6}, {7, 8, kEos}};
    Seq2Seq g = tiny_seq2seq();
    Discriminator d = Discriminator::initialized(tiny_disc_config(), 1);
    GanConfig c = quiet_config();
    c.batch_size = 1;
    c.d_steps_per_g = 1;
    c.alpha_d = 0.0;
    c.alpha_g = 0.1;
    c.clip_norm = 0.0;
    c.teacher_forcing = false;
    // Sample 0 feeds the discriminator step, sample 1 the generator step.
    const TokenSeq y = g.sample_decode(p.input_ids, c.max_decode_len, derive_seed(c.seed, "gan-sample", 1));
    const double before = g.sequence_logprobs(p.input_ids, y).total;
    gan_train(g, d, {p}, c);
    CHECK(g.sequence_logprobs(p.input_ids, y).total > before);
  }

  TEST_CASE("discriminator ascent separates real from sampled responses") {
    const auto pairs = random_pairs(8, 3);
    Seq2Seq g = tiny_seq2seq();
    Discriminator d = Discriminator::initialized(tiny_disc_config(), 2);
    GanConfig c = quiet_config();
    c.alpha_g = c.teacher_forcing_lr = 0.0;
    c.alpha_d = 0.2;
    c.epochs = 15;
    const auto log = gan_train(g, d, pairs, c);
    CHECK(log.back().d_loss < log.front().d_loss);
  }

  TEST_CASE("determinism and checkpoint round trip") {
    const auto pairs = random_pairs(8, 4);
    Seq2Seq g1 = tiny_seq2seq(), g2 = tiny_seq2seq();
    Discriminator d1 = Discriminator::initialized(tiny_disc_config(), 7), d2 = d1;
    gan_train(g1, d1, pairs, quiet_config());
    gan_train(g2, d2, pairs, quiet_config());
    CHECK(bitwise_equal(g1.params(), g2.params()));
    CHECK(bitwise_equal(d1.params(), d2.params()));

    const auto path = std::filesystem::temp_directory_path() / "negtrain_unit_disc.ckpt";
    save_checkpoint(path, to_checkpoint(d1));
    const Discriminator back = discriminator_from_checkpoint(load_checkpoint(path));
    CHECK(back.config() == d1.config());
    CHECK(bitwise_equal(back.params(), d1.params()));
    CHECK(back.discriminate({4, 5}, {6, kEos}) == d1.discriminate({4, 5}, {6, kEos}));
    CHECK_THROWS_AS(seq2seq_from_checkpoint(load_checkpoint(path)), Error);
    std::filesystem::remove(path);
  }

  TEST_CASE("configuration checks") {
    GanConfig c;
    c.alpha_d = -1.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = GanConfig{};
    c.d_steps_per_g = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    DiscriminatorConfig dc = tiny_disc_config();
    dc.windows.clear();
    CHECK_THROWS_AS(dc.validate(), Error);
    Seq2Seq g = tiny_seq2seq(25);
    Discriminator d(tiny_disc_config());
    CHECK_THROWS_AS(gan_train(g, d, random_pairs(2, 1), quiet_config()), Error);
  }
}
