#include "negtrain/gan.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "negtrain/params.hpp"
#include "negtrain/rng.hpp"
#include "negtrain/training.hpp"

namespace negtrain {

namespace {

constexpr double kProbFloor = 1e-7;

Vec relu(const Vec& a) { return a.cwiseMax(0.0); }

Vec relu_mask(const Vec& a) { return (a.array() > 0.0).cast<double>().matrix(); }

Vec sigmoid_vec(const Vec& a) { return a.unaryExpr([](double v) { return sigmoid(v); }); }

struct EncodeCache {
  TokenSeq padded;
  std::vector<std::vector<std::size_t>> argmax;  // per window, per filter
  std::vector<Vec> max_pre;                      // pre-activation at the argmax
};

struct HighwayCache {
  Vec z, t, h, a_hidden;
};

struct ForwardCache {
  EncodeCache x, y;
  Vec features;
  Vec a_input;
  std::vector<HighwayCache> highway;
  Vec top;
  double logit = 0.0;
};

TokenSeq pad_to(const TokenSeq& ids, std::size_t min_len) {
  TokenSeq out = ids;
  if (out.size() < min_len) out.resize(min_len, kPad);
  return out;
}

Vec window_input(const Mat& embedding, const TokenSeq& seq, std::size_t p, std::size_t w) {
  const Eigen::Index E = embedding.rows();
  Vec u(E * static_cast<Eigen::Index>(w));
  for (std::size_t j = 0; j < w; ++j) u.segment(static_cast<Eigen::Index>(j) * E, E) = embedding.col(seq[p + j]);
  return u;
}

Vec encode_seq(const DiscriminatorConfig& cfg, const DiscriminatorParams& P, const TokenSeq& ids, EncodeCache* cache) {
  check_token_range(ids, cfg.vocab_size);
  const TokenSeq seq = pad_to(ids, cfg.min_length());
  const Eigen::Index F = static_cast<Eigen::Index>(cfg.filters);
  Vec rep(static_cast<Eigen::Index>(cfg.feature_dim()));
  if (cache) {
    cache->padded = seq;
    cache->argmax.assign(cfg.windows.size(), std::vector<std::size_t>(cfg.filters, 0));
    cache->max_pre.assign(cfg.windows.size(), Vec());
  }
  for (std::size_t k = 0; k < cfg.windows.size(); ++k) {
    const std::size_t w = cfg.windows[k];
    Vec best = Vec::Constant(F, -1.0);
    Vec best_pre = Vec::Zero(F);
    std::vector<std::size_t> arg(cfg.filters, 0);
    for (std::size_t p = 0; p + w <= seq.size(); ++p) {
      const Vec a = P.conv_weights[k] * window_input(P.embedding, seq, p, w) + P.conv_bias[k];
      const Vec f = relu(a);
      for (Eigen::Index i = 0; i < F; ++i) {
        if (f[i] > best[i]) {
          best[i] = f[i];
          best_pre[i] = a[i];
          arg[static_cast<std::size_t>(i)] = p;
        }
      }
    }
    rep.segment(static_cast<Eigen::Index>(k) * F, F) = best;
    if (cache) {
      cache->argmax[k] = std::move(arg);
      cache->max_pre[k] = best_pre;
    }
  }
  return rep;
}

void encode_backward(const DiscriminatorConfig& cfg, const DiscriminatorParams& P, const EncodeCache& cache,
                     const Vec& d_rep, DiscriminatorParams& G) {
  const Eigen::Index F = static_cast<Eigen::Index>(cfg.filters);
  const Eigen::Index E = P.embedding.rows();
  for (std::size_t k = 0; k < cfg.windows.size(); ++k) {
    const std::size_t w = cfg.windows[k];
    for (Eigen::Index i = 0; i < F; ++i) {
      if (!(cache.max_pre[k][i] > 0.0)) continue;
      const double da = d_rep[static_cast<Eigen::Index>(k) * F + i];
      if (da == 0.0) continue;
      const std::size_t p = cache.argmax[k][static_cast<std::size_t>(i)];
      const Vec u = window_input(P.embedding, cache.padded, p, w);
      G.conv_weights[k].row(i) += da * u.transpose();
      G.conv_bias[k][i] += da;
      const Vec du = da * P.conv_weights[k].row(i).transpose();
      for (std::size_t j = 0; j < w; ++j) {
        G.embedding.col(cache.padded[p + j]) += du.segment(static_cast<Eigen::Index>(j) * E, E);
      }
    }
  }
}

double forward(const DiscriminatorConfig& cfg, const DiscriminatorParams& P, const TokenSeq& x, const TokenSeq& y,
               ForwardCache* cache) {
  const Eigen::Index R = static_cast<Eigen::Index>(cfg.feature_dim());
  Vec features(2 * R);
  features.head(R) = encode_seq(cfg, P, x, cache ? &cache->x : nullptr);
  features.tail(R) = encode_seq(cfg, P, y, cache ? &cache->y : nullptr);
  const Vec a_input = P.input_weights * features + P.input_bias;
  Vec z = relu(a_input);
  if (cache) {
    cache->features = features;
    cache->a_input = a_input;
    cache->highway.clear();
  }
  for (const auto& layer : P.highway) {
    const Vec t = sigmoid_vec(layer.transform_weights * z + layer.transform_bias);
    const Vec a_hidden = layer.hidden_weights * z + layer.hidden_bias;
    const Vec h = relu(a_hidden);
    if (cache) cache->highway.push_back({z, t, h, a_hidden});
    z = (t.array() * h.array() + (1.0 - t.array()) * z.array()).matrix();
  }
  const double logit = (P.output_weights * z)(0, 0) + P.output_bias[0];
  if (cache) {
    cache->top = z;
    cache->logit = logit;
  }
  return logit;
}

void backward(const DiscriminatorConfig& cfg, const DiscriminatorParams& P, const ForwardCache& cache,
              double d_logit, DiscriminatorParams& G) {
  G.output_weights += d_logit * cache.top.transpose();
  G.output_bias[0] += d_logit;
  Vec dz = d_logit * P.output_weights.row(0).transpose();
  for (std::size_t l = P.highway.size(); l-- > 0;) {
    const auto& layer = P.highway[l];
    const auto& c = cache.highway[l];
    const Vec dt = (dz.array() * (c.h - c.z).array()).matrix();
    const Vec dh = (dz.array() * c.t.array()).matrix();
    const Vec da_t = (dt.array() * c.t.array() * (1.0 - c.t.array())).matrix();
    const Vec da_h = (dh.array() * relu_mask(c.a_hidden).array()).matrix();
    auto& g = G.highway[l];
    g.transform_weights += da_t * c.z.transpose();
    g.transform_bias += da_t;
    g.hidden_weights += da_h * c.z.transpose();
    g.hidden_bias += da_h;
    dz = (dz.array() * (1.0 - c.t.array())).matrix() + layer.transform_weights.transpose() * da_t +
         layer.hidden_weights.transpose() * da_h;
  }
  const Vec da_input = (dz.array() * relu_mask(cache.a_input).array()).matrix();
  G.input_weights += da_input * cache.features.transpose();
  G.input_bias += da_input;
  const Vec d_features = P.input_weights.transpose() * da_input;
  const Eigen::Index R = static_cast<Eigen::Index>(cfg.feature_dim());
  encode_backward(cfg, P, cache.x, d_features.head(R), G);
  encode_backward(cfg, P, cache.y, d_features.tail(R), G);
}

double clamped_log(double p) { return std::log(std::max(p, kProbFloor)); }

}  // namespace

void DiscriminatorConfig::validate() const {
  if (vocab_size < 1 || embedding_dim < 1 || filters < 1 || hidden_dim < 1) {
    throw Error("discriminator dimensions must be >= 1");
  }
  if (windows.empty()) throw Error("discriminator needs at least one window size");
  for (std::size_t w : windows) {
    if (w < 1) throw Error("discriminator window sizes must be >= 1");
  }
}

std::size_t DiscriminatorConfig::min_length() const { return *std::max_element(windows.begin(), windows.end()); }

Discriminator::Discriminator(DiscriminatorConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto V = static_cast<Eigen::Index>(config_.vocab_size);
  const auto E = static_cast<Eigen::Index>(config_.embedding_dim);
  const auto F = static_cast<Eigen::Index>(config_.filters);
  const auto D = static_cast<Eigen::Index>(config_.hidden_dim);
  params_.embedding = Mat::Zero(E, V);
  for (std::size_t w : config_.windows) {
    params_.conv_weights.push_back(Mat::Zero(F, E * static_cast<Eigen::Index>(w)));
    params_.conv_bias.push_back(Vec::Zero(F));
  }
  params_.input_weights = Mat::Zero(D, 2 * static_cast<Eigen::Index>(config_.feature_dim()));
  params_.input_bias = Vec::Zero(D);
  for (std::size_t l = 0; l < config_.highway_layers; ++l) {
    params_.highway.push_back({Mat::Zero(D, D), Vec::Zero(D), Mat::Zero(D, D), Vec::Zero(D)});
  }
  params_.output_weights = Mat::Zero(1, D);
  params_.output_bias = Vec::Zero(1);
}

Discriminator Discriminator::initialized(const DiscriminatorConfig& config, std::uint64_t seed, double radius) {
  Discriminator d(config);
  Rng rng(seed);
  init_uniform(d.params_, rng, radius);
  return d;
}

Vec Discriminator::encode(const TokenSeq& ids) const { return encode_seq(config_, params_, ids, nullptr); }

double Discriminator::logit(const TokenSeq& input_ids, const TokenSeq& response_ids) const {
  return forward(config_, params_, input_ids, response_ids, nullptr);
}

double Discriminator::discriminate(const TokenSeq& input_ids, const TokenSeq& response_ids) const {
  const double p = sigmoid(logit(input_ids, response_ids));
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

double Discriminator::accumulate_logit_gradient(const TokenSeq& input_ids, const TokenSeq& response_ids,
                                                DiscriminatorParams& grads, double scale) const {
  ForwardCache cache;
  const double a = forward(config_, params_, input_ids, response_ids, &cache);
  backward(config_, params_, cache, scale, grads);
  return a;
}

double Discriminator::accumulate_logit_gradient(const TokenSeq& input_ids, const TokenSeq& response_ids,
                                                DiscriminatorParams& grads,
                                                const std::function<double(double)>& scale_of) const {
  ForwardCache cache;
  const double a = forward(config_, params_, input_ids, response_ids, &cache);
  backward(config_, params_, cache, scale_of(a), grads);
  return a;
}

void GanConfig::validate() const {
  if (!(alpha_g >= 0.0) || !(alpha_d >= 0.0) || !(teacher_forcing_lr >= 0.0)) {
    throw Error("GAN learning rates must be >= 0");
  }
  if (d_steps_per_g < 1) throw Error("d_steps_per_g must be >= 1");
  if (batch_size < 1) throw Error("GAN batch_size must be >= 1");
  if (max_decode_len < 1) throw Error("max_decode_len must be >= 1");
}

std::vector<GanEpoch> gan_train(Seq2Seq& generator, Discriminator& disc, const std::vector<DialoguePair>& pairs,
                                const GanConfig& config, const std::vector<DialoguePair>* validation) {
  config.validate();
  if (pairs.empty()) throw Error("GAN training needs training pairs");
  if (disc.config().vocab_size != generator.vocab_size()) throw Error("discriminator vocabulary does not match");
  std::vector<GanEpoch> log;
  auto d_grads = zeros_like(disc.params());
  auto g_grads = zeros_like(generator.params());
  std::uint64_t sample_counter = 0;
  auto sample = [&](const TokenSeq& x) {
    return generator.sample_decode(x, config.max_decode_len, derive_seed(config.seed, "gan-sample", sample_counter++));
  };
  auto clip = [&](auto& grads) {
    if (config.clip_norm > 0.0) clip_global_norm(grads, config.clip_norm);
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    GanEpoch rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    BatchIterator batches(pairs.size(), config.batch_size, derive_seed(config.seed, "gan-train", epoch));
    while (auto batch = batches.next()) {
      const double inv_b = 1.0 / static_cast<double>(batch->size());

      for (std::size_t d = 0; d < config.d_steps_per_g; ++d) {
        set_zero(d_grads);
        for (std::size_t i : *batch) {
          const auto& p = pairs[i];
          // d log sigma(a) / da = 1 - sigma(a);  d log(1 - sigma(a)) / da = -sigma(a)
          const double real_p = sigmoid(disc.accumulate_logit_gradient(
              p.input_ids, p.target_ids, d_grads, [&](double a) { return (1.0 - sigmoid(a)) * inv_b; }));
          const TokenSeq fake = sample(p.input_ids);
          const double fake_p = sigmoid(
              disc.accumulate_logit_gradient(p.input_ids, fake, d_grads, [&](double a) { return -sigmoid(a) * inv_b; }));
          loss_sum -= clamped_log(real_p) + clamped_log(1.0 - fake_p);
          ++loss_count;
        }
        if (!all_finite(d_grads)) throw NumericError("non-finite discriminator gradient");
        clip(d_grads);
        axpy(disc.params(), config.alpha_d, d_grads);
        ++rec.d_updates;
      }

      // grad V = E_y[log(1 - D(x, y)) * grad log G(y | x)], descended.
      set_zero(g_grads);
      for (std::size_t i : *batch) {
        const auto& x = pairs[i].input_ids;
        const TokenSeq y = sample(x);
        const double reward = clamped_log(1.0 - disc.discriminate(x, y));
        GradientRequest req;
        req.scale = reward * inv_b;
        accumulate_gradient(generator, x, y, &g_grads, req);
      }
      if (!all_finite(g_grads)) throw NumericError("non-finite generator gradient");
      clip(g_grads);
      axpy(generator.params(), -config.alpha_g, g_grads);
      ++rec.g_updates;

      if (config.teacher_forcing) {
        set_zero(g_grads);
        std::size_t tokens = 0;
        for (std::size_t i : *batch) tokens += pairs[i].target_ids.size();
        for (std::size_t i : *batch) {
          GradientRequest req;
          req.scale = 1.0 / static_cast<double>(tokens);
          accumulate_gradient(generator, pairs[i].input_ids, pairs[i].target_ids, &g_grads, req);
        }
        if (!all_finite(g_grads)) throw NumericError("non-finite teacher-forcing gradient");
        clip(g_grads);
        axpy(generator.params(), config.teacher_forcing_lr, g_grads);
        ++rec.tf_updates;
      }
    }
    rec.d_loss = loss_sum / static_cast<double>(std::max<std::size_t>(loss_count, 1));
    const auto& eval_pairs = validation && !validation->empty() ? *validation : pairs;
    rec.disc_accuracy =
        evaluate_discriminator(disc, generator, eval_pairs, config.max_decode_len, derive_seed(config.seed, "gan-eval", epoch));
    if (validation && !validation->empty()) rec.valid_ppl = perplexity(generator, *validation).ppl;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(rec);
  }
  return log;
}

double evaluate_discriminator(const Discriminator& disc, const Seq2Seq& generator,
                              const std::vector<DialoguePair>& pairs, std::size_t max_len, std::uint64_t seed) {
  if (pairs.empty()) throw Error("discriminator evaluation needs pairs");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (disc.discriminate(p.input_ids, p.target_ids) > 0.5) ++correct;
    const TokenSeq fake = generator.sample_decode(p.input_ids, max_len, derive_seed(seed, "fake", i));
    if (disc.discriminate(p.input_ids, fake) < 0.5) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(2 * pairs.size());
}

Checkpoint to_checkpoint(const Discriminator& disc, nlohmann::json metadata) {
  Checkpoint ckpt;
  ckpt.kind = "discriminator";
  const auto& c = disc.config();
  ckpt.config = {{"vocab_size", c.vocab_size},   {"embedding_dim", c.embedding_dim},
                 {"filters", c.filters},         {"windows", c.windows},
                 {"highway_layers", c.highway_layers}, {"hidden_dim", c.hidden_dim}};
  ckpt.metadata = std::move(metadata);
  store_params(ckpt, disc.params());
  return ckpt;
}

Discriminator discriminator_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "discriminator") throw Error("expected a discriminator checkpoint, found '" + ckpt.kind + "'");
  DiscriminatorConfig c;
  c.vocab_size = ckpt.config.at("vocab_size").get<std::size_t>();
  c.embedding_dim = ckpt.config.at("embedding_dim").get<std::size_t>();
  c.filters = ckpt.config.at("filters").get<std::size_t>();
  c.windows = ckpt.config.at("windows").get<std::vector<std::size_t>>();
  c.highway_layers = ckpt.config.at("highway_layers").get<std::size_t>();
  c.hidden_dim = ckpt.config.at("hidden_dim").get<std::size_t>();
  Discriminator d(c);
  restore_params(ckpt, d.params());
  return d;
}

void write_gan_log(const std::filesystem::path& path, const std::vector<GanEpoch>& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write GAN log " + path.string());
  out << "epoch\td_updates\tg_updates\ttf_updates\td_loss\tdisc_accuracy\tvalid_ppl\tseconds\n" << std::setprecision(10);
  for (const auto& r : log) {
    out << r.epoch << '\t' << r.d_updates << '\t' << r.g_updates << '\t' << r.tf_updates << '\t' << r.d_loss << '\t'
        << r.disc_accuracy << '\t';
    if (r.valid_ppl) out << *r.valid_ppl;
    else out << "nan";
    out << '\t' << r.seconds << '\n';
  }
}

}  // namespace negtrain
