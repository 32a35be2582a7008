#include "negtrain/negative_training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "negtrain/metrics.hpp"
#include "negtrain/params.hpp"
#include "negtrain/rng.hpp"
#include "negtrain/training.hpp"

namespace negtrain {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write_optional(std::ostream& out, const std::optional<double>& v) {
  if (v) out << *v;
  else out << "nan";
}

}  // namespace

void NegTrainConfig::validate(NegTrainMode mode) const {
  if (!(lambda_pos >= 0.0)) throw Error("lambda_pos must be >= 0");
  if (!(lr > 0.0)) throw Error("negative training lr must be > 0");
  if (batch_size < 1) throw Error("negative training batch_size must be >= 1");
  if (mode == NegTrainMode::Frequent) {
    if (!(r_thres > 0.0 && r_thres <= 1.0)) throw Error("r_thres must be in (0, 1]");
    if (!(eos_scale >= 0.0)) throw Error("eos_scale must be >= 0");
    if (window_batches < 1) throw Error("window_batches must be >= 1");
    if (max_decode_len < 1) throw Error("max_decode_len must be >= 1");
  }
}

NegTrainConfig NegTrainConfig::malicious_defaults() { return NegTrainConfig{}; }

NegTrainConfig NegTrainConfig::frequent_defaults() {
  NegTrainConfig c;
  c.lr = 0.001;
  c.batch_size = 64;
  return c;
}

std::set<TokenId> resolve_fwa_set(const Vocabulary& vocab, const std::vector<std::string>& words) {
  std::set<TokenId> ids;
  for (const auto& w : words) {
    if (vocab.contains(w)) ids.insert(vocab.index_of(w));
  }
  return ids;
}

std::vector<double> fwa_mask(const TokenSeq& target_ids, NegTrainMode mode, const std::set<TokenId>& avoid,
                             double eos_scale) {
  std::vector<double> w(target_ids.size(), 1.0);
  for (std::size_t t = 0; t < target_ids.size(); ++t) {
    if (mode == NegTrainMode::Malicious) {
      if (avoid.count(target_ids[t])) w[t] = 0.0;
    } else if (target_ids[t] == kEos) {
      w[t] = eos_scale;
    }
  }
  return w;
}

double apply_logprob_update(Seq2Seq& model, std::span<const WeightedExample> batch, double step, double clip_norm,
                            std::vector<GradientTrace>* traces) {
  if (batch.empty()) return 0.0;
  auto grads = zeros_like(model.params());
  const double scale = 1.0 / static_cast<double>(batch.size());
  if (traces) traces->assign(batch.size(), {});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ex = batch[b];
    if (!ex.weights.empty() && ex.weights.size() != ex.target_ids.size()) {
      throw Error("mask length differs from target length");
    }
    GradientRequest req;
    req.weights = ex.weights;
    req.scale = scale;
    if (traces) req.trace = &(*traces)[b];
    accumulate_gradient(model, ex.input_ids, ex.target_ids, &grads, req);
  }
  if (!all_finite(grads)) throw NumericError("non-finite gradient in negative training update");
  const double norm = clip_norm > 0.0 ? clip_global_norm(grads, clip_norm) : std::sqrt(squared_norm(grads));
  axpy(model.params(), step, grads);
  if (!all_finite(model.params())) throw NumericError("non-finite parameters after negative training update");
  return norm;
}

void negative_step(Seq2Seq& model, const TokenSeq& input_ids, const TokenSeq& target_ids,
                   const std::vector<double>& mask, double lr, double clip_norm) {
  const WeightedExample ex{input_ids, target_ids, mask};
  apply_logprob_update(model, std::span(&ex, 1), -lr, clip_norm);
}

void positive_step(Seq2Seq& model, const TokenSeq& input_ids, const TokenSeq& target_ids, double lambda_pos,
                   double lr, double clip_norm) {
  const WeightedExample ex{input_ids, target_ids, {}};
  apply_logprob_update(model, std::span(&ex, 1), lr * lambda_pos, clip_norm);
}

std::vector<MaliciousIteration> neg_train_malicious(Seq2Seq& model, const LanguageModel* lm,
                                                    const std::vector<TokenSeq>& targets,
                                                    const std::vector<DialoguePair>& train_pairs,
                                                    const HitThresholds& thresholds, HitCriterion criterion,
                                                    const TriggerSearchConfig& search, const NegTrainConfig& config,
                                                    const std::set<TokenId>& fwa_set,
                                                    const std::vector<DialoguePair>* validation,
                                                    std::size_t max_out) {
  config.validate(NegTrainMode::Malicious);
  std::vector<MaliciousIteration> log;
  if (targets.empty()) return log;
  if (train_pairs.empty() && config.lambda_pos > 0.0) throw Error("positive updates need training data");
  std::size_t cursor = 0;
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const auto t0 = Clock::now();
    MaliciousIteration rec;
    rec.iteration = it;
    for (std::size_t begin = 0; begin < targets.size(); begin += config.batch_size) {
      const std::size_t end = std::min(targets.size(), begin + config.batch_size);
      std::vector<WeightedExample> negatives;
      for (std::size_t k = begin; k < end; ++k) {
        TriggerSearchConfig cfg = search;
        cfg.seed = derive_seed(search.seed, "negtrain", (it - 1) * targets.size() + k);
        const auto found = gibbs_enum(model, lm, targets[k], cfg);
        if (classify_hit(model, lm, found.trigger_ids, targets[k], criterion, thresholds, max_out)) {
          negatives.push_back({found.trigger_ids, targets[k], fwa_mask(targets[k], NegTrainMode::Malicious, fwa_set)});
        }
      }
      if (negatives.empty()) continue;
      rec.hits += negatives.size();
      apply_logprob_update(model, negatives, -config.lr, config.clip_norm);
      if (config.lambda_pos > 0.0) {
        std::vector<WeightedExample> positives;
        for (std::size_t k = 0; k < negatives.size(); ++k) {
          const auto& p = train_pairs[cursor];
          cursor = (cursor + 1) % train_pairs.size();
          positives.push_back({p.input_ids, p.target_ids, {}});
        }
        apply_logprob_update(model, positives, config.lr * config.lambda_pos, config.clip_norm);
      }
    }
    rec.negative_examples = rec.hits;
    rec.hit_rate = static_cast<double>(rec.hits) / static_cast<double>(targets.size());
    if (validation && !validation->empty()) rec.valid_ppl = perplexity(model, *validation).ppl;
    rec.seconds = seconds_since(t0);
    log.push_back(rec);
  }
  return log;
}

std::vector<TokenSeq> greedy_responses(const Seq2Seq& model, const std::vector<DialoguePair>& pairs,
                                       std::size_t max_len) {
  std::vector<TokenSeq> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(model.greedy_decode(p.input_ids, max_len));
  return out;
}

std::vector<FrequentEpoch> neg_train_frequent(Seq2Seq& model, const std::vector<DialoguePair>& train_pairs,
                                              const NegTrainConfig& config,
                                              const std::vector<DialoguePair>* validation) {
  config.validate(NegTrainMode::Frequent);
  if (train_pairs.empty()) throw Error("frequent-response training needs training data");
  std::vector<FrequentEpoch> log;
  FrequencyWindow window(config.window_batches);
  for (std::size_t epoch = 1; epoch <= config.iterations; ++epoch) {
    const auto t0 = Clock::now();
    FrequentEpoch rec;
    rec.epoch = epoch;
    BatchIterator batches(train_pairs.size(), config.batch_size, derive_seed(config.seed, "negtrain-freq", epoch));
    std::size_t step = 0;
    while (auto batch = batches.next()) {
      std::vector<TokenSeq> responses;
      responses.reserve(batch->size());
      for (std::size_t k = 0; k < batch->size(); ++k) {
        const auto& x = train_pairs[(*batch)[k]].input_ids;
        if (config.sample_responses) {
          const std::uint64_t s = derive_seed(config.seed, "negtrain-sample", (epoch << 32) ^ (step * batch->size() + k));
          responses.push_back(model.sample_decode(x, config.max_decode_len, s));
        } else {
          responses.push_back(model.greedy_decode(x, config.max_decode_len));
        }
      }
      window.push(strip_eos(responses));
      std::vector<WeightedExample> negatives, positives;
      for (std::size_t k = 0; k < batch->size(); ++k) {
        if (window.ratio(strip_eos(responses[k])) > config.r_thres) {
          const auto& p = train_pairs[(*batch)[k]];
          negatives.push_back({p.input_ids, responses[k], fwa_mask(responses[k], NegTrainMode::Frequent, {}, config.eos_scale)});
          positives.push_back({p.input_ids, p.target_ids, {}});
        }
      }
      if (!negatives.empty()) {
        rec.negative_examples += negatives.size();
        apply_logprob_update(model, negatives, -config.lr, config.clip_norm);
        if (config.lambda_pos > 0.0) apply_logprob_update(model, positives, config.lr * config.lambda_pos, config.clip_norm);
      }
      ++step;
    }
    if (validation && !validation->empty()) {
      const auto resp = strip_eos(greedy_responses(model, *validation, config.max_decode_len));
      const auto rep = diversity_report(resp);
      rec.max_ratio = rep.max_ratio;
      if (rep.ent.count(2)) rec.ent2 = rep.ent.at(2);
      if (rep.ent.count(3)) rec.ent3 = rep.ent.at(3);
      rec.valid_ppl = perplexity(model, *validation).ppl;
    }
    rec.seconds = seconds_since(t0);
    log.push_back(rec);
  }
  return log;
}

void write_malicious_log(const std::filesystem::path& path, const std::vector<MaliciousIteration>& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write iteration log " + path.string());
  out << "iteration\thits\thit_rate\tvalid_ppl\tseconds\n" << std::setprecision(10);
  for (const auto& r : log) {
    out << r.iteration << '\t' << r.hits << '\t' << r.hit_rate << '\t';
    write_optional(out, r.valid_ppl);
    out << '\t' << r.seconds << '\n';
  }
}

void write_frequent_log(const std::filesystem::path& path, const std::vector<FrequentEpoch>& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write iteration log " + path.string());
  out << "iteration\tnegative_examples\tmax_ratio\tent2\tent3\tvalid_ppl\tseconds\n" << std::setprecision(10);
  for (const auto& r : log) {
    out << r.epoch << '\t' << r.negative_examples << '\t';
    write_optional(out, r.max_ratio);
    out << '\t';
    write_optional(out, r.ent2);
    out << '\t';
    write_optional(out, r.ent3);
    out << '\t';
    write_optional(out, r.valid_ppl);
    out << '\t' << r.seconds << '\n';
  }
}

}  // namespace negtrain
