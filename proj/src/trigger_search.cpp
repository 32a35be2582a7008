#include "negtrain/trigger_search.hpp"

#include <algorithm>
#include <numeric>

#include "negtrain/rng.hpp"

namespace negtrain {

namespace {

std::vector<TokenId> valid_tokens(std::size_t vocab_size) {
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < vocab_size; ++i) {
    if (is_valid_trigger_token(static_cast<TokenId>(i))) ids.push_back(static_cast<TokenId>(i));
  }
  return ids;
}

// Top-k entries of row, highest first, ties by lower index.
std::vector<TokenId> top_candidates(const Eigen::Ref<const Eigen::RowVectorXd>& row, std::vector<TokenId> pool,
                                    std::size_t k) {
  k = std::min(k, pool.size());
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end(), [&](TokenId a, TokenId b) {
    if (row[a] != row[b]) return row[a] > row[b];
    return a < b;
  });
  pool.resize(k);
  return pool;
}

}  // namespace

void TriggerSearchConfig::validate(std::size_t vocab_size) const {
  if (max_sweeps < 1) throw Error("max_sweeps must be >= 1");
  if (candidates < 1 || candidates > vocab_size) throw Error("candidates must be in [1, |V|]");
  if (restarts < 1) throw Error("restarts must be >= 1");
  if (!(lambda_in >= 0.0)) throw Error("lambda_in must be >= 0");
  if (input_length < 1) throw Error("input_length must be >= 1");
}

bool is_valid_trigger_token(TokenId id) { return id != kPad && id != kBos && id != kEos; }

ObjectiveValue objective(const Seq2Seq& model, const LanguageModel* lm, const TokenSeq& input_ids,
                         const TokenSeq& target_ids, double lambda_in) {
  ObjectiveValue out;
  out.nll_term = -model.sequence_logprobs(input_ids, target_ids).mean;
  if (lm) {
    out.lm_term = -lm->lm_logprobs(input_ids).mean;
  } else if (lambda_in != 0.0) {
    throw Error("objective with lambda_in > 0 needs a language model");
  }
  out.value = out.nll_term + lambda_in * out.lm_term;
  return out;
}

TokenSeq lm_sample_input(const LanguageModel& lm, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error("sample length must be >= 1");
  Rng rng(seed);
  auto state = lm.start();
  TokenSeq out;
  out.reserve(n);
  TokenId previous = kBos;
  std::vector<double> probs(lm.vocab_size());
  while (out.size() < n) {
    const Vec lp = lm.step(state, previous);
    double mass = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      probs[j] = is_valid_trigger_token(static_cast<TokenId>(j)) ? std::exp(lp[static_cast<Eigen::Index>(j)]) : 0.0;
      mass += probs[j];
    }
    if (!(mass > 0.0)) {
      for (std::size_t j = 0; j < probs.size(); ++j) probs[j] = is_valid_trigger_token(static_cast<TokenId>(j)) ? 1.0 : 0.0;
    }
    previous = static_cast<TokenId>(rng.categorical(probs));
    out.push_back(previous);
  }
  return out;
}

TokenSeq random_input(std::size_t vocab_size, std::size_t n, std::uint64_t seed) {
  const auto pool = valid_tokens(vocab_size);
  if (pool.empty()) throw Error("vocabulary has no valid trigger tokens");
  Rng rng(seed);
  TokenSeq out(n);
  for (auto& tok : out) tok = pool[rng.below(pool.size())];
  return out;
}

TriggerResult gibbs_enum(const Seq2Seq& model, const LanguageModel* lm, const TokenSeq& target_ids,
                         const TriggerSearchConfig& config, SearchTrace* trace) {
  const std::size_t V = model.vocab_size();
  config.validate(V);
  if (target_ids.empty() || target_ids.back() != kEos) throw Error("trigger search target must end with <eos>");
  const bool use_lm = config.lambda_in > 0.0;
  if (use_lm && !lm) throw Error("lambda_in > 0 needs a language model");
  const std::size_t n = config.input_length;
  const auto pool = valid_tokens(V);

  // The LM term only influences the search when lambda_in > 0.
  auto evaluate = [&](const TokenSeq& x) { return objective(model, use_lm ? lm : nullptr, x, target_ids, config.lambda_in).value; };

  if (trace) *trace = SearchTrace{};
  TriggerResult best;
  bool have_best = false;
  for (std::size_t r = 0; r < config.restarts; ++r) {
    const std::uint64_t seed = derive_seed(config.seed, "gibbs-restart", r);
    TokenSeq x = use_lm ? lm_sample_input(*lm, n, seed) : random_input(V, n, seed);
    double current = evaluate(x);
    SearchTrace::Restart rec;
    if (trace) {
      rec.initial = x;
      rec.initial_objective = current;
    }

    std::size_t sweeps = 0;
    bool converged = false;
    for (std::size_t s = 0; s < config.max_sweeps; ++s) {
      ++sweeps;
      bool improved = false;
      for (std::size_t t = 0; t < n; ++t) {
        Mat grad = model.input_onehot_gradient(x, target_ids);
        if (use_lm) grad += config.lambda_in * lm->input_onehot_gradient(x);
        const auto cands = top_candidates(grad.row(static_cast<Eigen::Index>(t)), pool, config.candidates);
        if (trace) rec.enumerations.push_back({s, t, cands});
        for (TokenId c : cands) {
          if (c == x[t]) continue;  // value already known
          TokenSeq trial = x;
          trial[t] = c;
          const double value = evaluate(trial);
          if (trace) ++trace->candidate_evaluations;
          if (value < current) {
            x = std::move(trial);
            current = value;
            improved = true;
            if (trace) rec.accepted.push_back(current);
          }
        }
      }
      if (!improved) {
        converged = true;
        break;
      }
    }

    if (trace) {
      rec.sweeps = sweeps;
      rec.converged = converged;
      rec.final = x;
      rec.final_objective = current;
      trace->restarts.push_back(std::move(rec));
    }
    if (!have_best || current < best.objective_value) {
      have_best = true;
      best.trigger_ids = x;
      best.objective_value = current;
      best.sweeps_used = sweeps;
      best.restart_index = r;
    }
  }

  const ObjectiveValue parts = objective(model, lm, best.trigger_ids, target_ids, config.lambda_in);
  best.objective_value = parts.value;
  best.nll_term = parts.nll_term;
  best.lm_term = parts.lm_term;
  return best;
}

}  // namespace negtrain
