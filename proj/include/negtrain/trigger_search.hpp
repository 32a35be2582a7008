#pragma once

#include <cstdint>
#include <vector>

#include "negtrain/common.hpp"
#include "negtrain/language_model.hpp"
#include "negtrain/seq2seq.hpp"

namespace negtrain {

struct TriggerSearchConfig {
  std::size_t max_sweeps = 5;    // T
  std::size_t candidates = 100;  // G
  std::size_t restarts = 5;
  double lambda_in = 0.0;  // weight of the LM regularizer on the trigger
  std::size_t input_length = 15;
  std::uint64_t seed = 0;

  void validate(std::size_t vocab_size) const;
};

// Objective L(x; y) = nll_term + lambda_in * lm_term with
//   nll_term = -(1/m) sum_t log P(y_t | y_<t, x)
//   lm_term  = -(1/n) sum_t log P_LM(x_t | x_<t)
struct ObjectiveValue {
  double value = 0.0;
  double nll_term = 0.0;
  double lm_term = 0.0;
};

// lm may be null when lambda_in == 0; lm_term is then reported as 0.
ObjectiveValue objective(const Seq2Seq& model, const LanguageModel* lm, const TokenSeq& input_ids,
                         const TokenSeq& target_ids, double lambda_in);

struct TriggerResult {
  TokenSeq trigger_ids;
  double objective_value = 0.0;
  double nll_term = 0.0;
  double lm_term = 0.0;
  std::size_t sweeps_used = 0;
  std::size_t restart_index = 0;
};

// Optional record of everything a search did, for diagnostics and tests.
struct SearchTrace {
  struct Enumeration {
    std::size_t sweep = 0;
    std::size_t position = 0;
    std::vector<TokenId> candidates;
  };
  struct Restart {
    TokenSeq initial;
    double initial_objective = 0.0;
    std::vector<double> accepted;  // objective after every accepted swap
    std::vector<Enumeration> enumerations;
    std::size_t sweeps = 0;
    bool converged = false;  // stopped because a sweep brought no improvement
    TokenSeq final;
    double final_objective = 0.0;
  };
  std::vector<Restart> restarts;
  std::size_t candidate_evaluations = 0;
};

// Trigger inputs never contain <pad>, <bos> or <eos>.
bool is_valid_trigger_token(TokenId id);

// Gradient-guided coordinate search for an input that makes `target_ids`
// likely. Each restart sweeps the positions left to right, ranks the
// vocabulary by the gradient of -L with respect to the one-hot slot, tries
// the top `candidates` substitutions and keeps strict improvements.
TriggerResult gibbs_enum(const Seq2Seq& model, const LanguageModel* lm, const TokenSeq& target_ids,
                         const TriggerSearchConfig& config, SearchTrace* trace = nullptr);

// Ancestral LM sample of exactly n valid trigger tokens; special tokens are
// excluded and the remaining probabilities renormalized.
TokenSeq lm_sample_input(const LanguageModel& lm, std::size_t n, std::uint64_t seed);

// Uniformly random valid trigger of length n.
TokenSeq random_input(std::size_t vocab_size, std::size_t n, std::uint64_t seed);

}  // namespace negtrain
