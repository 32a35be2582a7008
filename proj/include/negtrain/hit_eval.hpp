#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "negtrain/corpus.hpp"
#include "negtrain/language_model.hpp"
#include "negtrain/seq2seq.hpp"
#include "negtrain/trigger_search.hpp"

namespace negtrain {

enum class HitCriterion { OGreedy, OSampleAvg, OSampleMin, IoSampleAvg, IoSampleMin };

std::string to_string(HitCriterion criterion);
HitCriterion parse_criterion(std::string_view name);
bool requires_lm(HitCriterion criterion);

// The output-only criterion that an io criterion extends (identity for o kinds).
HitCriterion output_part(HitCriterion criterion);

// Search settings matching a criterion: lambda_in = 1 for io kinds, 0 otherwise.
TriggerSearchConfig search_config_for(HitCriterion criterion, TriggerSearchConfig base);

struct HitThresholds {
  double t_out = 0.0;           // mean per-token log-likelihood of the seq2seq model on test data
  std::optional<double> t_in;  // same for the LM on the test responses
};

HitThresholds compute_thresholds(const Seq2Seq& model, const LanguageModel* lm,
                                 const std::vector<DialoguePair>& test_pairs);

// Everything a criterion looks at for one (x, y).
struct HitEvidence {
  std::vector<double> output_logprobs;  // log P(y_t | y_<t, x), <eos> included
  std::optional<double> input_lm_mean;  // mean LM log-prob of x
  bool greedy_match = false;
};

// Pure decision rule; all comparisons are strict.
bool classify_scores(const HitEvidence& evidence, HitCriterion criterion, const HitThresholds& thresholds);

HitEvidence collect_evidence(const Seq2Seq& model, const LanguageModel* lm, const TokenSeq& input_ids,
                             const TokenSeq& target_ids, HitCriterion criterion, std::size_t max_len);

bool classify_hit(const Seq2Seq& model, const LanguageModel* lm, const TokenSeq& input_ids,
                  const TokenSeq& target_ids, HitCriterion criterion, const HitThresholds& thresholds,
                  std::size_t max_len);

struct EncodedTarget {
  std::string text;
  TokenSeq ids;  // ends with <eos>
  bool has_oov = false;
  bool too_long = false;
};

// Targets are preprocessed like corpus utterances; unknown words become <unk>.
EncodedTarget encode_target_text(const Vocabulary& vocab, const std::string& text, std::size_t max_out);

struct HitReport {
  EncodedTarget target;
  std::optional<TriggerResult> trigger;  // absent for rejected targets
  HitEvidence evidence;
  bool hit = false;
};

struct HitRateResult {
  HitCriterion criterion = HitCriterion::OSampleMin;
  std::size_t num_targets = 0;
  std::size_t hits = 0;
  double rate = 0.0;
  std::vector<HitReport> reports;
};

// Runs gibbs_enum for every target (seeded per target index) and classifies
// the best trigger. Rejected targets count as misses. Targets are spread over
// `jobs` threads; the result does not depend on the thread count.
HitRateResult hit_rate(const Seq2Seq& model, const LanguageModel* lm, const std::vector<EncodedTarget>& targets,
                       HitCriterion criterion, const HitThresholds& thresholds, const TriggerSearchConfig& search,
                       std::size_t max_out, std::size_t jobs = 1);

// Tab-separated, one line per target:
//   target  trigger  objective  nll_term  lm_term  hit  flags
void write_attack_report(std::ostream& out, const Vocabulary& vocab, const std::vector<HitReport>& reports);
std::string summary_line(const HitRateResult& result);

}  // namespace negtrain
