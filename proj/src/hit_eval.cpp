#include "negtrain/hit_eval.hpp"

#include <atomic>
#include <exception>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "negtrain/rng.hpp"
#include "negtrain/training.hpp"

namespace negtrain {

namespace {

constexpr std::pair<HitCriterion, std::string_view> kNames[] = {
    {HitCriterion::OGreedy, "o-greedy"},
    {HitCriterion::OSampleAvg, "o-sample-avg"},
    {HitCriterion::OSampleMin, "o-sample-min"},
    {HitCriterion::IoSampleAvg, "io-sample-avg"},
    {HitCriterion::IoSampleMin, "io-sample-min"},
};

}  // namespace

std::string to_string(HitCriterion criterion) {
  for (const auto& [c, name] : kNames) {
    if (c == criterion) return std::string(name);
  }
  throw Error("unknown hit criterion");
}

HitCriterion parse_criterion(std::string_view name) {
  for (const auto& [c, n] : kNames) {
    if (n == name) return c;
  }
  throw Error("unknown hit criterion '" + std::string(name) + "'");
}

bool requires_lm(HitCriterion criterion) {
  return criterion == HitCriterion::IoSampleAvg || criterion == HitCriterion::IoSampleMin;
}

HitCriterion output_part(HitCriterion criterion) {
  switch (criterion) {
    case HitCriterion::IoSampleAvg: return HitCriterion::OSampleAvg;
    case HitCriterion::IoSampleMin: return HitCriterion::OSampleMin;
    default: return criterion;
  }
}

TriggerSearchConfig search_config_for(HitCriterion criterion, TriggerSearchConfig base) {
  base.lambda_in = requires_lm(criterion) ? 1.0 : 0.0;
  return base;
}

HitThresholds compute_thresholds(const Seq2Seq& model, const LanguageModel* lm,
                                 const std::vector<DialoguePair>& test_pairs) {
  HitThresholds t;
  t.t_out = -perplexity(model, test_pairs).mean_nll;
  if (lm) t.t_in = -perplexity(*lm, responses_of(test_pairs)).mean_nll;
  return t;
}

bool classify_scores(const HitEvidence& evidence, HitCriterion criterion, const HitThresholds& thresholds) {
  if (requires_lm(criterion)) {
    if (!thresholds.t_in || !evidence.input_lm_mean) throw Error(to_string(criterion) + " needs an LM score and T_in");
    if (!(*evidence.input_lm_mean > *thresholds.t_in)) return false;
  }
  const auto& lp = evidence.output_logprobs;
  switch (output_part(criterion)) {
    case HitCriterion::OGreedy: return evidence.greedy_match;
    case HitCriterion::OSampleAvg: {
      if (lp.empty()) return false;
      const double mean = std::accumulate(lp.begin(), lp.end(), 0.0) / static_cast<double>(lp.size());
      return mean > thresholds.t_out;
    }
    case HitCriterion::OSampleMin: {
      if (lp.empty()) return false;
      for (double v : lp) {
        if (!(v > thresholds.t_out)) return false;
      }
      return true;
    }
    default: break;
  }
  throw Error("unreachable hit criterion");
}

HitEvidence collect_evidence(const Seq2Seq& model, const LanguageModel* lm, const TokenSeq& input_ids,
                             const TokenSeq& target_ids, HitCriterion criterion, std::size_t max_len) {
  HitEvidence ev;
  ev.output_logprobs = model.sequence_logprobs(input_ids, target_ids).per_token;
  if (requires_lm(criterion)) {
    if (!lm) throw Error(to_string(criterion) + " needs a language model");
    ev.input_lm_mean = lm->lm_logprobs(input_ids).mean;
  } else if (lm) {
    ev.input_lm_mean = lm->lm_logprobs(input_ids).mean;
  }
  if (criterion == HitCriterion::OGreedy) ev.greedy_match = model.greedy_decode(input_ids, max_len) == target_ids;
  return ev;
}

bool classify_hit(const Seq2Seq& model, const LanguageModel* lm, const TokenSeq& input_ids,
                  const TokenSeq& target_ids, HitCriterion criterion, const HitThresholds& thresholds,
                  std::size_t max_len) {
  return classify_scores(collect_evidence(model, lm, input_ids, target_ids, criterion, max_len), criterion,
                         thresholds);
}

EncodedTarget encode_target_text(const Vocabulary& vocab, const std::string& text, std::size_t max_out) {
  EncodedTarget t;
  t.text = text;
  for (const auto& tok : preprocess_utterance(text)) {
    const TokenId id = vocab.index_of(tok);
    if (id == kUnk && tok != vocab.token(kUnk)) t.has_oov = true;
    t.ids.push_back(id);
  }
  t.ids.push_back(kEos);
  t.too_long = t.ids.size() > max_out;
  return t;
}

HitRateResult hit_rate(const Seq2Seq& model, const LanguageModel* lm, const std::vector<EncodedTarget>& targets,
                       HitCriterion criterion, const HitThresholds& thresholds, const TriggerSearchConfig& search,
                       std::size_t max_out, std::size_t jobs) {
  if (targets.empty()) throw Error("hit_rate needs a non-empty target list");
  if (requires_lm(criterion) && (!lm || !thresholds.t_in)) throw Error(to_string(criterion) + " needs an LM and T_in");
  if (jobs < 1) throw Error("jobs must be >= 1");
  HitRateResult res;
  res.criterion = criterion;
  res.num_targets = targets.size();
  res.reports.resize(targets.size());

  auto run = [&](std::size_t i) {
    HitReport& rep = res.reports[i];
    rep.target = targets[i];
    if (rep.target.too_long) return;
    TriggerSearchConfig cfg = search;
    cfg.seed = derive_seed(search.seed, "target", i);
    rep.trigger = gibbs_enum(model, lm, rep.target.ids, cfg);
    rep.evidence = collect_evidence(model, lm, rep.trigger->trigger_ids, rep.target.ids, criterion, max_out);
    rep.hit = classify_scores(rep.evidence, criterion, thresholds);
  };

  jobs = std::min(jobs, targets.size());
  if (jobs == 1) {
    for (std::size_t i = 0; i < targets.size(); ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < targets.size(); i = next++) run(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  for (const auto& rep : res.reports) res.hits += rep.hit;
  res.rate = static_cast<double>(res.hits) / static_cast<double>(res.num_targets);
  return res;
}

void write_attack_report(std::ostream& out, const Vocabulary& vocab, const std::vector<HitReport>& reports) {
  out << "target\ttrigger\tobjective\tnll_term\tlm_term\thit\tflags\n";
  out << std::setprecision(17);
  for (const auto& r : reports) {
    out << r.target.text << '\t';
    if (r.trigger) {
      out << join_tokens(vocab.decode(r.trigger->trigger_ids)) << '\t' << r.trigger->objective_value << '\t'
          << r.trigger->nll_term << '\t' << r.trigger->lm_term;
    } else {
      out << "\tnan\tnan\tnan";
    }
    out << '\t' << (r.hit ? 1 : 0) << '\t';
    std::string flags;
    if (r.target.has_oov) flags += "oov";
    if (r.target.too_long) flags += flags.empty() ? "too_long" : ",too_long";
    out << (flags.empty() ? "-" : flags) << '\n';
  }
}

std::string summary_line(const HitRateResult& result) {
  std::ostringstream s;
  s << "#summary criterion=" << to_string(result.criterion) << " targets=" << result.num_targets
    << " hits=" << result.hits << " hit_rate=" << std::setprecision(6) << result.rate;
  return s.str();
}

}  // namespace negtrain
