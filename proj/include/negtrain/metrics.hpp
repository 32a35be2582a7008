#pragma once

// Response-diversity metrics. Responses are token sequences with the <eos>
// marker already removed; n-grams never span two responses.

#include <algorithm>
#include <cmath>
#include <deque>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "negtrain/common.hpp"

namespace negtrain {

// Share of the most frequent exact response.
template <class Token>
double max_ratio(const std::vector<std::vector<Token>>& responses) {
  if (responses.empty()) throw Error("max_ratio needs at least one response");
  std::map<std::vector<Token>, std::size_t> counts;
  std::size_t best = 0;
  for (const auto& r : responses) best = std::max(best, ++counts[r]);
  return static_cast<double>(best) / static_cast<double>(responses.size());
}

// Entropy (natural log) of the pooled n-gram distribution.
template <class Token>
double ent_n(const std::vector<std::vector<Token>>& responses, std::size_t n) {
  if (n < 1) throw Error("n-gram order must be >= 1");
  std::map<std::vector<Token>, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& r : responses) {
    for (std::size_t i = 0; i + n <= r.size(); ++i) {
      ++counts[std::vector<Token>(r.begin() + static_cast<std::ptrdiff_t>(i),
                                  r.begin() + static_cast<std::ptrdiff_t>(i + n))];
      ++total;
    }
  }
  if (total == 0) throw Error("no " + std::to_string(n) + "-grams in the response set");
  double h = 0.0;
  for (const auto& [gram, c] : counts) {
    const double r = static_cast<double>(c) / static_cast<double>(total);
    h -= r * std::log(r);
  }
  return h;
}

struct DiversityReport {
  std::size_t num_responses = 0;
  std::size_t num_distinct = 0;
  double max_ratio = 0.0;
  std::map<std::size_t, double> ent;  // n -> Ent-n; absent when no n-grams exist
};

template <class Token>
DiversityReport diversity_report(const std::vector<std::vector<Token>>& responses) {
  DiversityReport rep;
  rep.num_responses = responses.size();
  std::map<std::vector<Token>, std::size_t> distinct;
  for (const auto& r : responses) ++distinct[r];
  rep.num_distinct = distinct.size();
  rep.max_ratio = max_ratio(responses);
  for (std::size_t n = 1; n <= 3; ++n) {
    try {
      rep.ent[n] = ent_n(responses, n);
    } catch (const Error&) {
    }
  }
  return rep;
}

void write_diversity_report(std::ostream& out, const DiversityReport& report);

TokenSeq strip_eos(const TokenSeq& ids);
std::vector<TokenSeq> strip_eos(const std::vector<TokenSeq>& responses);

// Response counts over the current and the last (capacity - 1) mini-batches.
class FrequencyWindow {
 public:
  static constexpr std::size_t kDefaultCapacity = 201;

  explicit FrequencyWindow(std::size_t capacity = kDefaultCapacity);

  void push(const std::vector<TokenSeq>& batch_responses);
  double ratio(const TokenSeq& response) const;
  std::size_t count(const TokenSeq& response) const;
  std::size_t total() const { return total_; }
  std::size_t num_batches() const { return batches_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::map<TokenSeq, std::size_t>& counts() const { return counts_; }
  const std::deque<std::vector<TokenSeq>>& batches() const { return batches_; }

 private:
  std::size_t capacity_;
  std::deque<std::vector<TokenSeq>> batches_;
  std::map<TokenSeq, std::size_t> counts_;
  std::size_t total_ = 0;
};

}  // namespace negtrain
