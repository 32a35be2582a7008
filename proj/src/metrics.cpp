#include "negtrain/metrics.hpp"

#include <iomanip>
#include <ostream>

namespace negtrain {

void write_diversity_report(std::ostream& out, const DiversityReport& report) {
  out << "# ngrams=within-response eos=excluded log=natural\n";
  out << "num_responses\tnum_distinct\tmax_ratio\tent1\tent2\tent3\n";
  out << std::setprecision(17) << report.num_responses << '\t' << report.num_distinct << '\t' << report.max_ratio;
  for (std::size_t n = 1; n <= 3; ++n) {
    out << '\t';
    if (auto it = report.ent.find(n); it != report.ent.end()) out << it->second;
    else out << "nan";
  }
  out << '\n';
}

TokenSeq strip_eos(const TokenSeq& ids) {
  TokenSeq out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    out.push_back(id);
  }
  return out;
}

std::vector<TokenSeq> strip_eos(const std::vector<TokenSeq>& responses) {
  std::vector<TokenSeq> out;
  out.reserve(responses.size());
  for (const auto& r : responses) out.push_back(strip_eos(r));
  return out;
}

FrequencyWindow::FrequencyWindow(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ < 1) throw Error("frequency window capacity must be >= 1");
}

void FrequencyWindow::push(const std::vector<TokenSeq>& batch_responses) {
  if (batch_responses.empty()) throw Error("cannot push an empty batch into the frequency window");
  batches_.push_back(batch_responses);
  for (const auto& r : batch_responses) ++counts_[r];
  total_ += batch_responses.size();
  while (batches_.size() > capacity_) {
    for (const auto& r : batches_.front()) {
      auto it = counts_.find(r);
      if (--it->second == 0) counts_.erase(it);
    }
    total_ -= batches_.front().size();
    batches_.pop_front();
  }
}

std::size_t FrequencyWindow::count(const TokenSeq& response) const {
  auto it = counts_.find(response);
  return it == counts_.end() ? 0 : it->second;
}

double FrequencyWindow::ratio(const TokenSeq& response) const {
  if (total_ == 0) return 0.0;
  return static_cast<double>(count(response)) / static_cast<double>(total_);
}

}  // namespace negtrain
