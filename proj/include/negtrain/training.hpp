#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "negtrain/corpus.hpp"
#include "negtrain/language_model.hpp"
#include "negtrain/seq2seq.hpp"

namespace negtrain {

// Plain SGD: start_lr for epochs_fixed epochs, then halved every epoch for
// epochs_halving more.
struct TrainConfig {
  double start_lr = 1.0;
  std::size_t epochs_fixed = 10;
  std::size_t epochs_halving = 10;
  std::size_t batch_size = 64;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t total_epochs() const { return epochs_fixed + epochs_halving; }
};

// epoch is 1-based.
double learning_rate_for_epoch(const TrainConfig& config, std::size_t epoch);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_nll = 0.0;  // token-weighted mean over the epoch
  std::optional<double> valid_ppl;
};

struct StepInfo {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double grad_norm = 0.0;     // before clipping
  double applied_norm = 0.0;  // after clipping
};
using StepObserver = std::function<void(const StepInfo&)>;

struct Perplexity {
  double ppl = 0.0;
  double mean_nll = 0.0;
  std::size_t tokens = 0;
};

Perplexity perplexity(const Seq2Seq& model, const std::vector<DialoguePair>& pairs);
Perplexity perplexity(const LanguageModel& model, const std::vector<TokenSeq>& sentences);

// Minimizes the per-token NLL of the targets. Throws NumericError on NaN.
std::vector<EpochLog> train_mle(Seq2Seq& model, const std::vector<DialoguePair>& pairs, const TrainConfig& config,
                                const std::vector<DialoguePair>* validation = nullptr,
                                const StepObserver& observer = {});

std::vector<EpochLog> train_lm(LanguageModel& model, const std::vector<TokenSeq>& sentences,
                               const TrainConfig& config, const std::vector<TokenSeq>* validation = nullptr,
                               const StepObserver& observer = {});

// Tab-separated: epoch, lr, train_nll, valid_ppl ("nan" when absent).
void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace negtrain
