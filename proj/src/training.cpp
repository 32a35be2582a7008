#include "negtrain/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "negtrain/params.hpp"
#include "negtrain/rng.hpp"

namespace negtrain {

namespace {

// Shared epoch loop. `accumulate(i, grads, scale, dropout_rng)` adds
// scale * d(sum log P)/dtheta for example i and returns its log-probs.
template <class Model, class Accumulate>
std::vector<EpochLog> run_sgd(Model& model, std::size_t num_examples, const TrainConfig& config,
                              const std::function<std::size_t(std::size_t)>& example_tokens, Accumulate&& accumulate,
                              const std::function<std::optional<double>()>& validate, const StepObserver& observer,
                              double dropout_rate) {
  config.validate();
  if (num_examples == 0) throw Error("training set is empty");
  std::vector<EpochLog> log;
  auto grads = zeros_like(model.params());
  for (std::size_t epoch = 1; epoch <= config.total_epochs(); ++epoch) {
    const double lr = learning_rate_for_epoch(config, epoch);
    Rng dropout_rng(derive_seed(config.seed, "dropout", epoch));
    BatchIterator it(num_examples, config.batch_size, derive_seed(config.seed, "train", epoch));
    double nll_sum = 0.0;
    std::size_t token_sum = 0;
    std::size_t step = 0;
    while (auto batch = it.next()) {
      std::size_t tokens = 0;
      for (std::size_t i : *batch) tokens += example_tokens(i);
      set_zero(grads);
      double batch_logp = 0.0;
      for (std::size_t i : *batch) {
        batch_logp += accumulate(i, grads, 1.0 / static_cast<double>(tokens), dropout_rate > 0.0 ? &dropout_rng : nullptr);
      }
      if (!std::isfinite(batch_logp) || !all_finite(grads)) {
        std::ostringstream msg;
        msg << "non-finite loss or gradient at epoch " << epoch << ", step " << step << " (batch NLL "
            << -batch_logp / static_cast<double>(tokens) << ")";
        throw NumericError(msg.str());
      }
      const double norm = clip_global_norm(grads, config.clip_norm);
      if (observer) observer({epoch, step, norm, std::sqrt(squared_norm(grads))});
      axpy(model.params(), lr, grads);
      nll_sum -= batch_logp;
      token_sum += tokens;
      ++step;
    }
    log.push_back({epoch, lr, nll_sum / static_cast<double>(token_sum), validate ? validate() : std::nullopt});
  }
  return log;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(start_lr > 0.0)) throw Error("start_lr must be > 0");
  if (!(clip_norm > 0.0)) throw Error("clip_norm must be > 0");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
}

double learning_rate_for_epoch(const TrainConfig& config, std::size_t epoch) {
  if (epoch <= config.epochs_fixed) return config.start_lr;
  return config.start_lr * std::ldexp(1.0, -static_cast<int>(epoch - config.epochs_fixed));
}

Perplexity perplexity(const Seq2Seq& model, const std::vector<DialoguePair>& pairs) {
  if (pairs.empty()) throw Error("perplexity needs a non-empty evaluation set");
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& p : pairs) {
    nll -= model.sequence_logprobs(p.input_ids, p.target_ids).total;
    tokens += p.target_ids.size();
  }
  const double mean = nll / static_cast<double>(tokens);
  return {std::exp(mean), mean, tokens};
}

Perplexity perplexity(const LanguageModel& model, const std::vector<TokenSeq>& sentences) {
  if (sentences.empty()) throw Error("perplexity needs a non-empty evaluation set");
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : sentences) {
    nll -= model.lm_logprobs(s).total;
    tokens += s.size();
  }
  const double mean = nll / static_cast<double>(tokens);
  return {std::exp(mean), mean, tokens};
}

std::vector<EpochLog> train_mle(Seq2Seq& model, const std::vector<DialoguePair>& pairs, const TrainConfig& config,
                                const std::vector<DialoguePair>* validation, const StepObserver& observer) {
  auto tokens = [&](std::size_t i) { return pairs[i].target_ids.size(); };
  auto accumulate = [&](std::size_t i, Seq2SeqParams& grads, double scale, Rng* dropout) {
    GradientRequest req;
    req.scale = scale;
    req.dropout_rng = dropout;
    return accumulate_gradient(model, pairs[i].input_ids, pairs[i].target_ids, &grads, req).total;
  };
  std::function<std::optional<double>()> validate;
  if (validation && !validation->empty()) validate = [&] { return std::optional(perplexity(model, *validation).ppl); };
  return run_sgd(model, pairs.size(), config, tokens, accumulate, validate, observer, model.config().dropout_rate);
}

std::vector<EpochLog> train_lm(LanguageModel& model, const std::vector<TokenSeq>& sentences, const TrainConfig& config,
                               const std::vector<TokenSeq>* validation, const StepObserver& observer) {
  auto tokens = [&](std::size_t i) { return sentences[i].size(); };
  auto accumulate = [&](std::size_t i, LanguageModelParams& grads, double scale, Rng* dropout) {
    GradientRequest req;
    req.scale = scale;
    req.dropout_rng = dropout;
    return accumulate_gradient(model, sentences[i], &grads, req).total;
  };
  std::function<std::optional<double>()> validate;
  if (validation && !validation->empty()) validate = [&] { return std::optional(perplexity(model, *validation).ppl); };
  return run_sgd(model, sentences.size(), config, tokens, accumulate, validate, observer, model.config().dropout_rate);
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write training log " + path.string());
  out << "epoch\tlr\ttrain_nll\tvalid_ppl\n" << std::setprecision(10);
  for (const auto& e : log) {
    out << e.epoch << '\t' << e.lr << '\t' << e.train_nll << '\t';
    if (e.valid_ppl) out << *e.valid_ppl;
    else out << "nan";
    out << '\n';
  }
}

}  // namespace negtrain
