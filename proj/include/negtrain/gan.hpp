#pragma once

// Adversarial baseline: a CNN discriminator over (input, response) pairs and
// REINFORCE generator updates interleaved with teacher forcing.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "negtrain/checkpoint.hpp"
#include "negtrain/corpus.hpp"
#include "negtrain/seq2seq.hpp"

namespace negtrain {

struct DiscriminatorConfig {
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 300;
  std::size_t filters = 300;  // per window size
  std::vector<std::size_t> windows = {3, 4, 5, 6};
  std::size_t highway_layers = 3;
  std::size_t hidden_dim = 2000;

  void validate() const;
  std::size_t min_length() const;  // shorter sequences are padded with <pad>
  std::size_t feature_dim() const { return filters * windows.size(); }
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

struct HighwayLayer {
  Mat transform_weights;  // D x D
  Vec transform_bias;
  Mat hidden_weights;  // D x D
  Vec hidden_bias;
};

struct DiscriminatorParams {
  Mat embedding;               // E x V
  std::vector<Mat> conv_weights;  // per window w: F x (E*w)
  std::vector<Vec> conv_bias;     // per window: F
  Mat input_weights;           // D x 2*F*|windows|, over [x_rep; y_rep]
  Vec input_bias;
  std::vector<HighwayLayer> highway;
  Mat output_weights;  // 1 x D
  Vec output_bias;     // 1

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("disc.embedding"), self.embedding);
    for (std::size_t k = 0; k < self.conv_weights.size(); ++k) {
      f("disc.conv" + std::to_string(k) + ".weights", self.conv_weights[k]);
      f("disc.conv" + std::to_string(k) + ".bias", self.conv_bias[k]);
    }
    f(std::string("disc.input.weights"), self.input_weights);
    f(std::string("disc.input.bias"), self.input_bias);
    for (std::size_t l = 0; l < self.highway.size(); ++l) {
      const std::string p = "disc.highway" + std::to_string(l);
      f(p + ".transform.weights", self.highway[l].transform_weights);
      f(p + ".transform.bias", self.highway[l].transform_bias);
      f(p + ".hidden.weights", self.highway[l].hidden_weights);
      f(p + ".hidden.bias", self.highway[l].hidden_bias);
    }
    f(std::string("disc.output.weights"), self.output_weights);
    f(std::string("disc.output.bias"), self.output_bias);
  }
  template <class F> void for_each(F&& f) { visit(*this, f); }
  template <class F> void for_each(F&& f) const { visit(*this, f); }
};

class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig config);  // all parameters zero
  static Discriminator initialized(const DiscriminatorConfig& config, std::uint64_t seed, double radius = 0.1);

  const DiscriminatorConfig& config() const { return config_; }
  DiscriminatorParams& params() { return params_; }
  const DiscriminatorParams& params() const { return params_; }

  // Max-over-time convolution features of one sequence.
  Vec encode(const TokenSeq& ids) const;

  // Probability that y is a real response to x; always in (0, 1).
  double discriminate(const TokenSeq& input_ids, const TokenSeq& response_ids) const;
  double logit(const TokenSeq& input_ids, const TokenSeq& response_ids) const;

  // Adds scale * d(logit)/dtheta into *grads and returns the logit.
  double accumulate_logit_gradient(const TokenSeq& input_ids, const TokenSeq& response_ids,
                                   DiscriminatorParams& grads, double scale) const;
  // Same, with the scale computed from the forward logit.
  double accumulate_logit_gradient(const TokenSeq& input_ids, const TokenSeq& response_ids,
                                   DiscriminatorParams& grads, const std::function<double(double)>& scale_of) const;

 private:
  DiscriminatorConfig config_;
  DiscriminatorParams params_;
};

struct GanConfig {
  double alpha_g = 0.001;
  double alpha_d = 0.01;
  double teacher_forcing_lr = 0.1;
  std::size_t d_steps_per_g = 3;
  bool teacher_forcing = true;
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  std::size_t max_decode_len = 20;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;

  void validate() const;
};

struct GanEpoch {
  std::size_t epoch = 0;
  std::size_t d_updates = 0;
  std::size_t g_updates = 0;
  std::size_t tf_updates = 0;
  double d_loss = 0.0;  // mean -[log D(real) + log(1 - D(fake))], probabilities clamped at 1e-7
  double disc_accuracy = 0.0;
  std::optional<double> valid_ppl;
  double seconds = 0.0;
};

// Per mini-batch: d_steps_per_g discriminator ascents on
// log D(x, y_data) + log(1 - D(x, y_sample)), then one generator step
// theta_G <- theta_G - alpha_G * log(1 - D(x, y)) * grad log G(y | x) with one
// sampled y per input, then one teacher-forcing MLE step.
std::vector<GanEpoch> gan_train(Seq2Seq& generator, Discriminator& disc, const std::vector<DialoguePair>& pairs,
                                const GanConfig& config, const std::vector<DialoguePair>* validation = nullptr);

// Fraction of correct decisions over real pairs and one generator sample per input.
double evaluate_discriminator(const Discriminator& disc, const Seq2Seq& generator,
                              const std::vector<DialoguePair>& pairs, std::size_t max_len, std::uint64_t seed);

Checkpoint to_checkpoint(const Discriminator& disc, nlohmann::json metadata = nlohmann::json::object());
Discriminator discriminator_from_checkpoint(const Checkpoint& checkpoint);

void write_gan_log(const std::filesystem::path& path, const std::vector<GanEpoch>& log);

}  // namespace negtrain
