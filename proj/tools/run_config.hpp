#pragma once

// Run configuration for the command-line tool. Config files are flat
// "key = value" lines with dotted section prefixes and '#' comments:
//
//   seed = 7
//   model.hidden_dim = 64
//   search.candidates = 50
//   malicious.fwa_words = <eos> you i me are to do

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "negtrain/corpus.hpp"
#include "negtrain/gan.hpp"
#include "negtrain/hit_eval.hpp"
#include "negtrain/language_model.hpp"
#include "negtrain/negative_training.hpp"
#include "negtrain/seq2seq.hpp"
#include "negtrain/training.hpp"
#include "negtrain/trigger_search.hpp"

namespace negtrain::cli {

enum class DecodeMode { Greedy, Sample, Mmi };
DecodeMode parse_decode_mode(const std::string& name);
std::string to_string(DecodeMode mode);

struct RunConfig {
  std::uint64_t seed = 0;
  CorpusConfig corpus;
  Seq2SeqConfig model;  // vocab_size comes from the vocabulary file
  double init_radius = 0.1;
  LanguageModelConfig lm;
  TrainConfig train;
  TrainConfig lm_train;
  TriggerSearchConfig search;
  std::size_t jobs = 1;
  HitCriterion criterion = HitCriterion::OSampleMin;
  std::optional<double> t_out;  // overrides the test-set threshold
  std::optional<double> t_in;
  NegTrainConfig malicious = NegTrainConfig::malicious_defaults();
  NegTrainConfig frequent = NegTrainConfig::frequent_defaults();
  DecodeMode decode_mode = DecodeMode::Greedy;
  std::size_t decode_max_len = 20;
  double mmi_lambda = 0.5;
  std::size_t mmi_gamma = 5;
  GanConfig gan;
  DiscriminatorConfig disc;

  RunConfig();

  // Sets one dotted key; throws Error on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  std::vector<std::string> keys() const;

  // Every key with its current value, in key order.
  std::map<std::string, std::string> entries() const;
};

// Parses config text into key/value pairs. Errors name the offending line.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

void apply_config(RunConfig& config, const std::map<std::string, std::string>& values);

}  // namespace negtrain::cli
