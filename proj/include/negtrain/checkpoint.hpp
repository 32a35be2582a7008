#pragma once

// Self-describing parameter container:
//   "NEGTCKPT" | u32 version | u64 header bytes | JSON header | float64 payload
// The JSON header records the model kind, its configuration, free-form
// metadata and the name/shape of every array; the payload holds the arrays in
// header order, column-major, little-endian IEEE-754 doubles.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "negtrain/common.hpp"
#include "negtrain/language_model.hpp"
#include "negtrain/seq2seq.hpp"

namespace negtrain {

struct Checkpoint {
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Mat>> arrays;

  const Mat& array(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <class P>
void store_params(Checkpoint& ckpt, const P& params) {
  params.for_each([&](const std::string& name, const auto& m) { ckpt.arrays.emplace_back(name, Mat(m)); });
}

// Copies arrays into params; names and shapes must match exactly.
template <class P>
void restore_params(const Checkpoint& ckpt, P& params) {
  std::size_t k = 0;
  params.for_each([&](const std::string& name, auto& m) {
    if (k >= ckpt.arrays.size() || ckpt.arrays[k].first != name) {
      throw Error("checkpoint array " + std::to_string(k) + " is not '" + name + "'");
    }
    const Mat& src = ckpt.arrays[k].second;
    if (src.rows() != m.rows() || src.cols() != m.cols()) throw Error("checkpoint array '" + name + "' has wrong shape");
    m = src;
    ++k;
  });
  if (k != ckpt.arrays.size()) throw Error("checkpoint has unexpected extra arrays");
}

Checkpoint to_checkpoint(const Seq2Seq& model, nlohmann::json metadata = nlohmann::json::object());
Seq2Seq seq2seq_from_checkpoint(const Checkpoint& checkpoint);

Checkpoint to_checkpoint(const LanguageModel& model, nlohmann::json metadata = nlohmann::json::object());
LanguageModel language_model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace negtrain
