#include "negtrain/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace negtrain {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'N', 'E', 'G', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("checkpoint is truncated");
  return v;
}

}  // namespace

const Mat& Checkpoint::array(const std::string& name) const {
  for (const auto& [n, m] : arrays) {
    if (n == name) return m;
  }
  throw Error("checkpoint has no array '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["kind"] = ckpt.kind;
  header["config"] = ckpt.config;
  header["metadata"] = ckpt.metadata;
  header["arrays"] = nlohmann::json::array();
  for (const auto& [name, m] : ckpt.arrays) {
    header["arrays"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : ckpt.arrays) {
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw Error(path.string() + " is not a checkpoint file");
  if (read_pod<std::uint32_t>(in) != kVersion) throw Error("unsupported checkpoint version");
  const auto header_size = read_pod<std::uint64_t>(in);
  std::string text(header_size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_size));
  if (!in) throw Error("checkpoint header is truncated");

  const auto header = nlohmann::json::parse(text);
  Checkpoint ckpt;
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.config = header.at("config");
  ckpt.metadata = header.at("metadata");
  for (const auto& entry : header.at("arrays")) {
    Mat m(entry.at("rows").get<Eigen::Index>(), entry.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw Error("checkpoint payload is truncated");
    ckpt.arrays.emplace_back(entry.at("name").get<std::string>(), std::move(m));
  }
  return ckpt;
}

Checkpoint to_checkpoint(const Seq2Seq& model, nlohmann::json metadata) {
  Checkpoint ckpt;
  ckpt.kind = "seq2seq";
  const auto& c = model.config();
  ckpt.config = {{"vocab_size", c.vocab_size},
                 {"embedding_dim", c.embedding_dim},
                 {"hidden_dim", c.hidden_dim},
                 {"num_layers", c.num_layers},
                 {"dropout_rate", c.dropout_rate}};
  ckpt.metadata = std::move(metadata);
  store_params(ckpt, model.params());
  return ckpt;
}

Seq2Seq seq2seq_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "seq2seq") throw Error("expected a seq2seq checkpoint, found '" + ckpt.kind + "'");
  Seq2SeqConfig c;
  c.vocab_size = ckpt.config.at("vocab_size").get<std::size_t>();
  c.embedding_dim = ckpt.config.at("embedding_dim").get<std::size_t>();
  c.hidden_dim = ckpt.config.at("hidden_dim").get<std::size_t>();
  c.num_layers = ckpt.config.at("num_layers").get<std::size_t>();
  c.dropout_rate = ckpt.config.at("dropout_rate").get<double>();
  Seq2Seq model(c);
  restore_params(ckpt, model.params());
  return model;
}

Checkpoint to_checkpoint(const LanguageModel& model, nlohmann::json metadata) {
  Checkpoint ckpt;
  ckpt.kind = "lm";
  const auto& c = model.config();
  ckpt.config = {{"vocab_size", c.vocab_size},
                 {"embedding_dim", c.embedding_dim},
                 {"hidden_dim", c.hidden_dim},
                 {"dropout_rate", c.dropout_rate}};
  ckpt.metadata = std::move(metadata);
  store_params(ckpt, model.params());
  return ckpt;
}

LanguageModel language_model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "lm") throw Error("expected a language model checkpoint, found '" + ckpt.kind + "'");
  LanguageModelConfig c;
  c.vocab_size = ckpt.config.at("vocab_size").get<std::size_t>();
  c.embedding_dim = ckpt.config.at("embedding_dim").get<std::size_t>();
  c.hidden_dim = ckpt.config.at("hidden_dim").get<std::size_t>();
  c.dropout_rate = ckpt.config.at("dropout_rate").get<double>();
  LanguageModel model(c);
  restore_params(ckpt, model.params());
  return model;
}

}  // namespace negtrain
