#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace negtrain::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string w;
  for (char c : s) {
    if (c == ' ' || c == ',' || c == '\t') {
      if (!w.empty()) out.push_back(w);
      w.clear();
    } else {
      w += c;
    }
  }
  if (!w.empty()) out.push_back(w);
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto s = trim(text);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw Error("config key '" + key + "': cannot parse '" + text + "'");
  }
  return v;
}

template <class T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Binding {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

class Table {
 public:
  template <class T>
  void bind(const std::string& key, T& ref) {
    Binding b;
    if constexpr (std::is_same_v<T, bool>) {
      b.set = [&ref, key](const std::string& v) {
        const auto s = trim(v);
        if (s == "true" || s == "1") ref = true;
        else if (s == "false" || s == "0") ref = false;
        else throw Error("config key '" + key + "': expected true or false, got '" + v + "'");
      };
      b.get = [&ref] { return std::string(ref ? "true" : "false"); };
    } else if constexpr (std::is_arithmetic_v<T>) {
      b.set = [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); };
      b.get = [&ref] { return format_number(ref); };
    } else if constexpr (std::is_same_v<T, std::optional<double>>) {
      b.set = [&ref, key](const std::string& v) {
        if (trim(v) == "none") ref.reset();
        else ref = parse_number<double>(key, v);
      };
      b.get = [&ref] { return ref ? format_number(*ref) : std::string("none"); };
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      b.set = [&ref](const std::string& v) { ref = split_words(v); };
      b.get = [&ref] {
        std::string out;
        for (const auto& w : ref) out += (out.empty() ? "" : " ") + w;
        return out;
      };
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      b.set = [&ref, key](const std::string& v) {
        ref.clear();
        for (const auto& w : split_words(v)) ref.push_back(parse_number<std::size_t>(key, w));
      };
      b.get = [&ref] {
        std::string out;
        for (auto w : ref) out += (out.empty() ? "" : " ") + format_number(w);
        return out;
      };
    } else if constexpr (std::is_same_v<T, HitCriterion>) {
      b.set = [&ref](const std::string& v) { ref = parse_criterion(trim(v)); };
      b.get = [&ref] { return to_string(ref); };
    } else if constexpr (std::is_same_v<T, DecodeMode>) {
      b.set = [&ref](const std::string& v) { ref = parse_decode_mode(trim(v)); };
      b.get = [&ref] { return to_string(ref); };
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
    entries_[key] = std::move(b);
  }

  const Binding& at(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw Error("unknown config key '" + key + "'");
    return it->second;
  }
  const std::map<std::string, Binding>& entries() const { return entries_; }

 private:
  std::map<std::string, Binding> entries_;
};

void bind_train(Table& t, const std::string& p, TrainConfig& c) {
  t.bind(p + ".start_lr", c.start_lr);
  t.bind(p + ".epochs_fixed", c.epochs_fixed);
  t.bind(p + ".epochs_halving", c.epochs_halving);
  t.bind(p + ".batch_size", c.batch_size);
  t.bind(p + ".clip_norm", c.clip_norm);
}

void bind_negtrain(Table& t, const std::string& p, NegTrainConfig& c) {
  t.bind(p + ".lambda_pos", c.lambda_pos);
  t.bind(p + ".lr", c.lr);
  t.bind(p + ".batch_size", c.batch_size);
  t.bind(p + ".iterations", c.iterations);
  t.bind(p + ".fwa_words", c.fwa_words);
  t.bind(p + ".clip_norm", c.clip_norm);
}

Table table(RunConfig& c) {
  Table t;
  t.bind("seed", c.seed);
  t.bind("corpus.vocab_size", c.corpus.vocab_size);
  t.bind("corpus.max_in", c.corpus.max_in);
  t.bind("corpus.max_out", c.corpus.max_out);
  t.bind("model.embedding_dim", c.model.embedding_dim);
  t.bind("model.hidden_dim", c.model.hidden_dim);
  t.bind("model.dropout", c.model.dropout_rate);
  t.bind("model.init_radius", c.init_radius);
  t.bind("lm.embedding_dim", c.lm.embedding_dim);
  t.bind("lm.hidden_dim", c.lm.hidden_dim);
  t.bind("lm.dropout", c.lm.dropout_rate);
  bind_train(t, "train", c.train);
  bind_train(t, "lm_train", c.lm_train);
  t.bind("search.max_sweeps", c.search.max_sweeps);
  t.bind("search.candidates", c.search.candidates);
  t.bind("search.restarts", c.search.restarts);
  t.bind("search.input_length", c.search.input_length);
  t.bind("search.jobs", c.jobs);
  t.bind("hit.criterion", c.criterion);
  t.bind("hit.t_out", c.t_out);
  t.bind("hit.t_in", c.t_in);
  bind_negtrain(t, "malicious", c.malicious);
  bind_negtrain(t, "frequent", c.frequent);
  t.bind("frequent.r_thres", c.frequent.r_thres);
  t.bind("frequent.eos_scale", c.frequent.eos_scale);
  t.bind("frequent.window_batches", c.frequent.window_batches);
  t.bind("frequent.sample_responses", c.frequent.sample_responses);
  t.bind("decode.mode", c.decode_mode);
  t.bind("decode.max_len", c.decode_max_len);
  t.bind("decode.mmi_lambda", c.mmi_lambda);
  t.bind("decode.mmi_gamma", c.mmi_gamma);
  t.bind("gan.alpha_g", c.gan.alpha_g);
  t.bind("gan.alpha_d", c.gan.alpha_d);
  t.bind("gan.teacher_forcing_lr", c.gan.teacher_forcing_lr);
  t.bind("gan.d_steps_per_g", c.gan.d_steps_per_g);
  t.bind("gan.teacher_forcing", c.gan.teacher_forcing);
  t.bind("gan.batch_size", c.gan.batch_size);
  t.bind("gan.epochs", c.gan.epochs);
  t.bind("gan.clip_norm", c.gan.clip_norm);
  t.bind("disc.embedding_dim", c.disc.embedding_dim);
  t.bind("disc.filters", c.disc.filters);
  t.bind("disc.windows", c.disc.windows);
  t.bind("disc.highway_layers", c.disc.highway_layers);
  t.bind("disc.hidden_dim", c.disc.hidden_dim);
  return t;
}

}  // namespace

DecodeMode parse_decode_mode(const std::string& name) {
  if (name == "greedy") return DecodeMode::Greedy;
  if (name == "sample") return DecodeMode::Sample;
  if (name == "mmi") return DecodeMode::Mmi;
  throw Error("unknown decode mode '" + name + "' (expected greedy, sample or mmi)");
}

std::string to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::Greedy: return "greedy";
    case DecodeMode::Sample: return "sample";
    case DecodeMode::Mmi: return "mmi";
  }
  return "?";
}

RunConfig::RunConfig() {
  model.embedding_dim = 300;
  model.hidden_dim = 600;
  lm.embedding_dim = 300;
  lm.hidden_dim = 600;
}

void RunConfig::set(const std::string& key, const std::string& value) { table(*this).at(key).set(value); }

std::string RunConfig::get(const std::string& key) const {
  return table(const_cast<RunConfig&>(*this)).at(key).get();
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  const Table t = table(const_cast<RunConfig&>(*this));
  for (const auto& [k, _] : t.entries()) out.push_back(k);
  return out;
}

std::map<std::string, std::string> RunConfig::entries() const {
  std::map<std::string, std::string> out;
  const Table t = table(const_cast<RunConfig&>(*this));
  for (const auto& [k, b] : t.entries()) out[k] = b.get();
  return out;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error("config line " + std::to_string(lineno) + ": empty key");
    if (out.count(key)) throw Error("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config file " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config_text(s.str());
}

void apply_config(RunConfig& config, const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) config.set(k, v);
}

}  // namespace negtrain::cli
