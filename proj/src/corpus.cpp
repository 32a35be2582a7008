#include "negtrain/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "negtrain/rng.hpp"

namespace negtrain {

namespace {

const char* const kSpecialNames[kNumSpecials] = {"<pad>", "<unk>", "<bos>", "<eos>"};

bool is_ascii_alnum(unsigned char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }
bool is_ascii_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Strict UTF-8 validation; returns false on the first malformed sequence.
bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    if (c < 0x80) len = 1;
    else if ((c >> 5) == 0x6 && c >= 0xc2) len = 2;
    else if ((c >> 4) == 0xe) len = 3;
    else if ((c >> 3) == 0x1e && c <= 0xf4) len = 4;
    else return false;
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    }
    i += len;
  }
  return true;
}

TokenSeq parse_ids(const std::string& field) {
  TokenSeq ids;
  std::istringstream in(field);
  long long v;
  while (in >> v) ids.push_back(static_cast<TokenId>(v));
  return ids;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (TokenId i = 0; i < kNumSpecials; ++i) {
    tokens_.emplace_back(kSpecialNames[i]);
    index_.emplace(tokens_.back(), i);
  }
}

TokenId Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

TokenId Vocabulary::index_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenSeq Vocabulary::encode(const TokenList& tokens) const {
  TokenSeq ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(index_of(t));
  return ids;
}

TokenList Vocabulary::decode(const TokenSeq& ids) const {
  TokenList out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(token(id));
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocabulary file " + path.string());
  for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read vocabulary file " + path.string());
  Vocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || vocab.contains(line)) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": empty or duplicate token");
    }
    vocab.add(line);
  }
  return vocab;
}

void CorpusConfig::validate() const {
  if (vocab_size < 1 || max_in < 1 || max_out < 1 || batch_size < 1) {
    throw Error("corpus config fields must all be >= 1");
  }
}

TokenList preprocess_utterance(std::string_view raw) {
  TokenList tokens;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && is_ascii_space(static_cast<unsigned char>(raw[i]))) ++i;
    std::size_t end = i;
    while (end < raw.size() && !is_ascii_space(static_cast<unsigned char>(raw[end]))) ++end;
    const std::string_view word = raw.substr(i, end - i);
    std::string token;
    for (std::size_t k = 0; k < word.size(); ++k) {
      const auto c = static_cast<unsigned char>(word[k]);
      if (c == '\'') {
        // kept in front of a letter or digit: "n't", "'s", "it's"
        if (k + 1 < word.size() && is_ascii_alnum(static_cast<unsigned char>(word[k + 1]))) token.push_back('\'');
      } else if (is_ascii_punct(c)) {
        continue;
      } else if (c >= 'A' && c <= 'Z') {
        token.push_back(static_cast<char>(c - 'A' + 'a'));
      } else {
        token.push_back(static_cast<char>(c));
      }
    }
    if (!token.empty()) tokens.push_back(std::move(token));
    i = end;
  }
  return tokens;
}

Vocabulary build_vocab(const std::vector<TokenList>& corpus, std::size_t max_tokens) {
  if (max_tokens < 1) throw Error("vocabulary size must be >= 1");
  std::unordered_map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const auto& sentence : corpus) {
    for (const auto& tok : sentence) {
      auto [it, inserted] = counts.try_emplace(tok, 0);
      if (inserted) order.push_back(tok);
      ++it->second;
    }
  }
  // order is first-occurrence order, so a stable sort breaks ties by it.
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return counts.at(a) > counts.at(b);
  });
  Vocabulary vocab;
  for (const auto& tok : order) {
    if (vocab.size() - kNumSpecials >= max_tokens) break;
    // A corpus word spelled like a special token would alias it; drop it.
    if (vocab.contains(tok)) continue;
    vocab.add(tok);
  }
  return vocab;
}

TokenSeq encode_input(const Vocabulary& vocab, const TokenList& tokens, std::size_t max_in) {
  TokenSeq ids;
  ids.reserve(max_in);
  for (std::size_t i = 0; i < tokens.size() && i < max_in; ++i) ids.push_back(vocab.index_of(tokens[i]));
  ids.resize(max_in, kPad);
  return ids;
}

TokenSeq encode_target(const Vocabulary& vocab, const TokenList& tokens, std::size_t max_out) {
  TokenSeq ids;
  const std::size_t keep = std::min(tokens.size(), max_out - 1);
  ids.reserve(keep + 1);
  for (std::size_t i = 0; i < keep; ++i) ids.push_back(vocab.index_of(tokens[i]));
  ids.push_back(kEos);
  return ids;
}

std::vector<DialoguePair> make_pairs(const Dialogue& dialogue, const Vocabulary& vocab,
                                     const CorpusConfig& config) {
  std::vector<DialoguePair> pairs;
  if (dialogue.size() < 2) return pairs;
  std::vector<TokenList> toks;
  toks.reserve(dialogue.size());
  for (const auto& u : dialogue) toks.push_back(preprocess_utterance(u));
  for (std::size_t t = 0; t + 1 < toks.size(); ++t) {
    pairs.push_back({encode_input(vocab, toks[t], config.max_in), encode_target(vocab, toks[t + 1], config.max_out)});
  }
  return pairs;
}

BatchIterator::BatchIterator(std::size_t num_items, std::size_t batch_size, std::uint64_t shuffle_seed)
    : batch_size_(batch_size) {
  if (batch_size < 1) throw Error("batch size must be >= 1");
  order_.resize(num_items);
  for (std::size_t i = 0; i < num_items; ++i) order_[i] = i;
  Rng rng(shuffle_seed);
  rng.shuffle(order_);
}

std::optional<std::vector<std::size_t>> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return batch;
}

std::size_t BatchIterator::num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

std::vector<std::vector<DialoguePair>> batches(const std::vector<DialoguePair>& pairs, std::size_t batch_size,
                                               std::uint64_t shuffle_seed) {
  std::vector<std::vector<DialoguePair>> out;
  BatchIterator it(pairs.size(), batch_size, shuffle_seed);
  while (auto idx = it.next()) {
    auto& batch = out.emplace_back();
    for (std::size_t i : *idx) batch.push_back(pairs[i]);
  }
  return out;
}

CorpusFile parse_corpus(std::string_view text) {
  CorpusFile file;
  Dialogue current;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    const bool at_eof = end == text.size();
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (at_eof && line.empty()) break;
    if (!valid_utf8(line)) throw Error("line " + std::to_string(line_no) + ": invalid UTF-8");
    const bool blank = std::all_of(line.begin(), line.end(), [](char c) { return is_ascii_space(static_cast<unsigned char>(c)); });
    if (blank) {
      if (!line.empty()) file.warnings.push_back("line " + std::to_string(line_no) + ": whitespace-only line treated as separator");
      if (!current.empty()) file.dialogues.push_back(std::move(current));
      current.clear();
      continue;
    }
    if (preprocess_utterance(line).empty()) {
      file.warnings.push_back("line " + std::to_string(line_no) + ": utterance is empty after preprocessing");
    }
    current.emplace_back(line);
  }
  if (!current.empty()) file.dialogues.push_back(std::move(current));
  return file;
}

CorpusFile read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read corpus file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_corpus(buf.str());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::vector<TokenList> tokenize_corpus(const std::vector<Dialogue>& dialogues) {
  std::vector<TokenList> out;
  for (const auto& d : dialogues) {
    for (const auto& u : d) out.push_back(preprocess_utterance(u));
  }
  return out;
}

std::vector<DialoguePair> make_all_pairs(const std::vector<Dialogue>& dialogues, const Vocabulary& vocab,
                                         const CorpusConfig& config) {
  std::vector<DialoguePair> out;
  for (const auto& d : dialogues) {
    auto p = make_pairs(d, vocab, config);
    out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return out;
}

std::vector<TokenSeq> responses_of(const std::vector<DialoguePair>& pairs) {
  std::vector<TokenSeq> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.target_ids);
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](char c) { return is_ascii_space(static_cast<unsigned char>(c)); })) continue;
    lines.push_back(line);
  }
  return lines;
}

void write_pairs(const std::filesystem::path& path, const std::vector<DialoguePair>& pairs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write pairs file " + path.string());
  auto write_ids = [&](const TokenSeq& ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? " " : "") << ids[i];
  };
  for (const auto& p : pairs) {
    write_ids(p.input_ids);
    out << '\t';
    write_ids(p.target_ids);
    out << '\n';
  }
}

std::vector<DialoguePair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read pairs file " + path.string());
  std::vector<DialoguePair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(path.string() + ":" + std::to_string(line_no) + ": missing tab");
    pairs.push_back({parse_ids(line.substr(0, tab)), parse_ids(line.substr(tab + 1))});
  }
  return pairs;
}

std::string join_tokens(const TokenList& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

}  // namespace negtrain
