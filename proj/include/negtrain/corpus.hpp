#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "negtrain/common.hpp"

namespace negtrain {

using TokenList = std::vector<std::string>;

// Token <-> index map. Indices 0..3 are always <pad>, <unk>, <bos>, <eos>.
class Vocabulary {
 public:
  Vocabulary();

  // Adds a non-special token if absent; returns its index.
  TokenId add(const std::string& token);

  TokenId index_of(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenSeq encode(const TokenList& tokens) const;
  TokenList decode(const TokenSeq& ids) const;

  // Non-special tokens, one per line; line i maps to index 4 + i.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct CorpusConfig {
  std::size_t vocab_size = 30000;
  std::size_t max_in = 15;
  std::size_t max_out = 20;  // includes the trailing <eos>
  std::size_t batch_size = 64;

  void validate() const;
};

// input_ids has exactly max_in entries; target_ids ends with a single <eos>.
struct DialoguePair {
  TokenSeq input_ids;
  TokenSeq target_ids;

  friend bool operator==(const DialoguePair&, const DialoguePair&) = default;
};

using Dialogue = std::vector<std::string>;

// Lowercases ASCII, drops punctuation except apostrophes followed by a
// letter or digit (so "n't" and "'s" survive) and splits on whitespace.
TokenList preprocess_utterance(std::string_view raw);

// The K most frequent tokens, ties broken by first occurrence.
Vocabulary build_vocab(const std::vector<TokenList>& corpus, std::size_t max_tokens);

TokenSeq encode_input(const Vocabulary& vocab, const TokenList& tokens, std::size_t max_in);
TokenSeq encode_target(const Vocabulary& vocab, const TokenList& tokens, std::size_t max_out);

// Consecutive (utterance_t, utterance_t+1) pairs of one dialogue.
std::vector<DialoguePair> make_pairs(const Dialogue& dialogue, const Vocabulary& vocab,
                                     const CorpusConfig& config);

// Deterministic shuffled mini-batches of pair indices; the final batch may be short.
class BatchIterator {
 public:
  BatchIterator(std::size_t num_items, std::size_t batch_size, std::uint64_t shuffle_seed);

  std::optional<std::vector<std::size_t>> next();
  std::size_t num_batches() const;

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

std::vector<std::vector<DialoguePair>> batches(const std::vector<DialoguePair>& pairs,
                                               std::size_t batch_size, std::uint64_t shuffle_seed);

// Corpus file: one utterance per line, dialogues separated by blank lines.
struct CorpusFile {
  std::vector<Dialogue> dialogues;
  std::vector<std::string> warnings;  // "line N: ..."
};
CorpusFile read_corpus(const std::filesystem::path& path);
CorpusFile parse_corpus(std::string_view text);

std::vector<TokenList> tokenize_corpus(const std::vector<Dialogue>& dialogues);
std::vector<DialoguePair> make_all_pairs(const std::vector<Dialogue>& dialogues, const Vocabulary& vocab,
                                         const CorpusConfig& config);

// Responses (pair targets) for language-model training.
std::vector<TokenSeq> responses_of(const std::vector<DialoguePair>& pairs);

// Target-list file: one sentence per line; blank lines ignored.
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Encoded pairs file: "<input ids>\t<target ids>" per line.
void write_pairs(const std::filesystem::path& path, const std::vector<DialoguePair>& pairs);
std::vector<DialoguePair> read_pairs(const std::filesystem::path& path);

std::string join_tokens(const TokenList& tokens);

}  // namespace negtrain
