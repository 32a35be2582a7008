#pragma once

// Synthetic dialogue corpora and tiny models shared by the unit and
// acceptance tests.

#include <cstdint>
#include <string>
#include <vector>

#include "negtrain/corpus.hpp"
#include "negtrain/language_model.hpp"
#include "negtrain/seq2seq.hpp"
#include "negtrain/training.hpp"

namespace negtrain::testing {

Seq2Seq tiny_seq2seq(std::size_t vocab = 20, std::size_t emb = 8, std::size_t hidden = 12, std::uint64_t seed = 1,
                     double dropout = 0.0);
LanguageModel tiny_lm(std::size_t vocab = 20, std::size_t emb = 8, std::size_t hidden = 12, std::uint64_t seed = 2,
                      double dropout = 0.0);

TokenSeq random_tokens(std::size_t vocab, std::size_t n, Rng& rng, bool with_eos = false);

struct ToyCorpus {
  Vocabulary vocab;
  std::vector<DialoguePair> train;
  std::vector<DialoguePair> valid;
  std::vector<DialoguePair> test;
  std::size_t max_in = 5;
  std::size_t max_out = 8;
};

// Topic-driven pairs: the last input word names a topic and the response
// mentions it. Five offensive responses are planted for inputs ending in one of five
// dedicated cue words; `planted_targets` holds their encodings and
// `planted_inputs` one example trigger each. valid/test are clean.
struct MaliciousToy : ToyCorpus {
  std::vector<std::string> planted_texts;
  std::vector<TokenSeq> planted_targets;
  std::vector<TokenSeq> planted_inputs;
};
MaliciousToy make_malicious_toy(std::uint64_t seed, std::size_t num_pairs = 2000);

// Every input is answered with "i do n't know" 40% of the time and with one
// of four topic-specific responses (15% each) otherwise.
struct FrequentToy : ToyCorpus {
  TokenSeq frequent_response;  // without <eos>
};
FrequentToy make_frequent_toy(std::uint64_t seed, std::size_t topics = 30, std::size_t pairs_per_topic = 100);


// Random model whose outputs depend on the last input slot only: the encoder
// forgets everything at each step and the attention context is ignored.
Seq2Seq last_slot_model(std::size_t vocab, std::uint64_t seed);

// Plain MLE training at a constant learning rate.
void overfit(Seq2Seq& model, const std::vector<DialoguePair>& pairs, std::size_t epochs, double lr,
             std::uint64_t seed = 0);

}  // namespace negtrain::testing
