// negtrain: command-line driver for the full pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "negtrain/checkpoint.hpp"
#include "negtrain/metrics.hpp"
#include "negtrain/rng.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace negtrain;
using namespace negtrain::cli;

namespace {

// Flags shared by all subcommands; only the active subcommand fills them.
struct Flags {
  std::string config, corpus, vocab, checkpoint, lm_checkpoint, targets, criterion, mode, out;
  std::string valid, test, log, disc_checkpoint, disc_out;
  std::optional<std::uint64_t> seed;
  std::optional<double> r_thres, lambda_pos, lr;
  std::optional<std::size_t> iterations, jobs;
};

void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw Error(std::string(flag) + " is required");
  if (!fs::exists(path)) throw Error(std::string(flag) + ": no such file: " + path);
}

void optional_file(const std::string& path, const char* flag) {
  if (!path.empty()) require_file(path, flag);
}

std::ofstream open_out(const std::string& path) {
  if (path.empty()) throw Error("--out is required");
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

nlohmann::json metadata(const std::string& command, const RunConfig& rc) {
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : rc.entries()) cfg[k] = v;
  return {{"command", command}, {"config", cfg}};
}

Seq2Seq load_model(const std::string& path, const Vocabulary& vocab) {
  Seq2Seq m = seq2seq_from_checkpoint(load_checkpoint(path));
  if (m.vocab_size() != vocab.size()) throw Error("checkpoint vocabulary size does not match " + std::to_string(vocab.size()));
  return m;
}

std::optional<LanguageModel> load_lm(const std::string& path, const Vocabulary& vocab) {
  if (path.empty()) return std::nullopt;
  LanguageModel lm = language_model_from_checkpoint(load_checkpoint(path));
  if (lm.config().vocab_size != vocab.size()) throw Error("LM vocabulary size does not match");
  return lm;
}

std::vector<DialoguePair> maybe_pairs(const std::string& path) {
  if (path.empty()) return {};
  return read_pairs(path);
}

const std::vector<DialoguePair>* ptr_or_null(const std::vector<DialoguePair>& v) { return v.empty() ? nullptr : &v; }

std::vector<EncodedTarget> load_targets(const std::string& path, const Vocabulary& vocab, std::size_t max_out) {
  std::vector<EncodedTarget> out;
  for (const auto& line : read_lines(path)) {
    out.push_back(encode_target_text(vocab, line, max_out));
    if (out.back().has_oov) std::cerr << "warning: target has out-of-vocabulary words: " << line << '\n';
    if (out.back().too_long) std::cerr << "warning: target longer than corpus.max_out, skipped: " << line << '\n';
  }
  if (out.empty()) throw Error("target list is empty: " + path);
  return out;
}

HitThresholds thresholds_for(const RunConfig& rc, const Seq2Seq& model, const LanguageModel* lm,
                             const std::string& test_path) {
  HitThresholds t;
  if (!test_path.empty()) t = compute_thresholds(model, lm, read_pairs(test_path));
  else if (!rc.t_out) throw Error("--test or hit.t_out is required for hit thresholds");
  if (rc.t_out) t.t_out = *rc.t_out;
  if (rc.t_in) t.t_in = rc.t_in;
  if (requires_lm(rc.criterion) && !t.t_in) throw Error(to_string(rc.criterion) + " needs --lm-checkpoint and a T_in");
  return t;
}

// ---- subcommands ----

void cmd_preprocess(const RunConfig& rc, const Flags& f) {
  require_file(f.corpus, "--corpus");
  optional_file(f.vocab, "--vocab");
  if (f.out.empty()) throw Error("--out is required");
  const CorpusFile cf = read_corpus(f.corpus);
  for (const auto& w : cf.warnings) std::cerr << f.corpus << ": " << w << '\n';
  const Vocabulary vocab =
      f.vocab.empty() ? build_vocab(tokenize_corpus(cf.dialogues), rc.corpus.vocab_size) : Vocabulary::load(f.vocab);
  const auto pairs = make_all_pairs(cf.dialogues, vocab, rc.corpus);
  fs::create_directories(f.out);
  vocab.save(fs::path(f.out) / "vocab.txt");
  write_pairs(fs::path(f.out) / "pairs.tsv", pairs);
  std::cout << "dialogues=" << cf.dialogues.size() << " pairs=" << pairs.size() << " vocab=" << vocab.size() << '\n';
}

void print_epochs(const std::vector<EpochLog>& log) {
  for (const auto& e : log) {
    std::cout << "epoch " << e.epoch << " lr=" << e.lr << " train_nll=" << e.train_nll;
    if (e.valid_ppl) std::cout << " valid_ppl=" << *e.valid_ppl;
    std::cout << '\n';
  }
}

void cmd_train(RunConfig rc, const Flags& f) {
  require_file(f.corpus, "--corpus");
  require_file(f.vocab, "--vocab");
  optional_file(f.valid, "--valid");
  optional_file(f.checkpoint, "--checkpoint");
  if (f.lr) rc.train.start_lr = *f.lr;
  const Vocabulary vocab = Vocabulary::load(f.vocab);
  const auto pairs = read_pairs(f.corpus);
  const auto valid = maybe_pairs(f.valid);
  const std::uint64_t seed = derive_seed(rc.seed, "train", 0);
  rc.model.vocab_size = vocab.size();
  Seq2Seq model = f.checkpoint.empty() ? Seq2Seq::initialized(rc.model, derive_seed(seed, "init"), rc.init_radius)
                                       : load_model(f.checkpoint, vocab);
  TrainConfig tc = rc.train;
  tc.seed = seed;
  auto out = open_out(f.out);
  out.close();
  const auto log = train_mle(model, pairs, tc, ptr_or_null(valid));
  print_epochs(log);
  if (!f.log.empty()) write_training_log(f.log, log);
  save_checkpoint(f.out, to_checkpoint(model, metadata("train", rc)));
}

void cmd_train_lm(RunConfig rc, const Flags& f) {
  require_file(f.corpus, "--corpus");
  require_file(f.vocab, "--vocab");
  optional_file(f.valid, "--valid");
  if (f.lr) rc.lm_train.start_lr = *f.lr;
  const Vocabulary vocab = Vocabulary::load(f.vocab);
  const auto sentences = responses_of(read_pairs(f.corpus));
  const auto valid = responses_of(maybe_pairs(f.valid));
  const std::uint64_t seed = derive_seed(rc.seed, "train", 1);
  rc.lm.vocab_size = vocab.size();
  LanguageModel lm = LanguageModel::initialized(rc.lm, derive_seed(seed, "init"), rc.init_radius);
  TrainConfig tc = rc.lm_train;
  tc.seed = seed;
  open_out(f.out).close();
  const auto log = train_lm(lm, sentences, tc, valid.empty() ? nullptr : &valid);
  print_epochs(log);
  if (!f.log.empty()) write_training_log(f.log, log);
  save_checkpoint(f.out, to_checkpoint(lm, metadata("train-lm", rc)));
}

void cmd_attack(const RunConfig& rc, const Flags& f, bool with_summary) {
  require_file(f.checkpoint, "--checkpoint");
  require_file(f.vocab, "--vocab");
  require_file(f.targets, "--targets");
  optional_file(f.lm_checkpoint, "--lm-checkpoint");
  optional_file(f.test, "--test");
  const Vocabulary vocab = Vocabulary::load(f.vocab);
  const Seq2Seq model = load_model(f.checkpoint, vocab);
  const auto lm = load_lm(f.lm_checkpoint, vocab);
  const LanguageModel* lmp = lm ? &*lm : nullptr;
  const auto targets = load_targets(f.targets, vocab, rc.corpus.max_out);
  const HitThresholds t = thresholds_for(rc, model, lmp, f.test);
  TriggerSearchConfig search = search_config_for(rc.criterion, rc.search);
  search.seed = derive_seed(rc.seed, "attack");
  auto out = open_out(f.out);
  const auto res = hit_rate(model, lmp, targets, rc.criterion, t, search, rc.corpus.max_out, rc.jobs);
  write_attack_report(out, vocab, res.reports);
  if (with_summary) out << summary_line(res) << '\n';
  std::cout << summary_line(res) << " t_out=" << t.t_out;
  if (t.t_in) std::cout << " t_in=" << *t.t_in;
  std::cout << '\n';
}

void cmd_negtrain_mal(RunConfig rc, const Flags& f) {
  require_file(f.checkpoint, "--checkpoint");
  require_file(f.vocab, "--vocab");
  require_file(f.targets, "--targets");
  require_file(f.corpus, "--corpus");
  optional_file(f.lm_checkpoint, "--lm-checkpoint");
  optional_file(f.test, "--test");
  optional_file(f.valid, "--valid");
  NegTrainConfig& nc = rc.malicious;
  if (f.lr) nc.lr = *f.lr;
  if (f.lambda_pos) nc.lambda_pos = *f.lambda_pos;
  if (f.iterations) nc.iterations = *f.iterations;
  const Vocabulary vocab = Vocabulary::load(f.vocab);
  Seq2Seq model = load_model(f.checkpoint, vocab);
  const auto lm = load_lm(f.lm_checkpoint, vocab);
  const LanguageModel* lmp = lm ? &*lm : nullptr;
  std::vector<TokenSeq> targets;
  for (const auto& t : load_targets(f.targets, vocab, rc.corpus.max_out))
    if (!t.too_long) targets.push_back(t.ids);
  const auto train = read_pairs(f.corpus);
  const auto valid = maybe_pairs(f.valid);
  const HitThresholds t = thresholds_for(rc, model, lmp, f.test);
  TriggerSearchConfig search = search_config_for(rc.criterion, rc.search);
  search.seed = derive_seed(rc.seed, "attack");
  nc.seed = derive_seed(rc.seed, "train", 2);
  open_out(f.out).close();
  const auto log = neg_train_malicious(model, lmp, targets, train, t, rc.criterion, search, nc,
                                       resolve_fwa_set(vocab, nc.fwa_words), ptr_or_null(valid), rc.corpus.max_out);
  for (const auto& r : log) {
    std::cout << "iteration " << r.iteration << " hits=" << r.hits << " hit_rate=" << r.hit_rate;
    if (r.valid_ppl) std::cout << " valid_ppl=" << *r.valid_ppl;
    std::cout << '\n';
  }
  if (!f.log.empty()) write_malicious_log(f.log, log);
  save_checkpoint(f.out, to_checkpoint(model, metadata("negtrain-mal", rc)));
}

void cmd_negtrain_freq(RunConfig rc, const Flags& f) {
  require_file(f.checkpoint, "--checkpoint");
  require_file(f.vocab, "--vocab");
  require_file(f.corpus, "--corpus");
  optional_file(f.valid, "--valid");
  NegTrainConfig& nc = rc.frequent;
  if (f.lr) nc.lr = *f.lr;
  if (f.lambda_pos) nc.lambda_pos = *f.lambda_pos;
  if (f.iterations) nc.iterations = *f.iterations;
  if (f.r_thres) nc.r_thres = *f.r_thres;
  nc.max_decode_len = rc.corpus.max_out;
  nc.seed = derive_seed(rc.seed, "train", 3);
  const Vocabulary vocab = Vocabulary::load(f.vocab);
  Seq2Seq model = load_model(f.checkpoint, vocab);
  const auto train = read_pairs(f.corpus);
  const auto valid = maybe_pairs(f.valid);
  open_out(f.out).close();
  const auto log = neg_train_frequent(model, train, nc, ptr_or_null(valid));
  for (const auto& r : log) {
    std::cout << "epoch " << r.epoch << " negatives=" << r.negative_examples;
    if (r.max_ratio) std::cout << " max_ratio=" << *r.max_ratio;
    if (r.valid_ppl) std::cout << " valid_ppl=" << *r.valid_ppl;
    std::cout << '\n';
  }
  if (!f.log.empty()) write_frequent_log(f.log, log);
  save_checkpoint(f.out, to_checkpoint(model, metadata("negtrain-freq", rc)));
}

void cmd_decode(const RunConfig& rc, const Flags& f) {
  require_file(f.checkpoint, "--checkpoint");
  require_file(f.vocab, "--vocab");
  require_file(f.corpus, "--corpus");
  optional_file(f.lm_checkpoint, "--lm-checkpoint");
  const Vocabulary vocab = Vocabulary::load(f.vocab);
  const Seq2Seq model = load_model(f.checkpoint, vocab);
  const auto lm = load_lm(f.lm_checkpoint, vocab);
  if (rc.decode_mode == DecodeMode::Mmi && !lm) throw Error("--mode mmi needs --lm-checkpoint");
  const auto pairs = read_pairs(f.corpus);
  const std::uint64_t seed = derive_seed(rc.seed, "decode");
  auto out = open_out(f.out);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& x = pairs[i].input_ids;
    TokenSeq y;
    switch (rc.decode_mode) {
      case DecodeMode::Greedy: y = model.greedy_decode(x, rc.decode_max_len); break;
      case DecodeMode::Sample: y = model.sample_decode(x, rc.decode_max_len, derive_seed(seed, "sample", i)); break;
      case DecodeMode::Mmi: y = model.mmi_antilm_decode(x, *lm, rc.mmi_lambda, rc.mmi_gamma, rc.decode_max_len); break;
    }
    out << join_tokens(vocab.decode(strip_eos(y))) << '\n';
  }
}

void cmd_eval_diversity(const Flags& f) {
  require_file(f.corpus, "--corpus");
  std::ifstream in(f.corpus);
  std::vector<std::vector<std::string>> responses;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    std::vector<std::string> r;
    for (std::string w; words >> w;) r.push_back(w);
    responses.push_back(std::move(r));
  }
  if (responses.empty()) throw Error("no responses in " + f.corpus);
  const auto rep = diversity_report(responses);
  auto out = open_out(f.out);
  write_diversity_report(out, rep);
  write_diversity_report(std::cout, rep);
}

void cmd_gan_train(RunConfig rc, const Flags& f) {
  require_file(f.checkpoint, "--checkpoint");
  require_file(f.vocab, "--vocab");
  require_file(f.corpus, "--corpus");
  optional_file(f.valid, "--valid");
  optional_file(f.disc_checkpoint, "--disc-checkpoint");
  if (f.iterations) rc.gan.epochs = *f.iterations;
  const Vocabulary vocab = Vocabulary::load(f.vocab);
  Seq2Seq gen = load_model(f.checkpoint, vocab);
  const std::uint64_t seed = derive_seed(rc.seed, "train", 4);
  rc.disc.vocab_size = vocab.size();
  Discriminator disc = f.disc_checkpoint.empty()
                           ? Discriminator::initialized(rc.disc, derive_seed(seed, "init"), rc.init_radius)
                           : discriminator_from_checkpoint(load_checkpoint(f.disc_checkpoint));
  GanConfig gc = rc.gan;
  gc.seed = seed;
  gc.max_decode_len = rc.corpus.max_out;
  const auto train = read_pairs(f.corpus);
  const auto valid = maybe_pairs(f.valid);
  const std::string disc_out = f.disc_out.empty() ? f.out + ".disc" : f.disc_out;
  open_out(f.out).close();
  open_out(disc_out).close();
  const auto log = gan_train(gen, disc, train, gc, ptr_or_null(valid));
  for (const auto& e : log) {
    std::cout << "epoch " << e.epoch << " d_loss=" << e.d_loss << " disc_accuracy=" << e.disc_accuracy;
    if (e.valid_ppl) std::cout << " valid_ppl=" << *e.valid_ppl;
    std::cout << '\n';
  }
  if (!f.log.empty()) write_gan_log(f.log, log);
  save_checkpoint(f.out, to_checkpoint(gen, metadata("gan-train", rc)));
  save_checkpoint(disc_out, to_checkpoint(disc, metadata("gan-train", rc)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Negative training for neural dialogue response generation"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", f.config, "key = value config file")->check(CLI::ExistingFile);
    s->add_option("--seed", f.seed, "global seed");
  };
  auto add = [&](CLI::App* s, const char* name, auto& target, const char* help) { s->add_option(name, target, help); };

  auto* pre = app.add_subcommand("preprocess", "tokenize a raw corpus into a vocabulary and encoded pairs");
  common(pre);
  add(pre, "--corpus", f.corpus, "raw corpus: one utterance per line, blank line between dialogues");
  add(pre, "--vocab", f.vocab, "reuse this vocabulary instead of building one");
  add(pre, "--out", f.out, "output directory (vocab.txt, pairs.tsv)");

  auto* train = app.add_subcommand("train", "MLE training of the seq2seq model");
  auto* train_lm = app.add_subcommand("train-lm", "train the response language model");
  for (auto* s : {train, train_lm}) {
    common(s);
    add(s, "--corpus", f.corpus, "encoded training pairs");
    add(s, "--vocab", f.vocab, "vocabulary file");
    add(s, "--valid", f.valid, "encoded validation pairs");
    add(s, "--lr", f.lr, "starting learning rate");
    add(s, "--log", f.log, "per-epoch log (tsv)");
    add(s, "--out", f.out, "output checkpoint");
  }
  add(train, "--checkpoint", f.checkpoint, "continue from this checkpoint");

  auto* attack = app.add_subcommand("attack", "search a trigger input for every target");
  auto* eval_hits = app.add_subcommand("eval-hits", "attack report plus hit-rate summary");
  auto* neg_mal = app.add_subcommand("negtrain-mal", "negative training against malicious targets");
  for (auto* s : {attack, eval_hits, neg_mal}) {
    common(s);
    add(s, "--checkpoint", f.checkpoint, "seq2seq checkpoint");
    add(s, "--lm-checkpoint", f.lm_checkpoint, "language model checkpoint (io-* criteria)");
    add(s, "--vocab", f.vocab, "vocabulary file");
    add(s, "--targets", f.targets, "target list, one sentence per line");
    s->add_option("--criterion", f.criterion, "hit criterion")
        ->check(CLI::IsMember({"o-greedy", "o-sample-avg", "o-sample-min", "io-sample-avg", "io-sample-min"}));
    add(s, "--test", f.test, "encoded test pairs for the thresholds");
    add(s, "--out", f.out, "output file");
  }
  for (auto* s : {attack, eval_hits}) add(s, "--jobs", f.jobs, "worker threads");
  add(neg_mal, "--corpus", f.corpus, "encoded training pairs (positive examples)");
  add(neg_mal, "--valid", f.valid, "encoded validation pairs");
  add(neg_mal, "--log", f.log, "per-iteration log (tsv)");

  auto* neg_freq = app.add_subcommand("negtrain-freq", "negative training against frequent responses");
  common(neg_freq);
  add(neg_freq, "--checkpoint", f.checkpoint, "seq2seq checkpoint");
  add(neg_freq, "--vocab", f.vocab, "vocabulary file");
  add(neg_freq, "--corpus", f.corpus, "encoded training pairs");
  add(neg_freq, "--valid", f.valid, "encoded validation pairs");
  add(neg_freq, "--r-thres", f.r_thres, "ratio above which a response is penalized");
  add(neg_freq, "--log", f.log, "per-epoch log (tsv)");
  add(neg_freq, "--out", f.out, "output checkpoint");
  for (auto* s : {neg_mal, neg_freq}) {
    add(s, "--lambda-pos", f.lambda_pos, "weight of the positive term");
    add(s, "--lr", f.lr, "learning rate");
    add(s, "--iterations", f.iterations, "iterations (malicious) or epochs (frequent)");
  }

  auto* decode = app.add_subcommand("decode", "generate one response per input");
  common(decode);
  add(decode, "--checkpoint", f.checkpoint, "seq2seq checkpoint");
  add(decode, "--lm-checkpoint", f.lm_checkpoint, "language model checkpoint (mmi)");
  add(decode, "--vocab", f.vocab, "vocabulary file");
  add(decode, "--corpus", f.corpus, "encoded pairs whose inputs are decoded");
  decode->add_option("--mode", f.mode, "decoding mode")->check(CLI::IsMember({"greedy", "sample", "mmi"}));
  add(decode, "--out", f.out, "responses, one per line");

  auto* div = app.add_subcommand("eval-diversity", "max-ratio and Ent-n of a response file");
  common(div);
  add(div, "--corpus", f.corpus, "responses, one per line");
  add(div, "--out", f.out, "report (tsv)");

  auto* gan = app.add_subcommand("gan-train", "adversarial training baseline");
  common(gan);
  add(gan, "--checkpoint", f.checkpoint, "generator checkpoint to start from");
  add(gan, "--disc-checkpoint", f.disc_checkpoint, "discriminator checkpoint to start from");
  add(gan, "--vocab", f.vocab, "vocabulary file");
  add(gan, "--corpus", f.corpus, "encoded training pairs");
  add(gan, "--valid", f.valid, "encoded validation pairs");
  add(gan, "--iterations", f.iterations, "epochs");
  add(gan, "--log", f.log, "per-epoch log (tsv)");
  add(gan, "--out", f.out, "output generator checkpoint");
  add(gan, "--disc-out", f.disc_out, "output discriminator checkpoint (default: <out>.disc)");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc;
    if (!f.config.empty()) apply_config(rc, read_config_file(f.config));
    if (f.seed) rc.seed = *f.seed;
    if (!f.criterion.empty()) rc.criterion = parse_criterion(f.criterion);
    if (!f.mode.empty()) rc.decode_mode = parse_decode_mode(f.mode);
    if (f.jobs) rc.jobs = *f.jobs;

    if (pre->parsed()) cmd_preprocess(rc, f);
    else if (train->parsed()) cmd_train(rc, f);
    else if (train_lm->parsed()) cmd_train_lm(rc, f);
    else if (attack->parsed()) cmd_attack(rc, f, false);
    else if (eval_hits->parsed()) cmd_attack(rc, f, true);
    else if (neg_mal->parsed()) cmd_negtrain_mal(rc, f);
    else if (neg_freq->parsed()) cmd_negtrain_freq(rc, f);
    else if (decode->parsed()) cmd_decode(rc, f);
    else if (div->parsed()) cmd_eval_diversity(f);
    else if (gan->parsed()) cmd_gan_train(rc, f);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
