#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "negtrain/checkpoint.hpp"
#include "negtrain/corpus.hpp"
#include "negtrain/gan.hpp"
#include "negtrain/hit_eval.hpp"
#include "negtrain/language_model.hpp"
#include "negtrain/metrics.hpp"
#include "negtrain/negative_training.hpp"
#include "negtrain/rng.hpp"
#include "negtrain/seq2seq.hpp"
#include "negtrain/training.hpp"
#include "negtrain/trigger_search.hpp"

namespace py = pybind11;
using namespace negtrain;

namespace {

using Pairs = std::vector<DialoguePair>;
using Release = py::call_guard<py::gil_scoped_release>;

const Pairs* opt(const std::optional<Pairs>& v) { return v ? &*v : nullptr; }

template <class Params>
py::dict params_dict(const Params& p) {
  py::dict out;
  p.for_each([&](const std::string& name, const auto& m) { out[py::str(name)] = Mat(m); });
  return out;
}

template <class Params>
void set_param(Params& p, const std::string& name, const Mat& value) {
  bool found = false;
  p.for_each([&](const std::string& n, auto& m) {
    if (n != name) return;
    if (value.rows() != m.rows() || value.cols() != m.cols()) throw Error("parameter '" + name + "' has wrong shape");
    m = value;
    found = true;
  });
  if (!found) throw Error("no parameter named '" + name + "'");
}

template <class Model>
void save_model(const Model& m, const std::filesystem::path& path) {
  save_checkpoint(path, to_checkpoint(m));
}

}  // namespace

PYBIND11_MODULE(_negtrain, m) {
  m.doc() = "Negative training for neural dialogue response generation";

  auto error = py::register_exception<Error>(m, "Error", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", error.ptr());

  m.attr("PAD") = kPad;
  m.attr("UNK") = kUnk;
  m.attr("BOS") = kBos;
  m.attr("EOS") = kEos;

  m.def("derive_seed", [](std::uint64_t base, const std::string& stream, std::uint64_t index) {
    return derive_seed(base, stream, index);
  }, py::arg("base"), py::arg("stream"), py::arg("index") = 0);

  // corpus
  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<>())
      .def("__len__", &Vocabulary::size)
      .def("add", &Vocabulary::add)
      .def("index_of", &Vocabulary::index_of)
      .def("__contains__", &Vocabulary::contains)
      .def("token", &Vocabulary::token)
      .def_property_readonly("tokens", &Vocabulary::tokens)
      .def("encode", &Vocabulary::encode)
      .def("decode", &Vocabulary::decode)
      .def("save", &Vocabulary::save)
      .def_static("load", &Vocabulary::load)
      .def("__eq__", [](const Vocabulary& a, const Vocabulary& b) { return a == b; });

  py::class_<CorpusConfig>(m, "CorpusConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &CorpusConfig::vocab_size)
      .def_readwrite("max_in", &CorpusConfig::max_in)
      .def_readwrite("max_out", &CorpusConfig::max_out)
      .def_readwrite("batch_size", &CorpusConfig::batch_size);

  py::class_<DialoguePair>(m, "DialoguePair")
      .def(py::init<>())
      .def(py::init([](TokenSeq in, TokenSeq out) { return DialoguePair{std::move(in), std::move(out)}; }),
           py::arg("input_ids"), py::arg("target_ids"))
      .def_readwrite("input_ids", &DialoguePair::input_ids)
      .def_readwrite("target_ids", &DialoguePair::target_ids)
      .def("__eq__", [](const DialoguePair& a, const DialoguePair& b) { return a == b; })
      .def("__repr__", [](const DialoguePair& p) {
        return "DialoguePair(" + std::to_string(p.input_ids.size()) + " -> " + std::to_string(p.target_ids.size()) + ")";
      });

  m.def("preprocess_utterance", &preprocess_utterance);
  m.def("build_vocab", &build_vocab, py::arg("corpus"), py::arg("max_tokens"));
  m.def("encode_input", &encode_input);
  m.def("encode_target", &encode_target);
  m.def("parse_corpus", [](const std::string& text) {
    auto cf = parse_corpus(text);
    return py::make_tuple(cf.dialogues, cf.warnings);
  }, "returns (dialogues, warnings)");
  m.def("tokenize_corpus", &tokenize_corpus);
  m.def("make_all_pairs", &make_all_pairs);
  m.def("responses_of", &responses_of);
  m.def("read_pairs", &read_pairs);
  m.def("write_pairs", &write_pairs);

  // models
  py::class_<TokenLogProbs>(m, "TokenLogProbs")
      .def_readonly("per_token", &TokenLogProbs::per_token)
      .def_readonly("total", &TokenLogProbs::total)
      .def_readonly("mean", &TokenLogProbs::mean)
      .def_readonly("min", &TokenLogProbs::min);

  py::class_<Seq2SeqConfig>(m, "Seq2SeqConfig")
      .def(py::init([](std::size_t v, std::size_t e, std::size_t h, double dropout) {
             Seq2SeqConfig c;
             c.vocab_size = v;
             c.embedding_dim = e;
             c.hidden_dim = h;
             c.dropout_rate = dropout;
             return c;
           }),
           py::arg("vocab_size"), py::arg("embedding_dim") = 300, py::arg("hidden_dim") = 600,
           py::arg("dropout_rate") = 0.0)
      .def_readwrite("vocab_size", &Seq2SeqConfig::vocab_size)
      .def_readwrite("embedding_dim", &Seq2SeqConfig::embedding_dim)
      .def_readwrite("hidden_dim", &Seq2SeqConfig::hidden_dim)
      .def_readwrite("dropout_rate", &Seq2SeqConfig::dropout_rate);

  py::class_<Seq2Seq>(m, "Seq2Seq")
      .def_static("initialized", &Seq2Seq::initialized, py::arg("config"), py::arg("seed"), py::arg("radius") = 0.1)
      .def_static("load", [](const std::filesystem::path& p) { return seq2seq_from_checkpoint(load_checkpoint(p)); })
      .def("save", &save_model<Seq2Seq>)
      .def_property_readonly("config", &Seq2Seq::config)
      .def_property_readonly("vocab_size", &Seq2Seq::vocab_size)
      .def("parameters", [](const Seq2Seq& s) { return params_dict(s.params()); })
      .def("set_parameter", [](Seq2Seq& s, const std::string& n, const Mat& v) { set_param(s.params(), n, v); })
      .def("step_distribution", &Seq2Seq::step_distribution, py::arg("prefix_ids"), py::arg("input_ids"))
      .def("sequence_logprobs", &Seq2Seq::sequence_logprobs, py::arg("input_ids"), py::arg("target_ids"))
      .def("greedy_decode", &Seq2Seq::greedy_decode, py::arg("input_ids"), py::arg("max_len") = 20)
      .def("sample_decode", &Seq2Seq::sample_decode, py::arg("input_ids"), py::arg("max_len"), py::arg("seed"))
      .def("mmi_antilm_decode", &Seq2Seq::mmi_antilm_decode, py::arg("input_ids"), py::arg("lm"),
           py::arg("lambda_mmi") = 0.5, py::arg("gamma") = 5, py::arg("max_len") = 20)
      .def("attention_mask", [](const Seq2Seq& s, const TokenSeq& input_ids, const Vec& state) {
        return s.attention_mask(state, s.encode(input_ids));
      }, py::arg("input_ids"), py::arg("decoder_state"))
      .def("input_onehot_gradient", &Seq2Seq::input_onehot_gradient, py::arg("input_ids"), py::arg("target_ids"));

  py::class_<LanguageModelConfig>(m, "LanguageModelConfig")
      .def(py::init([](std::size_t v, std::size_t e, std::size_t h, double dropout) {
             LanguageModelConfig c;
             c.vocab_size = v;
             c.embedding_dim = e;
             c.hidden_dim = h;
             c.dropout_rate = dropout;
             return c;
           }),
           py::arg("vocab_size"), py::arg("embedding_dim") = 300, py::arg("hidden_dim") = 600,
           py::arg("dropout_rate") = 0.0)
      .def_readwrite("vocab_size", &LanguageModelConfig::vocab_size)
      .def_readwrite("embedding_dim", &LanguageModelConfig::embedding_dim)
      .def_readwrite("hidden_dim", &LanguageModelConfig::hidden_dim)
      .def_readwrite("dropout_rate", &LanguageModelConfig::dropout_rate);

  py::class_<LanguageModel>(m, "LanguageModel")
      .def_static("initialized", &LanguageModel::initialized, py::arg("config"), py::arg("seed"),
                  py::arg("radius") = 0.1)
      .def_static("load",
                  [](const std::filesystem::path& p) { return language_model_from_checkpoint(load_checkpoint(p)); })
      .def("save", &save_model<LanguageModel>)
      .def_property_readonly("config", &LanguageModel::config)
      .def("parameters", [](const LanguageModel& s) { return params_dict(s.params()); })
      .def("step_distribution", &LanguageModel::step_distribution, py::arg("prefix_ids"))
      .def("lm_logprobs", &LanguageModel::lm_logprobs, py::arg("token_ids"))
      .def("input_onehot_gradient", &LanguageModel::input_onehot_gradient, py::arg("token_ids"));

  // training
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("start_lr", &TrainConfig::start_lr)
      .def_readwrite("epochs_fixed", &TrainConfig::epochs_fixed)
      .def_readwrite("epochs_halving", &TrainConfig::epochs_halving)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<EpochLog>(m, "EpochLog")
      .def_readonly("epoch", &EpochLog::epoch)
      .def_readonly("lr", &EpochLog::lr)
      .def_readonly("train_nll", &EpochLog::train_nll)
      .def_readonly("valid_ppl", &EpochLog::valid_ppl);

  m.def("perplexity", [](const Seq2Seq& model, const Pairs& pairs) { return perplexity(model, pairs).ppl; },
        Release());
  m.def("lm_perplexity",
        [](const LanguageModel& lm, const std::vector<TokenSeq>& s) { return perplexity(lm, s).ppl; }, Release());
  m.def("train_mle",
        [](Seq2Seq& model, const Pairs& pairs, const TrainConfig& cfg, const std::optional<Pairs>& valid) {
          return train_mle(model, pairs, cfg, opt(valid));
        },
        py::arg("model"), py::arg("pairs"), py::arg("config"), py::arg("validation") = std::nullopt, Release());
  m.def("train_lm",
        [](LanguageModel& lm, const std::vector<TokenSeq>& s, const TrainConfig& cfg,
           const std::optional<std::vector<TokenSeq>>& valid) { return train_lm(lm, s, cfg, valid ? &*valid : nullptr); },
        py::arg("model"), py::arg("sentences"), py::arg("config"), py::arg("validation") = std::nullopt, Release());

  // trigger search
  py::class_<TriggerSearchConfig>(m, "TriggerSearchConfig")
      .def(py::init<>())
      .def_readwrite("max_sweeps", &TriggerSearchConfig::max_sweeps)
      .def_readwrite("candidates", &TriggerSearchConfig::candidates)
      .def_readwrite("restarts", &TriggerSearchConfig::restarts)
      .def_readwrite("lambda_in", &TriggerSearchConfig::lambda_in)
      .def_readwrite("input_length", &TriggerSearchConfig::input_length)
      .def_readwrite("seed", &TriggerSearchConfig::seed);

  py::class_<TriggerResult>(m, "TriggerResult")
      .def_readonly("trigger_ids", &TriggerResult::trigger_ids)
      .def_readonly("objective_value", &TriggerResult::objective_value)
      .def_readonly("nll_term", &TriggerResult::nll_term)
      .def_readonly("lm_term", &TriggerResult::lm_term)
      .def_readonly("sweeps_used", &TriggerResult::sweeps_used)
      .def_readonly("restart_index", &TriggerResult::restart_index);

  m.def("objective",
        [](const Seq2Seq& model, const LanguageModel* lm, const TokenSeq& x, const TokenSeq& y, double lambda_in) {
          const auto v = objective(model, lm, x, y, lambda_in);
          return py::make_tuple(v.value, v.nll_term, v.lm_term);
        },
        py::arg("model"), py::arg("lm"), py::arg("input_ids"), py::arg("target_ids"), py::arg("lambda_in") = 0.0,
        "returns (value, nll_term, lm_term)");
  m.def("gibbs_enum",
        [](const Seq2Seq& model, const LanguageModel* lm, const TokenSeq& target, const TriggerSearchConfig& cfg) {
          return gibbs_enum(model, lm, target, cfg);
        },
        py::arg("model"), py::arg("lm"), py::arg("target_ids"), py::arg("config"), Release());

  // hit evaluation
  py::enum_<HitCriterion>(m, "HitCriterion")
      .value("O_GREEDY", HitCriterion::OGreedy)
      .value("O_SAMPLE_AVG", HitCriterion::OSampleAvg)
      .value("O_SAMPLE_MIN", HitCriterion::OSampleMin)
      .value("IO_SAMPLE_AVG", HitCriterion::IoSampleAvg)
      .value("IO_SAMPLE_MIN", HitCriterion::IoSampleMin)
      .def_static("parse", [](const std::string& s) { return parse_criterion(s); })
      .def("__str__", [](HitCriterion c) { return to_string(c); });

  py::class_<HitThresholds>(m, "HitThresholds")
      .def(py::init([](double t_out, std::optional<double> t_in) { return HitThresholds{t_out, t_in}; }),
           py::arg("t_out"), py::arg("t_in") = std::nullopt)
      .def_readwrite("t_out", &HitThresholds::t_out)
      .def_readwrite("t_in", &HitThresholds::t_in);

  py::class_<EncodedTarget>(m, "EncodedTarget")
      .def_readonly("text", &EncodedTarget::text)
      .def_readonly("ids", &EncodedTarget::ids)
      .def_readonly("has_oov", &EncodedTarget::has_oov)
      .def_readonly("too_long", &EncodedTarget::too_long);

  py::class_<HitReport>(m, "HitReport")
      .def_readonly("target", &HitReport::target)
      .def_readonly("trigger", &HitReport::trigger)
      .def_readonly("hit", &HitReport::hit);

  py::class_<HitRateResult>(m, "HitRateResult")
      .def_readonly("criterion", &HitRateResult::criterion)
      .def_readonly("num_targets", &HitRateResult::num_targets)
      .def_readonly("hits", &HitRateResult::hits)
      .def_readonly("rate", &HitRateResult::rate)
      .def_readonly("reports", &HitRateResult::reports)
      .def("summary", [](const HitRateResult& r) { return summary_line(r); });

  m.def("search_config_for", &search_config_for);
  m.def("compute_thresholds", &compute_thresholds, py::arg("model"), py::arg("lm"), py::arg("test_pairs"), Release());
  m.def("classify_hit", &classify_hit, py::arg("model"), py::arg("lm"), py::arg("input_ids"), py::arg("target_ids"),
        py::arg("criterion"), py::arg("thresholds"), py::arg("max_len") = 20);
  m.def("encode_target_text", &encode_target_text, py::arg("vocab"), py::arg("text"), py::arg("max_out") = 20);
  m.def("hit_rate", &hit_rate, py::arg("model"), py::arg("lm"), py::arg("targets"), py::arg("criterion"),
        py::arg("thresholds"), py::arg("search"), py::arg("max_out") = 20, py::arg("jobs") = 1, Release());
  m.def("attack_report", [](const Vocabulary& vocab, const HitRateResult& r) {
    std::ostringstream s;
    write_attack_report(s, vocab, r.reports);
    return s.str();
  });

  // negative training
  py::enum_<NegTrainMode>(m, "NegTrainMode")
      .value("MALICIOUS", NegTrainMode::Malicious)
      .value("FREQUENT", NegTrainMode::Frequent);

  py::class_<NegTrainConfig>(m, "NegTrainConfig")
      .def(py::init<>())
      .def_static("malicious_defaults", &NegTrainConfig::malicious_defaults)
      .def_static("frequent_defaults", &NegTrainConfig::frequent_defaults)
      .def_readwrite("lambda_pos", &NegTrainConfig::lambda_pos)
      .def_readwrite("lr", &NegTrainConfig::lr)
      .def_readwrite("batch_size", &NegTrainConfig::batch_size)
      .def_readwrite("iterations", &NegTrainConfig::iterations)
      .def_readwrite("r_thres", &NegTrainConfig::r_thres)
      .def_readwrite("fwa_words", &NegTrainConfig::fwa_words)
      .def_readwrite("eos_scale", &NegTrainConfig::eos_scale)
      .def_readwrite("clip_norm", &NegTrainConfig::clip_norm)
      .def_readwrite("window_batches", &NegTrainConfig::window_batches)
      .def_readwrite("max_decode_len", &NegTrainConfig::max_decode_len)
      .def_readwrite("sample_responses", &NegTrainConfig::sample_responses)
      .def_readwrite("seed", &NegTrainConfig::seed);

  py::class_<MaliciousIteration>(m, "MaliciousIteration")
      .def_readonly("iteration", &MaliciousIteration::iteration)
      .def_readonly("hits", &MaliciousIteration::hits)
      .def_readonly("hit_rate", &MaliciousIteration::hit_rate)
      .def_readonly("negative_examples", &MaliciousIteration::negative_examples)
      .def_readonly("valid_ppl", &MaliciousIteration::valid_ppl);

  py::class_<FrequentEpoch>(m, "FrequentEpoch")
      .def_readonly("epoch", &FrequentEpoch::epoch)
      .def_readonly("negative_examples", &FrequentEpoch::negative_examples)
      .def_readonly("max_ratio", &FrequentEpoch::max_ratio)
      .def_readonly("ent2", &FrequentEpoch::ent2)
      .def_readonly("ent3", &FrequentEpoch::ent3)
      .def_readonly("valid_ppl", &FrequentEpoch::valid_ppl);

  m.def("resolve_fwa_set", &resolve_fwa_set);
  m.def("fwa_mask", &fwa_mask, py::arg("target_ids"), py::arg("mode"), py::arg("avoid"), py::arg("eos_scale") = 0.1);
  m.def("negative_step", &negative_step, py::arg("model"), py::arg("input_ids"), py::arg("target_ids"),
        py::arg("mask"), py::arg("lr"), py::arg("clip_norm") = 0.0);
  m.def("positive_step", &positive_step, py::arg("model"), py::arg("input_ids"), py::arg("target_ids"),
        py::arg("lambda_pos"), py::arg("lr"), py::arg("clip_norm") = 0.0);
  m.def("neg_train_malicious",
        [](Seq2Seq& model, const LanguageModel* lm, const std::vector<TokenSeq>& targets, const Pairs& train,
           const HitThresholds& t, HitCriterion c, const TriggerSearchConfig& search, const NegTrainConfig& cfg,
           const std::set<TokenId>& fwa, const std::optional<Pairs>& valid, std::size_t max_out) {
          return neg_train_malicious(model, lm, targets, train, t, c, search, cfg, fwa, opt(valid), max_out);
        },
        py::arg("model"), py::arg("lm"), py::arg("targets"), py::arg("train_pairs"), py::arg("thresholds"),
        py::arg("criterion"), py::arg("search"), py::arg("config"), py::arg("fwa_set"),
        py::arg("validation") = std::nullopt, py::arg("max_out") = 20, Release());
  m.def("neg_train_frequent",
        [](Seq2Seq& model, const Pairs& train, const NegTrainConfig& cfg, const std::optional<Pairs>& valid) {
          return neg_train_frequent(model, train, cfg, opt(valid));
        },
        py::arg("model"), py::arg("train_pairs"), py::arg("config"), py::arg("validation") = std::nullopt, Release());
  m.def("greedy_responses", &greedy_responses, py::arg("model"), py::arg("pairs"), py::arg("max_len") = 20,
        Release());

  // metrics
  m.def("max_ratio", &max_ratio<std::string>);
  m.def("ent_n", &ent_n<std::string>, py::arg("responses"), py::arg("n"));
  m.def("max_ratio_ids", &max_ratio<TokenId>);
  m.def("ent_n_ids", &ent_n<TokenId>, py::arg("responses"), py::arg("n"));
  m.def("strip_eos", py::overload_cast<const TokenSeq&>(&strip_eos));

  py::class_<FrequencyWindow>(m, "FrequencyWindow")
      .def(py::init<std::size_t>(), py::arg("capacity") = FrequencyWindow::kDefaultCapacity)
      .def("push", &FrequencyWindow::push)
      .def("ratio", &FrequencyWindow::ratio)
      .def("count", &FrequencyWindow::count)
      .def_property_readonly("total", &FrequencyWindow::total)
      .def_property_readonly("num_batches", &FrequencyWindow::num_batches);

  // adversarial baseline
  py::class_<DiscriminatorConfig>(m, "DiscriminatorConfig")
      .def(py::init([](std::size_t v) {
             DiscriminatorConfig c;
             c.vocab_size = v;
             return c;
           }),
           py::arg("vocab_size"))
      .def_readwrite("vocab_size", &DiscriminatorConfig::vocab_size)
      .def_readwrite("embedding_dim", &DiscriminatorConfig::embedding_dim)
      .def_readwrite("filters", &DiscriminatorConfig::filters)
      .def_readwrite("windows", &DiscriminatorConfig::windows)
      .def_readwrite("highway_layers", &DiscriminatorConfig::highway_layers)
      .def_readwrite("hidden_dim", &DiscriminatorConfig::hidden_dim);

  py::class_<Discriminator>(m, "Discriminator")
      .def_static("initialized", &Discriminator::initialized, py::arg("config"), py::arg("seed"),
                  py::arg("radius") = 0.1)
      .def("discriminate", &Discriminator::discriminate, py::arg("input_ids"), py::arg("response_ids"))
      .def("save", &save_model<Discriminator>)
      .def_static("load",
                  [](const std::filesystem::path& p) { return discriminator_from_checkpoint(load_checkpoint(p)); });

  py::class_<GanConfig>(m, "GanConfig")
      .def(py::init<>())
      .def_readwrite("alpha_g", &GanConfig::alpha_g)
      .def_readwrite("alpha_d", &GanConfig::alpha_d)
      .def_readwrite("teacher_forcing_lr", &GanConfig::teacher_forcing_lr)
      .def_readwrite("d_steps_per_g", &GanConfig::d_steps_per_g)
      .def_readwrite("teacher_forcing", &GanConfig::teacher_forcing)
      .def_readwrite("batch_size", &GanConfig::batch_size)
      .def_readwrite("epochs", &GanConfig::epochs)
      .def_readwrite("max_decode_len", &GanConfig::max_decode_len)
      .def_readwrite("clip_norm", &GanConfig::clip_norm)
      .def_readwrite("seed", &GanConfig::seed);

  py::class_<GanEpoch>(m, "GanEpoch")
      .def_readonly("epoch", &GanEpoch::epoch)
      .def_readonly("d_updates", &GanEpoch::d_updates)
      .def_readonly("g_updates", &GanEpoch::g_updates)
      .def_readonly("tf_updates", &GanEpoch::tf_updates)
      .def_readonly("d_loss", &GanEpoch::d_loss)
      .def_readonly("disc_accuracy", &GanEpoch::disc_accuracy)
      .def_readonly("valid_ppl", &GanEpoch::valid_ppl);

  m.def("gan_train",
        [](Seq2Seq& gen, Discriminator& disc, const Pairs& pairs, const GanConfig& cfg,
           const std::optional<Pairs>& valid) { return gan_train(gen, disc, pairs, cfg, opt(valid)); },
        py::arg("generator"), py::arg("discriminator"), py::arg("pairs"), py::arg("config"),
        py::arg("validation") = std::nullopt, Release());
}
