// Runs the negtrain executable end to end on tests/data.
// Needs NEGTRAIN_CLI, NEGTRAIN_TEST_DATA and NEGTRAIN_CLI_WORK in the environment.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "negtrain/checkpoint.hpp"
#include "negtrain/metrics.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace negtrain;
using namespace negtrain::cli;

namespace {

std::string env(const char* name) {
  const char* v = std::getenv(name);
  if (!v) throw std::runtime_error(std::string("missing environment variable ") + name);
  return v;
}

const std::string& cli() {
  static const std::string p = env("NEGTRAIN_CLI");
  return p;
}
fs::path data(const std::string& name) { return fs::path(env("NEGTRAIN_TEST_DATA")) / name; }
fs::path work(const std::string& name) { return fs::path(env("NEGTRAIN_CLI_WORK")) / name; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int status;
  std::string out, err;
};

Run run(const std::string& args) {
  static int counter = 0;
  const auto out = work("stdout." + std::to_string(counter));
  const auto err = work("stderr." + std::to_string(counter++));
  const std::string cmd = "\"" + cli() + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {status, slurp(out), slurp(err)};
}

Run must(const std::string& args) {
  Run r = run(args);
  INFO("args: " << args << "\nstderr: " << r.err);
  REQUIRE(r.status == 0);
  return r;
}

std::string conf() { return "--config \"" + data("small.conf").string() + "\" "; }
std::string q(const fs::path& p) { return "\"" + p.string() + "\" "; }

// Shared artifacts, built once.
struct Pipeline {
  fs::path dir = work("pipe");
  Pipeline() {
    fs::remove_all(dir);
    fs::create_directories(dir);
    must("preprocess " + conf() + "--corpus " + q(data("dialogues.txt")) + "--out " + q(dir));
    const std::string common = conf() + "--corpus " + q(dir / "pairs.tsv") + "--vocab " + q(dir / "vocab.txt");
    must("train " + common + "--valid " + q(dir / "pairs.tsv") + "--out " + q(dir / "s2s.ckpt") + "--log " +
         q(dir / "train.tsv"));
    must("train-lm " + common + "--out " + q(dir / "lm.ckpt"));
  }
  std::string model_args() const {
    return conf() + "--checkpoint " + q(dir / "s2s.ckpt") + "--vocab " + q(dir / "vocab.txt");
  }
};

const Pipeline& pipeline() {
  static const Pipeline p;
  return p;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, '\t');) out.push_back(f);
  return out;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config text parsing") {
  const auto kv = parse_config_text("# header\nseed = 5\n\n  model.hidden_dim=32   # trailing\nfrequent.fwa_words = <eos> you i\n");
  CHECK(kv.size() == 3);
  CHECK(kv.at("seed") == "5");
  CHECK(kv.at("model.hidden_dim") == "32");
  CHECK(kv.at("frequent.fwa_words") == "<eos> you i");

  CHECK_THROWS_WITH_AS(parse_config_text("seed = 1\nseed = 2\n"), doctest::Contains("line 2"), Error);
  CHECK_THROWS_WITH_AS(parse_config_text("a = 1\nnot a pair\n"), doctest::Contains("line 2"), Error);

  RunConfig rc;
  CHECK_THROWS_AS(rc.set("model.hiden_dim", "3"), Error);
  CHECK_THROWS_AS(rc.set("model.hidden_dim", "3x"), Error);
  CHECK_THROWS_AS(rc.set("hit.criterion", "o-best"), Error);
  rc.set("hit.t_out", "-2.5");
  CHECK(*rc.t_out == -2.5);
  rc.set("hit.t_out", "none");
  CHECK(!rc.t_out);
  rc.set("disc.windows", "2, 3 4");
  CHECK(rc.disc.windows == std::vector<std::size_t>{2, 3, 4});
}

TEST_CASE("every config entry survives a write/read round trip") {
  RunConfig a;
  a.seed = 99;
  a.model.dropout_rate = 0.125;
  a.criterion = HitCriterion::IoSampleAvg;
  a.t_in = -3.75;
  a.decode_mode = DecodeMode::Mmi;
  a.frequent.fwa_words = {"x", "y"};
  std::string text;
  for (const auto& [k, v] : a.entries()) text += k + " = " + v + "\n";
  RunConfig b;
  apply_config(b, parse_config_text(text));
  CHECK(b.entries() == a.entries());
  CHECK(a.keys().size() == a.entries().size());
}

TEST_CASE("preprocess is deterministic and the pair count matches a recount") {
  const auto d1 = work("pre1"), d2 = work("pre2");
  must("preprocess " + conf() + "--corpus " + q(data("dialogues.txt")) + "--out " + q(d1));
  const Run r = must("preprocess " + conf() + "--corpus " + q(data("dialogues.txt")) + "--out " + q(d2));
  CHECK(slurp(d1 / "vocab.txt") == slurp(d2 / "vocab.txt"));
  CHECK(slurp(d1 / "pairs.tsv") == slurp(d2 / "pairs.tsv"));

  std::size_t expected = 0, run_len = 0;
  for (const auto& l : lines_of(slurp(data("dialogues.txt")) + "\n")) {
    if (l.find_first_not_of(" \t\r") == std::string::npos) {
      if (run_len > 0) expected += run_len - 1;
      run_len = 0;
    } else {
      ++run_len;
    }
  }
  if (run_len > 0) expected += run_len - 1;
  CHECK(read_pairs(d1 / "pairs.tsv").size() == expected);
  CHECK(r.out.find("pairs=" + std::to_string(expected)) != std::string::npos);

  // reusing the vocabulary gives the same encoding
  const auto d3 = work("pre3");
  must("preprocess " + conf() + "--corpus " + q(data("dialogues.txt")) + "--vocab " + q(d1 / "vocab.txt") +
       "--out " + q(d3));
  CHECK(slurp(d3 / "pairs.tsv") == slurp(d1 / "pairs.tsv"));
}

TEST_CASE("preprocess of an empty corpus gives a specials-only vocabulary") {
  const auto raw = work("empty.txt");
  std::ofstream(raw).close();
  must("preprocess --corpus " + q(raw) + "--out " + q(work("pre_empty")));
  CHECK(Vocabulary::load(work("pre_empty") / "vocab.txt").size() == kNumSpecials);
  CHECK(read_pairs(work("pre_empty") / "pairs.tsv").empty());
}

TEST_CASE("preprocess reports malformed lines with line numbers") {
  const auto raw = work("ws.txt");
  std::ofstream(raw) << "hello there\nhi\n   \nhow are you\nfine\n";
  const Run r = must("preprocess --corpus " + q(raw) + "--out " + q(work("pre_ws")));
  CHECK(r.err.find("line 3") != std::string::npos);
}

TEST_CASE("missing inputs and bad flags exit non-zero with a message") {
  const auto& p = pipeline();
  Run r = run("train --corpus " + q(work("nope.tsv")) + "--vocab " + q(p.dir / "vocab.txt") + "--out " +
              q(work("x.ckpt")));
  CHECK(r.status != 0);
  CHECK(r.err.find("error: --corpus") != std::string::npos);

  r = run("decode " + p.model_args() + "--out " + q(work("x.txt")));
  CHECK(r.status != 0);
  CHECK(r.err.find("--corpus is required") != std::string::npos);

  r = run("decode " + p.model_args() + "--corpus " + q(p.dir / "pairs.tsv") + "--mode mmi --out " +
          q(work("x.txt")));
  CHECK(r.status != 0);
  CHECK(r.err.find("--lm-checkpoint") != std::string::npos);

  const auto bad = work("bad.conf");
  std::ofstream(bad) << "model.hiden_dim = 4\n";
  r = run("train --config " + q(bad) + "--corpus " + q(p.dir / "pairs.tsv") + "--vocab " +
          q(p.dir / "vocab.txt") + "--out " + q(work("x.ckpt")));
  CHECK(r.status != 0);
  CHECK(r.err.find("unknown config key 'model.hiden_dim'") != std::string::npos);

  r = run("eval-hits " + p.model_args() + "--targets " + q(data("targets.txt")) + "--criterion o-best --out " +
          q(work("x.tsv")));
  CHECK(r.status != 0);
}

TEST_CASE("checkpoints record the effective config and flags override the file") {
  const auto& p = pipeline();
  const auto ckpt = load_checkpoint(p.dir / "s2s.ckpt");
  CHECK(ckpt.metadata.at("command") == "train");
  CHECK(ckpt.metadata.at("config").at("seed") == "11");
  CHECK(ckpt.metadata.at("config").at("model.hidden_dim") == "24");

  const auto out = work("seed_override.ckpt");
  must("negtrain-freq " + p.model_args() + "--corpus " + q(p.dir / "pairs.tsv") + "--seed 5 --lr 0.25 --r-thres 0.3 "
       "--lambda-pos 0.5 --iterations 1 --out " + q(out));
  const auto meta = load_checkpoint(out).metadata.at("config");
  CHECK(meta.at("seed") == "5");
  CHECK(meta.at("frequent.lr") == "0.25");
  CHECK(meta.at("frequent.r_thres") == "0.3");
  CHECK(meta.at("frequent.lambda_pos") == "0.5");
  CHECK(meta.at("frequent.iterations") == "1");
}

TEST_CASE("greedy decode is byte-identical across runs") {
  const auto& p = pipeline();
  const std::string args = "decode " + p.model_args() + "--corpus " + q(p.dir / "pairs.tsv") + "--mode greedy --out ";
  must(args + q(work("greedy1.txt")));
  must(args + q(work("greedy2.txt")));
  const auto a = slurp(work("greedy1.txt"));
  CHECK(!a.empty());
  CHECK(a == slurp(work("greedy2.txt")));
  CHECK(lines_of(a).size() == read_pairs(p.dir / "pairs.tsv").size());

  const std::string sargs = "decode " + p.model_args() + "--corpus " + q(p.dir / "pairs.tsv") + "--mode sample --out ";
  must(sargs + q(work("sample1.txt")));
  must(sargs + q(work("sample2.txt")));
  CHECK(slurp(work("sample1.txt")) == slurp(work("sample2.txt")));

  must("decode " + p.model_args() + "--lm-checkpoint " + q(p.dir / "lm.ckpt") + "--corpus " +
       q(p.dir / "pairs.tsv") + "--mode mmi --out " + q(work("mmi.txt")));
  CHECK(lines_of(slurp(work("mmi.txt"))).size() == read_pairs(p.dir / "pairs.tsv").size());
}

TEST_CASE("eval-diversity on decode output matches the in-process metrics") {
  const auto& p = pipeline();
  must("decode " + p.model_args() + "--corpus " + q(p.dir / "pairs.tsv") + "--out " + q(work("div_in.txt")));
  must("eval-diversity --corpus " + q(work("div_in.txt")) + "--out " + q(work("div.tsv")));

  const auto model = seq2seq_from_checkpoint(load_checkpoint(p.dir / "s2s.ckpt"));
  RunConfig rc;
  apply_config(rc, read_config_file(data("small.conf")));
  std::vector<TokenSeq> responses;
  for (const auto& pair : read_pairs(p.dir / "pairs.tsv"))
    responses.push_back(strip_eos(model.greedy_decode(pair.input_ids, rc.decode_max_len)));
  const auto rep = diversity_report(responses);

  const auto rows = lines_of(slurp(work("div.tsv")));
  REQUIRE(rows.size() == 3);
  const auto f = split_tabs(rows[2]);
  REQUIRE(f.size() == 6);
  CHECK(std::stoul(f[0]) == rep.num_responses);
  CHECK(std::stoul(f[1]) == rep.num_distinct);
  CHECK(std::abs(std::stod(f[2]) - rep.max_ratio) <= 1e-12);
  for (std::size_t n = 1; n <= 3; ++n) {
    if (rep.ent.count(n)) CHECK(std::abs(std::stod(f[2 + n]) - rep.ent.at(n)) <= 1e-12);
    else CHECK(f[2 + n] == "nan");
  }
}

TEST_CASE("eval-hits summary agrees with the hit column, for any worker count") {
  const auto& p = pipeline();
  std::size_t total_hits = 0;
  for (const char* criterion : {"o-greedy", "o-sample-min", "io-sample-avg"}) {
    CAPTURE(criterion);
    const std::string base = "eval-hits " + p.model_args() + "--lm-checkpoint " + q(p.dir / "lm.ckpt") +
                             "--targets " + q(data("targets.txt")) + "--test " + q(p.dir / "pairs.tsv") +
                             "--criterion " + criterion + " ";
    const Run r = must(base + "--jobs 1 --out " + q(work("hits1.tsv")));
    must(base + "--jobs 3 --out " + q(work("hits3.tsv")));
    const auto text = slurp(work("hits1.tsv"));
    CHECK(text == slurp(work("hits3.tsv")));

    const auto rows = lines_of(text);
    REQUIRE(rows.size() >= 2);
    const auto header = split_tabs(rows[0]);
    const auto hit_col = std::find(header.begin(), header.end(), "hit") - header.begin();
    REQUIRE(hit_col < static_cast<long>(header.size()));
    std::size_t targets = 0, hits = 0;
    for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
      ++targets;
      hits += split_tabs(rows[i]).at(hit_col) == "1";
    }
    const std::string summary = rows.back();
    CHECK(summary.rfind("#summary criterion=" + std::string(criterion), 0) == 0);
    CHECK(summary.find(" targets=" + std::to_string(targets) + " ") != std::string::npos);
    CHECK(summary.find(" hits=" + std::to_string(hits) + " ") != std::string::npos);
    CHECK(r.out.rfind(summary, 0) == 0);
    total_hits += hits;

    // attack writes the same rows without the summary
    must("attack" + base.substr(std::string("eval-hits").size()) + "--out " + q(work("attack.tsv")));
    CHECK(slurp(work("attack.tsv")) + summary + "\n" == text);
  }
  CHECK(total_hits > 0);  // the target list has responses the toy model produces
}

TEST_CASE("training subcommands write checkpoints and logs") {
  const auto& p = pipeline();
  CHECK(lines_of(slurp(p.dir / "train.tsv")).size() > 1);

  must("negtrain-mal " + p.model_args() + "--targets " + q(data("targets.txt")) + "--corpus " +
       q(p.dir / "pairs.tsv") + "--test " + q(p.dir / "pairs.tsv") + "--iterations 1 --log " +
       q(work("mal.tsv")) + "--out " + q(work("mal.ckpt")));
  CHECK(load_checkpoint(work("mal.ckpt")).metadata.at("command") == "negtrain-mal");
  CHECK(lines_of(slurp(work("mal.tsv"))).size() == 2);

  must("gan-train " + p.model_args() + "--corpus " + q(p.dir / "pairs.tsv") + "--iterations 1 --log " +
       q(work("gan.tsv")) + "--out " + q(work("gan.ckpt")));
  CHECK(fs::exists(work("gan.ckpt.disc")));
  must("gan-train " + p.model_args() + "--corpus " + q(p.dir / "pairs.tsv") + "--disc-checkpoint " +
       q(work("gan.ckpt.disc")) + "--iterations 1 --out " + q(work("gan2.ckpt")) + "--disc-out " +
       q(work("gan2.disc")));
  CHECK(fs::exists(work("gan2.disc")));

  // same inputs and seed give the same checkpoint bytes
  must("negtrain-freq " + p.model_args() + "--corpus " + q(p.dir / "pairs.tsv") + "--out " + q(work("f1.ckpt")));
  must("negtrain-freq " + p.model_args() + "--corpus " + q(p.dir / "pairs.tsv") + "--out " + q(work("f2.ckpt")));
  CHECK(slurp(work("f1.ckpt")) == slurp(work("f2.ckpt")));
}

}  // TEST_SUITE
