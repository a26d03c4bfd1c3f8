#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "qag/corpus.hpp"
#include "qag/model_io.hpp"

namespace fs = std::filesystem;

#ifndef QAG_CLI_PATH
#define QAG_CLI_PATH "./qag"
#endif
#ifndef QAG_FIXTURE_DIR
#define QAG_FIXTURE_DIR "fixtures"
#endif

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const std::string out_file = "cli_stdout_" + std::to_string(counter) + ".txt";
  const std::string err_file = "cli_stderr_" + std::to_string(counter) + ".txt";
  ++counter;
  const std::string cmd =
      std::string(QAG_CLI_PATH) + " " + args + " > " + out_file + " 2> " + err_file;
  int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WEXITSTATUS(status);
  auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  };
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  fs::remove(out_file);
  fs::remove(err_file);
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Tiny-model flags shared by all training invocations in this suite.
const std::string kTinyModel =
    "--d-model 32 --n-heads 2 --n-enc-layers 1 --n-dec-layers 1 --d-ff 64 --max-len 96 --lr 0.002";

struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name) : dir(name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
};

}  // namespace

TEST_CASE("analyze: golden dataset report is byte-identical to the fixture") {
  auto r = run_cli("analyze --data " + std::string(QAG_FIXTURE_DIR) + "/dataset_golden.jsonl");
  CHECK(r.code == 0);
  CHECK(r.out == slurp(fs::path(QAG_FIXTURE_DIR) / "analysis_golden.txt"));
}

TEST_CASE("analyze: missing file exits 2 and names the path") {
  auto r = run_cli("analyze --data missing_dataset.jsonl");
  CHECK(r.code == 2);
  CHECK(r.err.find("missing_dataset.jsonl") != std::string::npos);
}

TEST_CASE("analyze: extractive synthetic corpus reports a 100% match ratio") {
  Workspace ws("cli_analyze_ws");
  auto s = run_cli("synth --out " + ws.dir.string() + " --seed 5 --size 30 --profile extractive");
  REQUIRE(s.code == 0);
  auto r = run_cli("analyze --data " + (ws.dir / "synthetic_extractive.jsonl").string());
  CHECK(r.code == 0);
  CHECK(r.out.find("ngram_match_1=1.000000") != std::string::npos);
  CHECK(r.out.find("ngram_match_2=1.000000") != std::string::npos);
  CHECK(r.out.find("ngram_match_3=1.000000") != std::string::npos);
}

TEST_CASE("analyze: invalid records exit 2 with line numbers") {
  Workspace ws("cli_badrec_ws");
  {
    std::ofstream f(ws.dir / "bad.jsonl");
    f << R"({"id":"a","passage":"p","question":"q","answer":"x","split":"train"})" << "\n";
    f << "garbage\n";
  }
  auto r = run_cli("analyze --data " + (ws.dir / "bad.jsonl").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("train: one example for 200 steps reaches nll <= 0.1") {
  Workspace ws("cli_overfit_ws");
  {
    std::ofstream f(ws.dir / "one.jsonl");
    f << R"({"id":"solo","passage":"the quiet mill stands near the coast . lena built it in 1935 .","question":"who built the quiet mill ?","answer":"lena created marvels long ago","split":"train"})"
      << "\n";
  }
  auto r = run_cli("train --stage qg --data " + (ws.dir / "one.jsonl").string() + " --out " +
                   ws.dir.string() + " --seed 1 --epochs 200 --batch-size 10 " + kTinyModel);
  REQUIRE(r.code == 0);
  auto pos = r.out.find("final nll1=");
  REQUIRE(pos != std::string::npos);
  double nll = std::stod(r.out.substr(pos + 11));
  CHECK(nll <= 0.1);
  // loss log has one line per epoch
  std::string log = slurp(ws.dir / "loss_qg.txt");
  CHECK(std::count(log.begin(), log.end(), '\n') == 200);
}

TEST_CASE("train: zero epochs leaves the initialization checkpoint") {
  Workspace ws("cli_zeroep_ws");
  auto s = run_cli("synth --out " + ws.dir.string() + " --seed 9 --size 6 --profile abstractive");
  REQUIRE(s.code == 0);
  auto r = run_cli("train --stage answer --data " + (ws.dir / "synthetic_abstractive.jsonl").string() +
                   " --out " + ws.dir.string() + " --seed 4 --epochs 0 " + kTinyModel);
  REQUIRE(r.code == 0);
  auto model = qag::load_model<float>((ws.dir / "answer").string());
  auto fresh = qag::ModelParams::init(model.config, 4);
  CHECK(qag::model_checksum(model) == qag::model_checksum(fresh));
}

TEST_CASE("full pipeline through the cli: train, generate, evaluate") {
  Workspace ws("cli_pipe_ws");
  auto s = run_cli("synth --out " + ws.dir.string() + " --seed 21 --size 6 --profile abstractive");
  REQUIRE(s.code == 0);
  const std::string data = (ws.dir / "synthetic_abstractive.jsonl").string();
  const std::string aug_dir = ws.dir.string();
  auto sx = run_cli("synth --out " + ws.dir.string() + " --seed 22 --size 6 --profile extractive");
  REQUIRE(sx.code == 0);
  const std::string aug = (ws.dir / "synthetic_extractive.jsonl").string();

  auto kp = run_cli("train --stage keyphrase --data " + data + " --aug-data " + aug + " --out " +
                    ws.dir.string() + " --seed 2 --strategy two_stage --epochs-stage1 40 " +
                    "--epochs-stage2 220 " + kTinyModel);
  REQUIRE(kp.code == 0);
  const std::string vocab = (ws.dir / "vocab.txt").string();

  auto qg = run_cli("train --stage qg --data " + data + " --vocab " + vocab + " --out " +
                    ws.dir.string() + " --seed 3 --epochs 220 " + kTinyModel);
  REQUIRE(qg.code == 0);
  auto ans = run_cli("train --stage answer --data " + data + " --vocab " + vocab + " --out " +
                     ws.dir.string() + " --seed 5 --epochs 220 " + kTinyModel);
  REQUIRE(ans.code == 0);
  auto kg = run_cli("train --stage kg --data " + data + " --vocab " + vocab + " --out " +
                    ws.dir.string() + " --qg-ckpt " + (ws.dir / "qg").string() + " --kp-ckpt " +
                    (ws.dir / "keyphrase").string() + " --seed 6 --epochs 120 " + kTinyModel);
  REQUIRE(kg.code == 0);

  const std::string gen_args = "generate --data " + data + " --out " + ws.dir.string() +
                               " --vocab " + vocab + " --kp-ckpt " + (ws.dir / "keyphrase").string() +
                               " --qg-ckpt " + (ws.dir / "qg").string() + " --kg-ckpt " +
                               (ws.dir / "kg").string() + " --ans-ckpt " + (ws.dir / "answer").string();
  auto gen = run_cli(gen_args + " --m 2");
  REQUIRE(gen.code == 0);
  auto records = qag::load_generated((ws.dir / "generated.jsonl").string());
  CHECK_FALSE(records.empty());
  for (const auto& rec : records) CHECK(rec.iteration == 2);

  SUBCASE("triplets reproduce the gold pairs") {
    auto gold = qag::load_dataset(data).examples;
    int found = 0;
    for (const auto& ex : gold)
      for (const auto& rec : records)
        if (rec.question == qag::normalize(ex.question) && rec.answer == qag::normalize(ex.answer)) {
          ++found;
          break;
        }
    CHECK(found >= static_cast<int>(gold.size()) - 1);
    auto ev = run_cli("evaluate --data " + data + " --generated " +
                      (ws.dir / "generated.jsonl").string());
    CHECK(ev.code == 0);
    CHECK(ev.out.find("qg_bleu4=") != std::string::npos);
  }

  SUBCASE("m=1 runs and labels its output") {
    Workspace ws1("cli_pipe_m1");
    auto gen1 = run_cli("generate --data " + data + " --out " + ws1.dir.string() + " --vocab " +
                        vocab + " --kp-ckpt " + (ws.dir / "keyphrase").string() + " --qg-ckpt " +
                        (ws.dir / "qg").string() + " --ans-ckpt " + (ws.dir / "answer").string() +
                        " --m 1");
    REQUIRE(gen1.code == 0);
    auto recs1 = qag::load_generated((ws1.dir / "generated.jsonl").string());
    CHECK_FALSE(recs1.empty());
    for (const auto& rec : recs1) CHECK(rec.iteration == 1);
  }

  SUBCASE("generation reproduces bit-exactly, including from the resolved config") {
    auto first = slurp(ws.dir / "generated.jsonl");
    auto again = run_cli(gen_args + " --m 2");
    REQUIRE(again.code == 0);
    CHECK(slurp(ws.dir / "generated.jsonl") == first);
    auto via_config = run_cli("generate --config " + (ws.dir / "resolved_generate.ini").string());
    REQUIRE(via_config.code == 0);
    CHECK(slurp(ws.dir / "generated.jsonl") == first);
  }

  SUBCASE("beam decoding is accepted") {
    Workspace wsb("cli_pipe_beam");
    auto genb = run_cli("generate --data " + data + " --out " + wsb.dir.string() + " --vocab " +
                        vocab + " --kp-ckpt " + (ws.dir / "keyphrase").string() + " --qg-ckpt " +
                        (ws.dir / "qg").string() + " --ans-ckpt " + (ws.dir / "answer").string() +
                        " --m 1 --beam 3");
    CHECK(genb.code == 0);
  }
}

TEST_CASE("train: identical seeds write identical loss logs and checkpoints") {
  Workspace ws("cli_seed_ws");
  auto s = run_cli("synth --out " + ws.dir.string() + " --seed 31 --size 6 --profile abstractive");
  REQUIRE(s.code == 0);
  const std::string data = (ws.dir / "synthetic_abstractive.jsonl").string();
  fs::create_directories(ws.dir / "a");
  fs::create_directories(ws.dir / "b");
  const std::string args = " --data " + data + " --seed 11 --epochs 5 " + kTinyModel;
  auto a = run_cli("train --stage qg --out " + (ws.dir / "a").string() + args);
  auto b = run_cli("train --stage qg --out " + (ws.dir / "b").string() + args);
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(slurp(ws.dir / "a" / "loss_qg.txt") == slurp(ws.dir / "b" / "loss_qg.txt"));
  CHECK(slurp(ws.dir / "a" / "qg.bin") == slurp(ws.dir / "b" / "qg.bin"));
  CHECK_FALSE(slurp(ws.dir / "a" / "loss_qg.txt").empty());
}

TEST_CASE("generate: empty dataset writes an empty output and exits 0") {
  Workspace ws("cli_empty_ws");
  {
    std::ofstream f(ws.dir / "empty.jsonl");
  }
  auto r = run_cli("generate --data " + (ws.dir / "empty.jsonl").string() + " --out " +
                   ws.dir.string() +
                   " --vocab v --kp-ckpt x --qg-ckpt y --ans-ckpt z --m 1");
  CHECK(r.code == 0);
  CHECK(fs::exists(ws.dir / "generated.jsonl"));
  CHECK(qag::load_generated((ws.dir / "generated.jsonl").string()).empty());
}

TEST_CASE("evaluate: identical generations score BLEU-4 100.00") {
  Workspace ws("cli_eval_ws");
  auto corpus = qag::make_synthetic_corpus(77, 8, qag::SyntheticProfile::abstractive);
  qag::save_dataset((ws.dir / "ref.jsonl").string(), corpus);
  std::vector<qag::GeneratedRecord> records;
  for (const auto& g : qag::group_by_passage(corpus)) {
    int k = 0;
    for (const auto* ex : g.examples)
      records.push_back({g.passage_id + "-g" + std::to_string(k++), g.passage_id, {},
                         qag::normalize(ex->question), qag::normalize(ex->answer), 1});
  }
  qag::save_generated((ws.dir / "gen.jsonl").string(), records);
  auto r = run_cli("evaluate --data " + (ws.dir / "ref.jsonl").string() + " --generated " +
                   (ws.dir / "gen.jsonl").string());
  CHECK(r.code == 0);
  CHECK(r.out.find("qg_bleu4=100.00") != std::string::npos);
  CHECK(r.out.find("ag_bleu4=100.00") != std::string::npos);
}

TEST_CASE("evaluate: unmatched passage ids exit 2 with a listing") {
  Workspace ws("cli_eval_bad_ws");
  auto corpus = qag::make_synthetic_corpus(78, 4, qag::SyntheticProfile::abstractive);
  qag::save_dataset((ws.dir / "ref.jsonl").string(), corpus);
  std::vector<qag::GeneratedRecord> records{
      {"z-g0", "not_a_real_id", {}, "what ?", "this", 1},
  };
  qag::save_generated((ws.dir / "gen.jsonl").string(), records);
  auto r = run_cli("evaluate --data " + (ws.dir / "ref.jsonl").string() + " --generated " +
                   (ws.dir / "gen.jsonl").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("not_a_real_id") != std::string::npos);
}
