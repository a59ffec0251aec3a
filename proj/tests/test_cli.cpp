#include <doctest.h>

#include <sstream>

#include "cfrate/checkpoint.hpp"
#include "cfrate/evaluation.hpp"
#include "cfrate/augment.hpp"
#include "cfrate/synth.hpp"
#include "cli.hpp"
#include "helpers.hpp"

using namespace cfrate;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

const std::vector<std::string> kSmallTrain = {"--hidden", "4", "--head-layers", "3", "--epochs", "2", "--n-proj", "4"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("synth output is byte-identical across runs") {
  testing::TempDir dir("cli-synth");
  const std::string a = (dir / "a.jsonl").string(), b = (dir / "b.jsonl").string();
  REQUIRE(run({"synth", "--out", a, "--n", "40", "--seed", "3"}).code == cli::kOk);
  REQUIRE(run({"synth", "--out", b, "--n", "40", "--seed", "3"}).code == cli::kOk);
  CHECK(testing::read_file(a) == testing::read_file(b));
  CHECK(testing::read_file(dir / "a.truth.json") == testing::read_file(dir / "b.truth.json"));
  CHECK(load_dataset(a).size() == 40);
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == cli::kUsageError);
  CHECK(run({"frobnicate"}).code == cli::kUsageError);
  CHECK(run({"train", "--model", "cf-lstm"}).code == cli::kUsageError);  // missing required options
  CHECK(run({"train", "--model", "gpt", "--data", "x", "--out", "y"}).code == cli::kUsageError);
  CHECK(run({"--help"}).code == cli::kOk);

  const auto missing = run({"evaluate", "--model", "/nonexistent.json", "--data", "/nonexistent.jsonl"});
  CHECK(missing.code == cli::kValidationError);
  CHECK(missing.err.find("error:") != std::string::npos);

  testing::TempDir dir("cli-codes");
  std::ofstream(dir / "bad.jsonl") << "{not json\n";
  const auto bad = run({"augment", "--in", (dir / "bad.jsonl").string(), "--out", (dir / "o.jsonl").string()});
  CHECK(bad.code == cli::kValidationError);
  CHECK(bad.err.find("line 1") != std::string::npos);
}

TEST_CASE("train, evaluate, predict, ate and oracle end to end") {
  testing::TempDir dir("cli-e2e");
  const std::string data = (dir / "d.jsonl").string(), model = (dir / "m.json").string();
  REQUIRE(run({"synth", "--out", data, "--n", "60", "--seed", "1"}).code == cli::kOk);
  REQUIRE(run(cat({"train", "--model", "cf-lstm", "--data", data, "--out", model}, kSmallTrain)).code == cli::kOk);

  const auto ev = run({"evaluate", "--model", model, "--data", data});
  REQUIRE(ev.code == cli::kOk);
  const auto report = nlohmann::json::parse(ev.out);
  CHECK(report.contains("ate"));
  CHECK(ev.err.find("Individual") != std::string::npos);

  const auto pr = run({"predict", "--model", model, "--data", data, "--arm", "1"});
  REQUIRE(pr.code == cli::kOk);
  CHECK(std::count(pr.out.begin(), pr.out.end(), '\n') == 60);
  CHECK(run({"predict", "--model", model, "--data", data, "--arm", "7"}).code == cli::kValidationError);
  CHECK(run({"predict", "--model", model, "--data", data, "--arm", "one"}).code == cli::kValidationError);

  const auto at = run({"ate", "--model", model, "--data", data});
  REQUIRE(at.code == cli::kOk);
  const double a = nlohmann::json::parse(at.out)["ate"].get<double>();
  const auto loaded = std::get<CfLstmModel>(load_checkpoint(model));
  CHECK(a == doctest::Approx(ate(loaded, load_dataset(data))).epsilon(1e-12));

  const auto orc = run({"oracle", "--model", model, "--data", data});
  REQUIRE(orc.code == cli::kOk);
  CHECK(nlohmann::json::parse(orc.out).contains("counterfactual_rmse"));

  // baselines have no counterfactual heads
  const std::string mlp = (dir / "mlp.json").string();
  REQUIRE(run(cat({"train", "--model", "mlp", "--data", data, "--out", mlp}, kSmallTrain)).code == cli::kOk);
  CHECK(run({"ate", "--model", mlp, "--data", data}).code == cli::kValidationError);
  CHECK(run({"evaluate", "--model", mlp, "--data", data}).code == cli::kOk);
}

TEST_CASE("flags override the config file") {
  testing::TempDir dir("cli-config");
  const std::string data = (dir / "d.jsonl").string(), model = (dir / "m.json").string();
  REQUIRE(run({"synth", "--out", data, "--n", "30", "--seed", "2"}).code == cli::kOk);
  std::ofstream(dir / "cfg.json") << R"({"hidden_size": 6, "epochs": 1, "head_layers": [2]})";
  REQUIRE(run({"train", "--model", "lstm", "--data", data, "--out", model, "--config", (dir / "cfg.json").string(),
               "--hidden", "5"})
              .code == cli::kOk);
  const auto m = std::get<BaselineLstmModel>(load_checkpoint(model));
  CHECK(m.config.hidden_size == 5);
  CHECK(m.config.epochs == 1);
  CHECK(m.config.head_layers == std::vector<int>{2});

  std::ofstream(dir / "bad.json") << R"({"hiden_size": 6})";
  CHECK(run({"train", "--model", "lstm", "--data", data, "--out", model, "--config", (dir / "bad.json").string()})
            .code == cli::kValidationError);
}

TEST_CASE("invert and augment write datasets") {
  testing::TempDir dir("cli-io");
  const std::string data = (dir / "d.jsonl").string();
  REQUIRE(run({"synth", "--out", data, "--n", "50", "--seed", "4"}).code == cli::kOk);
  const std::string inv = (dir / "inv.jsonl").string(), inv2 = (dir / "inv2.jsonl").string();
  REQUIRE(run({"invert", "--in", data, "--out", inv}).code == cli::kOk);
  REQUIRE(run({"invert", "--in", inv, "--out", inv2}).code == cli::kOk);
  const auto orig = load_dataset(data), back = load_dataset(inv2);
  for (std::size_t i = 0; i < orig.size(); ++i)
    CHECK(*back.dialogues[i].treatment == assign_dialogue_treatment(orig.dialogues[i], TreatmentPolicy{}).value);

  const std::string aug = (dir / "aug.jsonl").string();
  REQUIRE(run({"augment", "--in", data, "--out", aug}).code == cli::kOk);
  CHECK(load_dataset(aug).size() == augment_dataset(orig, TreatmentPolicy{}).size());
}

TEST_CASE("dimension mismatch names both sizes") {
  testing::TempDir dir("cli-dims");
  nn::Rng rng(1);
  Dataset small;
  for (int i = 0; i < 12; ++i)
    small.dialogues.push_back(testing::small_dialogue(rng, "s" + std::to_string(i), 4, 5, 1.0 + (i % 5)));
  TrainConfig cfg;
  cfg.hidden_size = 3;
  cfg.head_layers = {2};
  cfg.epochs = 1;
  save_checkpoint(train_baseline_lstm(small, cfg), dir / "m5.json");

  const std::string data = (dir / "d.jsonl").string();
  REQUIRE(run({"synth", "--out", data, "--n", "10"}).code == cli::kOk);
  const auto r = run({"evaluate", "--model", (dir / "m5.json").string(), "--data", data});
  CHECK(r.code == cli::kValidationError);
  CHECK(r.err.find("5") != std::string::npos);
  CHECK(r.err.find("30") != std::string::npos);
}

TEST_CASE("extend adds a head through the CLI") {
  testing::TempDir dir("cli-extend");
  const std::string data = (dir / "d.jsonl").string(), model = (dir / "m.json").string();
  REQUIRE(run({"synth", "--out", data, "--n", "80", "--seed", "5", "--arms", "3"}).code == cli::kOk);
  REQUIRE(run(cat({"train", "--model", "cf-lstm", "--data", data, "--out", model}, kSmallTrain)).code == cli::kOk);
  std::ofstream(dir / "p3.json") << synth::synth_policy(3).to_json();
  const std::string out = (dir / "m3.json").string();
  const auto r = run({"extend", "--model", model, "--data", data, "--policy", (dir / "p3.json").string(), "--out", out,
                      "--heads-only", "--epochs", "2"});
  REQUIRE(r.code == cli::kOk);
  const auto m3 = std::get<CfLstmModel>(load_checkpoint(out));
  CHECK(m3.num_arms() == 3);
  CHECK(m3.encoder == std::get<CfLstmModel>(load_checkpoint(model)).encoder);
}
