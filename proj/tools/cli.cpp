#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cfrate/augment.hpp"
#include "cfrate/checkpoint.hpp"
#include "cfrate/evaluation.hpp"
#include "cfrate/synth.hpp"

namespace cfrate::cli {

namespace {

using nlohmann::json;

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::exception& e) {
    throw ValidationError("malformed JSON in '" + path + "': " + e.what());
  }
}

template <class T>
void override_if(const CLI::Option* opt, T& dst, const T& value) {
  if (opt->count() > 0) dst = value;
}

TreatmentPolicy policy_from(const std::string& path) { return path.empty() ? TreatmentPolicy{} : TreatmentPolicy::load(path); }

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write '" + path + "'");
  f << text;
  if (!f) throw Error("write failed for '" + path + "'");
}

void check_dims(const AnyModel& model, const Dataset& ds) {
  const auto want = static_cast<std::size_t>(model_input_dim(model));
  for (const auto& d : ds.dialogues) {
    if (d.feature_dim() != want) {
      throw ValidationError("dimension mismatch: model expects " + std::to_string(want) +
                            "-dim turn features, dataset has " + std::to_string(d.feature_dim()) + " (dialogue '" +
                            d.id + "')");
    }
  }
}

const CfLstmModel& require_cf(const AnyModel& m, const std::string& what) {
  const auto* cf = std::get_if<CfLstmModel>(&m);
  if (!cf) throw ValidationError(what + " needs a cf-lstm checkpoint, got '" + model_kind(m) + "'");
  return *cf;
}

// Flags shared by train and extend. Explicit flags override --config values.
struct TrainFlags {
  TrainConfig values;
  std::string config_path;
  std::string pooling = "final";
  CLI::Option* hidden = nullptr;
  CLI::Option* layers = nullptr;
  CLI::Option* head = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* epochs = nullptr;
  CLI::Option* batch = nullptr;
  CLI::Option* lambda = nullptr;
  CLI::Option* n_proj = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* patience = nullptr;
  CLI::Option* val = nullptr;
  CLI::Option* pool = nullptr;
  CLI::Option* counts = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON file with training settings (overridden by explicit flags)");
    hidden = app->add_option("--hidden", values.hidden_size, "LSTM hidden size H")->capture_default_str();
    layers = app->add_option("--lstm-layers", values.lstm_layers, "Stacked LSTM layers")->capture_default_str();
    head = app->add_option("--head-layers", values.head_layers, "Hidden widths of each regression head")
               ->capture_default_str();
    lr = app->add_option("--lr", values.learning_rate, "Adam learning rate")->capture_default_str();
    epochs = app->add_option("--epochs", values.epochs, "Maximum epochs")->capture_default_str();
    batch = app->add_option("--batch", values.batch_size, "Mini-batch size")->capture_default_str();
    lambda = app->add_option("--lambda", values.ipm_weight, "IPM weight (cf-lstm)")->capture_default_str();
    n_proj = app->add_option("--n-proj", values.n_proj, "Sliced Wasserstein projections")->capture_default_str();
    seed = app->add_option("--seed", values.seed, "Random seed")->capture_default_str();
    patience = app->add_option("--patience", values.patience, "Early-stopping patience (epochs)")->capture_default_str();
    val = app->add_option("--val-fraction", values.validation_fraction, "Held-out fraction for early stopping")
              ->capture_default_str();
    pool = app->add_option("--pooling", pooling, "Representation: final hidden state or mean over turns")
               ->check(CLI::IsMember({"final", "mean"}))
               ->capture_default_str();
    counts = app->add_flag("--include-counts", values.include_counts, "MLP baseline: add per-dimension sums");
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_path.empty()) apply_json(cfg, read_json_file(config_path));
    override_if(hidden, cfg.hidden_size, values.hidden_size);
    override_if(layers, cfg.lstm_layers, values.lstm_layers);
    override_if(head, cfg.head_layers, values.head_layers);
    override_if(lr, cfg.learning_rate, values.learning_rate);
    override_if(epochs, cfg.epochs, values.epochs);
    override_if(batch, cfg.batch_size, values.batch_size);
    override_if(lambda, cfg.ipm_weight, values.ipm_weight);
    override_if(n_proj, cfg.n_proj, values.n_proj);
    override_if(seed, cfg.seed, values.seed);
    override_if(patience, cfg.patience, values.patience);
    override_if(val, cfg.validation_fraction, values.validation_fraction);
    override_if(pool, cfg.pooling, pooling == "mean" ? Pooling::Mean : Pooling::Final);
    override_if(counts, cfg.include_counts, values.include_counts);
    cfg.validate();
    return cfg;
  }
};

struct SynthFlags {
  synth::SynthConfig values;
  std::string out;
  std::string config_path;
  std::string preset = "default";
  std::string effect = "constant";
  std::string start = "2021-01-01";
  CLI::Option* n = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* p1 = nullptr;
  CLI::Option* tau = nullptr;
  CLI::Option* sigma = nullptr;
  CLI::Option* gamma = nullptr;
  CLI::Option* eff = nullptr;
  CLI::Option* kappa = nullptr;
  CLI::Option* arms = nullptr;
  CLI::Option* p2 = nullptr;
  CLI::Option* tau2 = nullptr;
  CLI::Option* days = nullptr;
  CLI::Option* start_opt = nullptr;
  CLI::Option* mean_turns = nullptr;
  CLI::Option* max_turns = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--out", out, "Dataset path; the truth record goes to <stem>.truth.json")->required();
    app->add_option("--preset", preset, "Base settings before --config and flags")
        ->check(CLI::IsMember({"default", "heterogeneous"}))
        ->capture_default_str();
    app->add_option("--config", config_path, "JSON file with generator settings");
    n = app->add_option("--n", values.n_dialogues, "Number of dialogues")->capture_default_str();
    seed = app->add_option("--seed", values.seed, "Random seed")->capture_default_str();
    p1 = app->add_option("--p1", values.p1, "Fraction of dialogues in arm 1")->capture_default_str();
    tau = app->add_option("--tau", values.tau, "Planted effect of arm 1")->capture_default_str();
    sigma = app->add_option("--sigma", values.sigma, "Rating noise std")->capture_default_str();
    gamma = app->add_option("--gamma", values.gamma, "Confounding strength in [0,1]")->capture_default_str();
    eff = app->add_option("--effect", effect, "Effect shape")
              ->check(CLI::IsMember({"constant", "heterogeneous"}))
              ->capture_default_str();
    kappa = app->add_option("--kappa", values.kappa, "Heterogeneity weight")->capture_default_str();
    arms = app->add_option("--arms", values.num_arms, "Number of arms (2 or 3)")->capture_default_str();
    p2 = app->add_option("--p2", values.p2, "Fraction in arm 2 (three arms)")->capture_default_str();
    tau2 = app->add_option("--tau2", values.tau2, "Planted effect of arm 2")->capture_default_str();
    days = app->add_option("--days", values.n_days, "Number of calendar days")->capture_default_str();
    start_opt = app->add_option("--start-date", start, "First date (YYYY-MM-DD)")->capture_default_str();
    mean_turns = app->add_option("--mean-turns", values.mean_turns, "Mean turn pairs per dialogue")
                     ->capture_default_str();
    max_turns = app->add_option("--max-turns", values.max_turns, "Maximum turn pairs")->capture_default_str();
  }

  synth::SynthConfig resolve() const {
    synth::SynthConfig cfg = preset == "heterogeneous" ? synth::heterogeneous_benchmark(0) : synth::SynthConfig{};
    if (!config_path.empty()) apply_json(cfg, read_json_file(config_path));
    override_if(n, cfg.n_dialogues, values.n_dialogues);
    override_if(seed, cfg.seed, values.seed);
    override_if(p1, cfg.p1, values.p1);
    override_if(tau, cfg.tau, values.tau);
    override_if(sigma, cfg.sigma, values.sigma);
    override_if(gamma, cfg.gamma, values.gamma);
    override_if(eff, cfg.effect, effect == "heterogeneous" ? synth::Effect::Heterogeneous : synth::Effect::Constant);
    override_if(kappa, cfg.kappa, values.kappa);
    override_if(arms, cfg.num_arms, values.num_arms);
    override_if(p2, cfg.p2, values.p2);
    override_if(tau2, cfg.tau2, values.tau2);
    override_if(days, cfg.n_days, values.n_days);
    if (start_opt->count() > 0) cfg.start_date = parse_date(start);
    override_if(mean_turns, cfg.mean_turns, values.mean_turns);
    override_if(max_turns, cfg.max_turns, values.max_turns);
    cfg.validate();
    return cfg;
  }
};

json prediction_json(const std::string& id, int arm, const Prediction& p) {
  json j;
  j["id"] = id;
  j["arm"] = arm;
  j["prediction"] = p.clamped;
  j["raw"] = p.raw;
  return j;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dialogue rating prediction with counterfactual LSTM models", "cfrate"};
  app.require_subcommand(1);

  // synth
  SynthFlags synth_flags;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with known potential outcomes");
  synth_flags.attach(synth_cmd);

  // train
  TrainFlags train_flags;
  std::string train_model, train_data, train_out, train_policy;
  bool train_augment = false;
  double train_threshold = 3.0;
  std::size_t train_min_len = kMinTurns;
  auto* train_cmd = app.add_subcommand("train", "Train a rating model and write a checkpoint");
  train_cmd->add_option("--model", train_model, "Model kind")
      ->required()
      ->check(CLI::IsMember({"mlp", "lstm", "cf-lstm"}));
  train_cmd->add_option("--data", train_data, "Training dataset (JSONL)")->required();
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--policy", train_policy, "Treatment policy JSON (default: 'other' -> 0, rest -> 1)");
  train_cmd->add_flag("--augment", train_augment, "Add masked prefixes of low-rated dialogues before training");
  train_cmd->add_option("--threshold", train_threshold, "Low-rating threshold for --augment")->capture_default_str();
  train_cmd->add_option("--min-len", train_min_len, "Minimum prefix length for --augment")->capture_default_str();
  train_flags.attach(train_cmd);

  // evaluate
  std::string eval_model, eval_data, eval_policy;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint; report JSON on stdout, table on stderr");
  eval_cmd->add_option("--model", eval_model, "Checkpoint path")->required();
  eval_cmd->add_option("--data", eval_data, "Test dataset (JSONL)")->required();
  eval_cmd->add_option("--policy", eval_policy, "Override the checkpoint's treatment policy (cf-lstm)");

  // predict
  std::string pred_model, pred_data, pred_arm = "factual", pred_out;
  auto* pred_cmd = app.add_subcommand("predict", "Per-dialogue predictions as JSON lines");
  pred_cmd->add_option("--model", pred_model, "Checkpoint path")->required();
  pred_cmd->add_option("--data", pred_data, "Dataset (JSONL)")->required();
  pred_cmd->add_option("--arm", pred_arm, "Head to query: an arm index (cf-lstm) or 'factual'")->capture_default_str();
  pred_cmd->add_option("--out", pred_out, "Output path (default stdout)");

  // augment
  std::string aug_in, aug_out, aug_policy;
  double aug_threshold = 3.0;
  std::size_t aug_min_len = kMinTurns;
  auto* aug_cmd = app.add_subcommand("augment", "Emit masked prefixes of low-rated dialogues");
  aug_cmd->add_option("--in", aug_in, "Input dataset")->required();
  aug_cmd->add_option("--out", aug_out, "Output dataset of generated dialogues")->required();
  aug_cmd->add_option("--threshold", aug_threshold, "Ratings below this are low")->capture_default_str();
  aug_cmd->add_option("--min-len", aug_min_len, "Minimum prefix length")->capture_default_str();
  aug_cmd->add_option("--policy", aug_policy, "Treatment policy JSON");

  // ate
  std::string ate_model, ate_data;
  int ate_from = 0, ate_to = 1;
  auto* ate_cmd = app.add_subcommand("ate", "Average treatment effect from counterfactual predictions");
  ate_cmd->add_option("--model", ate_model, "cf-lstm checkpoint")->required();
  ate_cmd->add_option("--data", ate_data, "Dataset (JSONL)")->required();
  ate_cmd->add_option("--from", ate_from, "Reference arm")->capture_default_str();
  ate_cmd->add_option("--to", ate_to, "Compared arm")->capture_default_str();

  // invert
  std::string inv_in, inv_out, inv_policy;
  auto* inv_cmd = app.add_subcommand("invert", "Flip every dialogue's binary treatment");
  inv_cmd->add_option("--in", inv_in, "Input dataset")->required();
  inv_cmd->add_option("--out", inv_out, "Output dataset with explicit flipped treatments")->required();
  inv_cmd->add_option("--policy", inv_policy, "Treatment policy JSON");

  // extend
  TrainFlags ext_flags;
  std::string ext_model, ext_data, ext_policy, ext_out;
  bool ext_heads_only = false;
  auto* ext_cmd = app.add_subcommand("extend", "Add treatment heads to a cf-lstm and train them on fresh data");
  ext_cmd->add_option("--model", ext_model, "cf-lstm checkpoint")->required();
  ext_cmd->add_option("--data", ext_data, "Fresh dataset containing the new arms")->required();
  ext_cmd->add_option("--policy", ext_policy, "Policy defining all old and new arms")->required();
  ext_cmd->add_option("--out", ext_out, "Output checkpoint")->required();
  ext_cmd->add_flag("--heads-only", ext_heads_only, "Skip the fine-tuning phase");
  ext_flags.attach(ext_cmd);

  // oracle
  std::string orc_model, orc_data, orc_truth;
  int orc_arm = 1;
  auto* orc_cmd = app.add_subcommand("oracle", "Compare a cf-lstm against a synthetic truth record");
  orc_cmd->add_option("--model", orc_model, "cf-lstm checkpoint")->required();
  orc_cmd->add_option("--data", orc_data, "Synthetic dataset (JSONL)")->required();
  orc_cmd->add_option("--truth", orc_truth, "Truth record (default <stem>.truth.json next to --data)");
  orc_cmd->add_option("--arm", orc_arm, "Arm whose effect is compared")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (synth_cmd->parsed()) {
      const auto cfg = synth_flags.resolve();
      const auto g = synth::generate(cfg);
      save_dataset(g.dataset, synth_flags.out);
      const auto truth_path = synth::truth_path_for(synth_flags.out);
      synth::save_truth(g.truth, truth_path);
      err << "wrote " << g.dataset.size() << " dialogues to " << synth_flags.out << " and " << truth_path.string()
          << " (true ATE " << g.truth.true_ate() << ", " << g.truth.target << ")\n";
    } else if (train_cmd->parsed()) {
      const auto cfg = train_flags.resolve();
      const auto policy = policy_from(train_policy);
      Dataset ds = load_dataset(train_data);
      if (train_augment) {
        const auto extra = augment_dataset(ds, policy, train_threshold, train_min_len);
        err << "augmentation added " << extra.size() << " dialogues\n";
        for (const auto& d : extra.dialogues) ds.dialogues.push_back(d);
      }
      AnyModel model;
      if (train_model == "cf-lstm") {
        const auto pos = positivity_check(ds, policy);
        if (pos.violated) err << "warning: " << pos.warning << "\n";
        model = train_cf_lstm(ds, policy, cfg);
      } else if (train_model == "lstm") {
        model = train_baseline_lstm(ds, cfg);
      } else {
        model = train_baseline_mlp(ds, cfg);
      }
      save_checkpoint(model, train_out);
      std::visit(
          [&err](const auto& m) {
            err << "trained " << m.record.train_loss.size() << " epochs, best epoch " << m.record.best_epoch;
            if (!m.record.train_loss.empty()) err << ", final train loss " << m.record.train_loss.back();
            err << "\n";
          },
          model);
    } else if (eval_cmd->parsed()) {
      const auto model = load_checkpoint(eval_model);
      const auto ds = load_dataset(eval_data);
      check_dims(model, ds);
      std::optional<TreatmentPolicy> policy;
      if (!eval_policy.empty()) policy = TreatmentPolicy::load(eval_policy);
      const auto report = evaluate(model, ds, policy);
      out << to_json(report).dump(2) << "\n";
      err << format_table(report);
    } else if (pred_cmd->parsed()) {
      const auto model = load_checkpoint(pred_model);
      const auto ds = load_dataset(pred_data);
      check_dims(model, ds);
      std::string text;
      if (pred_arm == "factual") {
        for (const auto& d : ds.dialogues) {
          int arm = 0;
          if (const auto* cf = std::get_if<CfLstmModel>(&model)) arm = effective_treatment(d, cf->policy).value;
          text += prediction_json(d.id, arm, predict_factual(model, d)).dump() + "\n";
        }
      } else {
        int arm = 0;
        try {
          std::size_t used = 0;
          arm = std::stoi(pred_arm, &used);
          if (used != pred_arm.size()) throw std::invalid_argument(pred_arm);
        } catch (const std::exception&) {
          throw ValidationError("--arm must be an integer or 'factual', got '" + pred_arm + "'");
        }
        const auto& cf = require_cf(model, "predict --arm");
        for (const auto& d : ds.dialogues) text += prediction_json(d.id, arm, predict(cf, d, Treatment{arm})).dump() + "\n";
      }
      write_text(pred_out, text, out);
    } else if (aug_cmd->parsed()) {
      const auto ds = load_dataset(aug_in);
      const auto extra = augment_dataset(ds, policy_from(aug_policy), aug_threshold, aug_min_len);
      save_dataset(extra, aug_out);
      err << "wrote " << extra.size() << " augmented dialogues to " << aug_out << "\n";
    } else if (ate_cmd->parsed()) {
      const auto model = load_checkpoint(ate_model);
      const auto& cf = require_cf(model, "ate");
      const auto ds = load_dataset(ate_data);
      check_dims(model, ds);
      nlohmann::ordered_json j;
      j["from"] = ate_from;
      j["to"] = ate_to;
      j["ate"] = ate_between(cf, ds, ate_from, ate_to);
      if (cf.num_arms() == 2 && ate_from == 0 && ate_to == 1) {
        j["mse_factual_counterfactual"] = mse_factual_counterfactual(cf, ds);
      }
      j["n_dialogues"] = ds.size();
      out << j.dump(2) << "\n";
    } else if (inv_cmd->parsed()) {
      const auto ds = load_dataset(inv_in);
      save_dataset(invert_treatments(ds, policy_from(inv_policy)), inv_out);
    } else if (ext_cmd->parsed()) {
      const auto model = load_checkpoint(ext_model);
      const auto& cf = require_cf(model, "extend");
      const auto policy = TreatmentPolicy::load(ext_policy);
      const int k_new = policy.num_arms() - cf.num_arms();
      if (k_new < 0) throw ValidationError("policy defines fewer arms than the model already has");
      const auto cfg = ext_flags.resolve();
      const auto ds = load_dataset(ext_data);
      check_dims(model, ds);
      const auto extended = extend_treatments(cf, k_new, ds, policy, cfg,
                                              ext_heads_only ? ExtendPhases::HeadsOnly : ExtendPhases::HeadsThenAll);
      save_checkpoint(extended, ext_out);
      err << "model now has " << extended.num_arms() << " heads\n";
    } else if (orc_cmd->parsed()) {
      const auto model = load_checkpoint(orc_model);
      const auto& cf = require_cf(model, "oracle");
      const auto ds = load_dataset(orc_data);
      check_dims(model, ds);
      const auto truth = synth::load_truth(orc_truth.empty() ? synth::truth_path_for(orc_data).string() : orc_truth);
      const auto r = synth::oracle_metrics(cf, ds, truth, orc_arm);
      nlohmann::ordered_json j;
      j["ate_model"] = r.ate_model;
      j["ate_true"] = r.ate_true;
      j["ate_error"] = r.ate_error;
      j["counterfactual_rmse"] = r.counterfactual_rmse;
      j["factual_rmse"] = r.factual_rmse;
      out << j.dump(2) << "\n";
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kValidationError;
  }
  return kOk;
}

}  // namespace cfrate::cli
