#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfrate/data.hpp"
#include "cfrate/models.hpp"
#include "cfrate/treatment.hpp"

namespace cfrate::synth {

enum class Effect { Constant, Heterogeneous };

// Generator for dialogues with a known outcome function.
//
// Each dialogue has a mood z ~ N(0,1), an engagement level g ~ N(0,1), a date drift
// d(day) = drift * sin(2 pi day / period) and an AR(1) turn process u_t. Turn signal
// s_t = z + d(day) + u_t drives valence, satisfaction, FED and DialogRPT width; g only
// drives the activation feature. With the recency average
//   e(X) = sum_t w_t h_t / sum_t w_t,  w_t = decay^(n-1-t),
// where h_t is the observed per-turn quality index (see quality_index), the outcome is
//   Y(a) = clamp(base + slope * e(X) + effect_a(X) + eps),  eps ~ N(0, sigma^2)
// with effect_0 = 0, effect_1 = tau (+ kappa * engagement_index(X) when heterogeneous),
// effect_2 = tau2.
// Arms follow a probit on -gamma * z + sqrt(1 - gamma^2) * w, so arm marginals are exact
// while low-mood dialogues are more often treated. Treated dialogues carry one or more
// turns whose ODES category maps to their arm; all other turns are "other".
struct SynthConfig {
  std::size_t n_dialogues = 1000;
  int min_turns = 3;
  int max_turns = 30;
  double mean_turns = 12.0;
  double p1 = 0.3;
  double tau = -0.7809;
  Effect effect = Effect::Constant;
  double kappa = 0.6;
  double sigma = 0.3;
  double gamma = 0.5;
  Date start_date = Date{std::chrono::year{2021} / 1 / 1};
  int n_days = 60;
  double drift = 0.5;
  double drift_period = 28.0;
  double base = 3.4;
  double slope = 0.8;
  double decay = 0.75;
  int num_arms = 2;  // 2 or 3; the third arm is "compliment"
  double p2 = 0.15;
  double tau2 = 0.5;
  std::uint64_t seed = 0;
  std::string id_prefix = "syn";

  void validate() const;  // throws ValidationError
};

// Desk-scale heterogeneous-effect setting: 1,000 dialogues, effect modifier weight 1,
// noisier ratings and a flatter baseline so the treatment interaction carries more of
// the explainable variance.
SynthConfig heterogeneous_benchmark(std::uint64_t seed);

nlohmann::ordered_json to_json(const SynthConfig& c);
void apply_json(SynthConfig& c, const nlohmann::json& j);

// Binary default policy, or for three arms the default with compliments moved to arm 2.
TreatmentPolicy synth_policy(int num_arms);

// Per-turn quality index the outcome is built from (depends on observed features only).
double quality_index(std::span<const double> features);
// Recency-weighted mean of quality_index over the turns.
double recency_quality(const Dialogue& d, double decay);
// Mean standardized activation over the turns; the heterogeneous effect modifier.
double engagement_index(const Dialogue& d);

struct Outcome {
  std::string id;
  int arm = 0;
  double f = 0.0;               // base + slope * e(X)
  double noise = 0.0;           // eps
  std::vector<double> y_raw;    // per arm, before clamping
  std::vector<double> y;        // per arm, clamped to [1,5]
};

struct GroundTruth {
  SynthConfig config;
  std::vector<Outcome> outcomes;  // dataset order
  std::vector<double> ate_raw;     // per arm a >= 1: mean(y_raw[a] - y_raw[0])
  std::vector<double> ate_clamped; // same on clamped outcomes
  // "raw" when clamping never changes an individual effect, otherwise "clamped".
  std::string target;
  std::size_t clamped_effects = 0;

  double true_ate(int arm = 1) const;  // per `target`
};

struct Generated {
  Dataset dataset;
  GroundTruth truth;
};

Generated generate(const SynthConfig& cfg);

nlohmann::ordered_json to_json(const GroundTruth& t);
GroundTruth truth_from_json(const nlohmann::json& j);
void save_truth(const GroundTruth& t, const std::filesystem::path& path);
GroundTruth load_truth(const std::filesystem::path& path);
// "<dir>/<stem>.truth.json" for a dataset path "<dir>/<stem>.<ext>".
std::filesystem::path truth_path_for(const std::filesystem::path& dataset_path);

struct OracleReport {
  double ate_model = 0.0;
  double ate_true = 0.0;
  double ate_error = 0.0;               // |ate_model - ate_true|
  double counterfactual_rmse = 0.0;     // against Y(a) for every non-factual arm a
  double factual_rmse = 0.0;
};

// predictor(d, arm) returns the model's rating estimate for the given arm.
using ArmPredictor = std::function<double(const Dialogue&, int arm)>;

// `ds` must be the generated dataset (ids are matched against the truth record).
OracleReport oracle_metrics(const ArmPredictor& predictor, const Dataset& ds, const GroundTruth& truth, int arm = 1);
OracleReport oracle_metrics(const CfLstmModel& model, const Dataset& ds, const GroundTruth& truth, int arm = 1);

}  // namespace cfrate::synth
