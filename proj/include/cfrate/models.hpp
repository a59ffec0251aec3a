#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cfrate/data.hpp"
#include "cfrate/ipm.hpp"
#include "cfrate/neural.hpp"
#include "cfrate/treatment.hpp"

namespace cfrate {

enum class Pooling { Final, Mean };

struct TrainConfig {
  int hidden_size = 64;
  int lstm_layers = 1;
  std::vector<int> head_layers = {32};  // hidden widths of each regression head
  double learning_rate = 1e-3;
  int epochs = 50;
  int batch_size = 32;
  double ipm_weight = 1.0;  // lambda
  int n_proj = 50;
  std::uint64_t seed = 0;
  int patience = 10;
  double validation_fraction = 0.1;
  Pooling pooling = Pooling::Final;
  bool include_counts = false;  // baseline MLP: fifth aggregate slot

  void validate() const;  // throws ValidationError
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// One prepared training/prediction instance: normalized turn vectors as columns.
struct Example {
  nn::Matrix inputs;  // D x n
  int arm = 0;
  double rating = 0.0;
};

nn::Matrix normalized_inputs(const Dialogue& d, const NormStats& norm);
// Rated dialogues only is a precondition: throws ValidationError naming an unrated one.
std::vector<Example> make_examples(const Dataset& ds, const TreatmentPolicy& policy, const NormStats& norm);

struct TrainRecord {
  std::vector<double> train_loss;  // mean batch loss per epoch
  std::vector<double> val_loss;    // held-out factual MSE per epoch (empty without a split)
  int best_epoch = -1;
  nn::AdamState optimizer;
  std::string rng_state;
};

struct CfLstmModel {
  std::vector<nn::LstmParams> encoder;  // stacked layers, shared by every head
  std::vector<nn::MlpParams> heads;     // heads[a] predicts the rating under arm a
  NormStats norm;
  TrainConfig config;
  TreatmentPolicy policy;
  TrainRecord record;

  int num_arms() const { return static_cast<int>(heads.size()); }
  Eigen::Index input_dim() const { return encoder.empty() ? 0 : encoder.front().input_size(); }
  nn::ParamPack params() const;
  void set_params(const nn::ParamPack& p);
};

struct BaselineLstmModel {
  std::vector<nn::LstmParams> encoder;
  nn::MlpParams head;
  NormStats norm;
  TrainConfig config;
  TrainRecord record;

  Eigen::Index input_dim() const { return encoder.empty() ? 0 : encoder.front().input_size(); }
  nn::ParamPack params() const;
  void set_params(const nn::ParamPack& p);
};

struct BaselineMlpModel {
  nn::MlpParams regressor;  // over the aggregate vector
  NormStats norm;
  TrainConfig config;
  TrainRecord record;

  Eigen::Index input_dim() const { return static_cast<Eigen::Index>(norm.dim()); }
  nn::ParamPack params() const;
  void set_params(const nn::ParamPack& p);
};

using AnyModel = std::variant<BaselineMlpModel, BaselineLstmModel, CfLstmModel>;

std::string model_kind(const AnyModel& m);  // "mlp", "lstm", "cf-lstm"
Eigen::Index model_input_dim(const AnyModel& m);

// Untrained model with freshly initialized parameters (used by training and tests).
CfLstmModel init_cf_lstm(Eigen::Index input_dim, int num_arms, const TrainConfig& cfg, nn::Rng& rng);

// Representation Phi of one normalized sequence (D x n).
nn::Vector encode(const std::vector<nn::LstmParams>& encoder, Pooling pooling, const nn::Matrix& inputs);
nn::Vector encode(const CfLstmModel& m, const Dialogue& d);

struct LossOptions {
  double ipm_weight = 1.0;
  int n_proj = 50;
  std::uint64_t projection_seed = 0;
};

struct LossBreakdown {
  double total = 0.0;
  double mse = 0.0;  // sum over arms of the within-arm mean squared error
  double ipm = 0.0;  // unweighted sliced W1 sum over treated arms vs arm 0
  nn::ParamPack grads;
};

// L = sum_a MSE(h_a(Phi), Y | T=a) + lambda * sum_{a>=1} W(Phi | T=0, Phi | T=a).
LossBreakdown cf_lstm_loss(const CfLstmModel& m, std::span<const Example> batch, const LossOptions& opts);
// Mean squared error of a single-head LSTM regressor over the batch.
LossBreakdown baseline_lstm_loss(const BaselineLstmModel& m, std::span<const Example> batch);

struct Prediction {
  double raw = 0.0;
  double clamped = 0.0;  // raw clamped to [1,5] for reporting
};

Prediction predict(const CfLstmModel& m, const Dialogue& d, Treatment arm);
Prediction predict(const BaselineLstmModel& m, const Dialogue& d);
Prediction predict(const BaselineMlpModel& m, const Dialogue& d);
// Factual prediction for any model; CF models use the dialogue's effective arm.
Prediction predict_factual(const AnyModel& m, const Dialogue& d);

CfLstmModel train_cf_lstm(const Dataset& train, const TreatmentPolicy& policy, const TrainConfig& cfg);
BaselineLstmModel train_baseline_lstm(const Dataset& train, const TrainConfig& cfg);
BaselineMlpModel train_baseline_mlp(const Dataset& train, const TrainConfig& cfg);

enum class ExtendPhases { HeadsOnly, HeadsThenAll };

// Appends k_new heads. Phase one trains only the new heads with the rest frozen;
// phase two fine-tunes everything. `policy` must define K + k_new arms.
CfLstmModel extend_treatments(const CfLstmModel& model, int k_new, const Dataset& fresh, const TreatmentPolicy& policy,
                              const TrainConfig& cfg, ExtendPhases phases = ExtendPhases::HeadsThenAll);

enum class ClassScheme { Binary, FiveClass };

// Binary: 0 below 3, else 1. Five-class: round half up, clamped to [1,5].
int classify(double rating, ClassScheme scheme);

double clamp_rating(double r);

}  // namespace cfrate
