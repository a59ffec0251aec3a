#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfrate/models.hpp"

namespace cfrate {

class LengthMismatchError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class InsufficientDataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ZeroVarianceError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Sample Pearson coefficient, clipped to [-1,1].
double pearson(std::span<const double> x, std::span<const double> y);

struct DatedValue {
  Date date;
  double value = 0.0;
  friend bool operator==(const DatedValue&, const DatedValue&) = default;
};

// L1d: mean per date, ascending. Throws InsufficientDataError on empty input.
std::vector<DatedValue> daily_average(std::span<const DatedValue> values);
// L7d: for each date, mean of the series values whose dates fall in the 7 calendar
// days ending at it. Input must be strictly increasing by date.
std::vector<DatedValue> rolling_7day(std::span<const DatedValue> series);

struct PredictionRow {
  std::string id;
  Date date;
  double truth = 0.0;
  int arm = 0;  // factual arm used (0 for baselines)
  Prediction prediction;
};

// Factual predictions for every rated dialogue, in dataset order.
std::vector<PredictionRow> factual_predictions(const AnyModel& model, const Dataset& ds);

struct EvalReport {
  // Unset when the metric is undefined; the reason is recorded in `errors`.
  std::optional<double> pearson_individual;
  std::optional<double> pearson_l1d;
  std::optional<double> pearson_l7d;
  std::optional<double> ate;                         // CF models with K = 2
  std::optional<double> mse_factual_counterfactual;  // CF models with K = 2
  double accuracy_binary = 0.0;
  double accuracy_5class = 0.0;
  std::size_t n_dialogues = 0;
  std::size_t n_days = 0;
  std::map<std::string, std::string> errors;  // metric name -> reason
};

nlohmann::ordered_json to_json(const EvalReport& r);
// Fixed-order, human-readable table (Individual, L1d, L7d, Binary, 5-class, ATE, MSE).
std::string format_table(const EvalReport& r);

// Throws ValidationError when `test` has no rated dialogues. For CF models the
// factual arm comes from each dialogue's treatment field or, failing that, `policy`
// (the model's own policy when not given).
EvalReport evaluate(const AnyModel& model, const Dataset& test,
                    const std::optional<TreatmentPolicy>& policy = std::nullopt);

// Mean of predict(d, 1) - predict(d, 0) on raw outputs. Throws unless K = 2.
double ate(const CfLstmModel& model, const Dataset& ds);
// Mean of predict(d, arm_b) - predict(d, arm_a) for any pair of arms.
double ate_between(const CfLstmModel& model, const Dataset& ds, int arm_a, int arm_b);
// Mean of (predict(d, 1) - predict(d, 0))^2 on raw outputs. Throws unless K = 2.
double mse_factual_counterfactual(const CfLstmModel& model, const Dataset& ds);

// Materializes each dialogue's binary treatment under `policy` and flips it.
// Throws ValidationError if the policy or any dialogue has more than two arms.
Dataset invert_treatments(const Dataset& ds, const TreatmentPolicy& policy = {});

}  // namespace cfrate
