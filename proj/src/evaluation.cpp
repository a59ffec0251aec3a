#include "cfrate/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace cfrate {

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw LengthMismatchError("pearson: series lengths differ (" + std::to_string(x.size()) + " vs " +
                              std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw InsufficientDataError("pearson: need at least 2 points, got " + std::to_string(x.size()));
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ZeroVarianceError("pearson: a series has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<DatedValue> daily_average(std::span<const DatedValue> values) {
  if (values.empty()) throw InsufficientDataError("daily_average: empty input");
  std::map<Date, std::pair<double, std::size_t>> acc;
  for (const auto& v : values) {
    auto& a = acc[v.date];
    a.first += v.value;
    ++a.second;
  }
  std::vector<DatedValue> out;
  out.reserve(acc.size());
  for (const auto& [date, a] : acc) out.push_back({date, a.first / static_cast<double>(a.second)});
  return out;
}

std::vector<DatedValue> rolling_7day(std::span<const DatedValue> series) {
  for (std::size_t i = 1; i < series.size(); ++i) {
    if (!(series[i - 1].date < series[i].date)) {
      throw ValidationError("rolling_7day: dates must be strictly increasing (at " + format_date(series[i].date) + ")");
    }
  }
  std::vector<DatedValue> out;
  out.reserve(series.size());
  std::size_t lo = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    while (series[lo].date <= series[i].date - std::chrono::days{7}) ++lo;
    // At most 7 entries per window, so summing afresh is cheap and drift-free.
    double sum = 0.0;
    for (std::size_t k = lo; k <= i; ++k) sum += series[k].value;
    out.push_back({series[i].date, sum / static_cast<double>(i - lo + 1)});
  }
  return out;
}

namespace {

Treatment factual_arm(const Dialogue& d, const TreatmentPolicy& policy) { return effective_treatment(d, policy); }

std::vector<double> values_of(const std::vector<DatedValue>& xs) {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(x.value);
  return out;
}

void require_binary(const CfLstmModel& m, const char* what) {
  if (m.num_arms() != 2) {
    throw ValidationError(std::string(what) + " needs a two-arm model, this one has " + std::to_string(m.num_arms()) +
                          " (use ate_between for a pair of arms)");
  }
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

}  // namespace

std::vector<PredictionRow> factual_predictions(const AnyModel& model, const Dataset& ds) {
  std::vector<PredictionRow> rows;
  for (const auto& d : ds.dialogues) {
    if (!d.rating) continue;
    PredictionRow r{d.id, d.date, *d.rating, 0, {}};
    if (const auto* cf = std::get_if<CfLstmModel>(&model)) {
      r.arm = factual_arm(d, cf->policy).value;
      r.prediction = predict(*cf, d, Treatment{r.arm});
    } else {
      r.prediction = predict_factual(model, d);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

EvalReport evaluate(const AnyModel& model, const Dataset& test, const std::optional<TreatmentPolicy>& policy) {
  AnyModel local;
  const AnyModel* use = &model;
  if (policy) {
    if (const auto* cf = std::get_if<CfLstmModel>(&model)) {
      CfLstmModel copy = *cf;
      copy.policy = *policy;
      local = std::move(copy);
      use = &local;
    }
  }
  const auto rows = factual_predictions(*use, test);
  if (rows.empty()) throw ValidationError("evaluate: dataset has no rated dialogues");

  EvalReport r;
  r.n_dialogues = rows.size();
  std::vector<double> pred, truth;
  std::vector<DatedValue> pred_dated, truth_dated;
  std::size_t ok_binary = 0, ok_five = 0;
  for (const auto& row : rows) {
    const double p = row.prediction.clamped;
    pred.push_back(p);
    truth.push_back(row.truth);
    pred_dated.push_back({row.date, p});
    truth_dated.push_back({row.date, row.truth});
    ok_binary += classify(p, ClassScheme::Binary) == classify(row.truth, ClassScheme::Binary);
    ok_five += classify(p, ClassScheme::FiveClass) == classify(row.truth, ClassScheme::FiveClass);
  }
  r.accuracy_binary = static_cast<double>(ok_binary) / static_cast<double>(rows.size());
  r.accuracy_5class = static_cast<double>(ok_five) / static_cast<double>(rows.size());

  auto guarded = [&r](const std::string& name, std::optional<double>& slot, auto&& compute) {
    try {
      slot = compute();
    } catch (const Error& e) {
      r.errors[name] = e.what();
    }
  };

  const auto p1 = daily_average(pred_dated);
  const auto t1 = daily_average(truth_dated);
  r.n_days = p1.size();
  const auto p7 = rolling_7day(p1);
  const auto t7 = rolling_7day(t1);
  guarded("pearson_individual", r.pearson_individual, [&] { return pearson(pred, truth); });
  guarded("pearson_l1d", r.pearson_l1d, [&] { return pearson(values_of(p1), values_of(t1)); });
  guarded("pearson_l7d", r.pearson_l7d, [&] { return pearson(values_of(p7), values_of(t7)); });

  if (const auto* cf = std::get_if<CfLstmModel>(use)) {
    const Dataset rated = rated_only(test);
    guarded("ate", r.ate, [&] { return ate(*cf, rated); });
    guarded("mse_factual_counterfactual", r.mse_factual_counterfactual,
            [&] { return mse_factual_counterfactual(*cf, rated); });
  }
  return r;
}

double ate_between(const CfLstmModel& model, const Dataset& ds, int arm_a, int arm_b) {
  if (ds.empty()) throw ValidationError("ate: empty dataset");
  double s = 0.0;
  for (const auto& d : ds.dialogues) {
    s += predict(model, d, Treatment{arm_b}).raw - predict(model, d, Treatment{arm_a}).raw;
  }
  return s / static_cast<double>(ds.size());
}

double ate(const CfLstmModel& model, const Dataset& ds) {
  require_binary(model, "ate");
  return ate_between(model, ds, 0, 1);
}

double mse_factual_counterfactual(const CfLstmModel& model, const Dataset& ds) {
  require_binary(model, "mse_factual_counterfactual");
  if (ds.empty()) throw ValidationError("mse_factual_counterfactual: empty dataset");
  double s = 0.0;
  for (const auto& d : ds.dialogues) {
    const double diff = predict(model, d, Treatment{1}).raw - predict(model, d, Treatment{0}).raw;
    s += diff * diff;
  }
  return s / static_cast<double>(ds.size());
}

Dataset invert_treatments(const Dataset& ds, const TreatmentPolicy& policy) {
  if (policy.num_arms() > 2) throw ValidationError("invert_treatments: policy has more than two arms");
  Dataset out = ds;
  for (auto& d : out.dialogues) {
    const int t = effective_treatment(d, policy).value;
    if (t > 1) throw ValidationError("invert_treatments: dialogue '" + d.id + "' has treatment " + std::to_string(t));
    d.treatment = 1 - t;
  }
  return out;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    if (v) return *v;
    return nullptr;
  };
  nlohmann::ordered_json j;
  j["pearson_individual"] = opt(r.pearson_individual);
  j["pearson_l1d"] = opt(r.pearson_l1d);
  j["pearson_l7d"] = opt(r.pearson_l7d);
  j["ate"] = opt(r.ate);
  j["mse_factual_counterfactual"] = opt(r.mse_factual_counterfactual);
  j["accuracy_binary"] = r.accuracy_binary;
  j["accuracy_5class"] = r.accuracy_5class;
  j["n_dialogues"] = r.n_dialogues;
  j["n_days"] = r.n_days;
  j["errors"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.errors) j["errors"][k] = v;
  return j;
}

std::string format_table(const EvalReport& r) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %-12s %-12s %-12s %-12s %-12s %-12s\n", "Individual", "L1d", "L7d",
                "Binary", "5-class", "ATE", "MSE(Y1,Y0)");
  os << line;
  std::snprintf(line, sizeof line, "%-12s %-12s %-12s %-12s %-12s %-12s %-12s\n", fmt(r.pearson_individual).c_str(),
                fmt(r.pearson_l1d).c_str(), fmt(r.pearson_l7d).c_str(), fmt(r.accuracy_binary).c_str(),
                fmt(r.accuracy_5class).c_str(), fmt(r.ate).c_str(), fmt(r.mse_factual_counterfactual).c_str());
  os << line;
  os << "dialogues: " << r.n_dialogues << "  days: " << r.n_days << "\n";
  for (const auto& [k, v] : r.errors) os << k << ": " << v << "\n";
  return os.str();
}

}  // namespace cfrate
