#include "cfrate/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

namespace cfrate::synth {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr double kValenceScale = 0.4;
constexpr double kSatisfactionScale = 0.5;
constexpr double kFedScale = 0.12;
constexpr double kActivationScale = 0.12;

double fed_loading(std::size_t j) { return 0.6 + 0.1 * static_cast<double>(j); }

double probit(double p) { return boost::math::quantile(boost::math::normal_distribution<double>(), p); }

std::vector<double> turn_vector(double s, double engagement, OdesCategory c, nn::Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> f(schema::kFeatureDim, 0.0);
  set_odes_onehot(f, c);
  f[schema::kSentimentOffset + 0] = kValenceScale * s + 0.08 * n01(rng);
  f[schema::kSentimentOffset + 1] = 3.0 + kSatisfactionScale * s + 0.1 * n01(rng);
  f[schema::kSentimentOffset + 2] = 0.5 + kActivationScale * engagement + 0.06 * n01(rng);
  f[schema::kAsrConfidence] = std::clamp(0.85 + 0.06 * n01(rng), 0.0, 1.0);
  for (std::size_t j = 0; j < schema::kFedCount; ++j) {
    f[schema::kFedOffset + j] = 0.5 + kFedScale * fed_loading(j) * s + 0.04 * n01(rng);
  }
  f[schema::kDialogptRelevance] = 0.6 + 0.12 * n01(rng);
  f[schema::kDialogrptOffset + 0] = 0.5 + 0.05 * s + 0.1 * n01(rng);
  f[schema::kDialogrptOffset + 1] = 0.4 + 0.1 * n01(rng);
  f[schema::kMeanNormIdf] = 0.3 + 0.05 * n01(rng);
  return f;
}

double clamp_y(double y) { return std::clamp(y, kMinRating, kMaxRating); }

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("invalid synth config: " + what); };
  if (n_dialogues < 1) fail("n_dialogues must be positive");
  if (min_turns < static_cast<int>(kMinTurns)) fail("min_turns must be at least 3");
  if (max_turns < min_turns) fail("max_turns must be >= min_turns");
  if (!(mean_turns >= min_turns && mean_turns <= max_turns)) fail("mean_turns must lie in [min_turns, max_turns]");
  if (!(p1 > 0.0 && p1 < 1.0)) fail("p1 must lie in (0,1)");
  if (!(sigma >= 0.0)) fail("sigma must be >= 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0,1]");
  if (n_days < 1) fail("n_days must be positive");
  if (!(drift_period > 0.0)) fail("drift_period must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) fail("decay must lie in (0,1]");
  if (num_arms != 2 && num_arms != 3) fail("num_arms must be 2 or 3");
  if (num_arms == 3 && !(p2 > 0.0 && p1 + p2 < 1.0)) fail("p2 must be positive with p1 + p2 < 1");
  for (double v : {tau, kappa, tau2, drift, base, slope}) {
    if (!std::isfinite(v)) fail("parameters must be finite");
  }
}

SynthConfig heterogeneous_benchmark(std::uint64_t seed) {
  SynthConfig c;
  c.n_dialogues = 1000;
  c.effect = Effect::Heterogeneous;
  c.kappa = 1.0;
  c.sigma = 0.8;
  c.slope = 0.4;
  c.seed = seed;
  return c;
}

ordered_json to_json(const SynthConfig& c) {
  ordered_json j;
  j["n_dialogues"] = c.n_dialogues;
  j["min_turns"] = c.min_turns;
  j["max_turns"] = c.max_turns;
  j["mean_turns"] = c.mean_turns;
  j["p1"] = c.p1;
  j["tau"] = c.tau;
  j["effect"] = c.effect == Effect::Constant ? "constant" : "heterogeneous";
  j["kappa"] = c.kappa;
  j["sigma"] = c.sigma;
  j["gamma"] = c.gamma;
  j["start_date"] = format_date(c.start_date);
  j["n_days"] = c.n_days;
  j["drift"] = c.drift;
  j["drift_period"] = c.drift_period;
  j["base"] = c.base;
  j["slope"] = c.slope;
  j["decay"] = c.decay;
  j["num_arms"] = c.num_arms;
  j["p2"] = c.p2;
  j["tau2"] = c.tau2;
  j["seed"] = c.seed;
  j["id_prefix"] = c.id_prefix;
  return j;
}

void apply_json(SynthConfig& c, const json& j) {
  if (!j.is_object()) throw ValidationError("synth config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& v = it.value();
      if (k == "n_dialogues") c.n_dialogues = v.get<std::size_t>();
      else if (k == "min_turns") c.min_turns = v.get<int>();
      else if (k == "max_turns") c.max_turns = v.get<int>();
      else if (k == "mean_turns") c.mean_turns = v.get<double>();
      else if (k == "p1") c.p1 = v.get<double>();
      else if (k == "tau") c.tau = v.get<double>();
      else if (k == "kappa") c.kappa = v.get<double>();
      else if (k == "sigma") c.sigma = v.get<double>();
      else if (k == "gamma") c.gamma = v.get<double>();
      else if (k == "start_date") c.start_date = parse_date(v.get<std::string>());
      else if (k == "n_days") c.n_days = v.get<int>();
      else if (k == "drift") c.drift = v.get<double>();
      else if (k == "drift_period") c.drift_period = v.get<double>();
      else if (k == "base") c.base = v.get<double>();
      else if (k == "slope") c.slope = v.get<double>();
      else if (k == "decay") c.decay = v.get<double>();
      else if (k == "num_arms") c.num_arms = v.get<int>();
      else if (k == "p2") c.p2 = v.get<double>();
      else if (k == "tau2") c.tau2 = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "id_prefix") c.id_prefix = v.get<std::string>();
      else if (k == "effect") {
        const auto s = v.get<std::string>();
        if (s == "constant") c.effect = Effect::Constant;
        else if (s == "heterogeneous") c.effect = Effect::Heterogeneous;
        else throw ValidationError("effect must be 'constant' or 'heterogeneous', got '" + s + "'");
      } else {
        throw ValidationError("unknown synth config key '" + k + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synth config: ") + e.what());
  }
}

TreatmentPolicy synth_policy(int num_arms) {
  if (num_arms == 2) return TreatmentPolicy{};
  if (num_arms != 3) throw ValidationError("synth_policy: num_arms must be 2 or 3");
  auto arms = TreatmentPolicy{}.arms();
  arms[odes_index(OdesCategory::UserCompliment)] = 2;
  return TreatmentPolicy{arms};
}

double quality_index(std::span<const double> f) {
  if (f.size() != schema::kFeatureDim) throw ShapeError("quality_index: expected a 30-dim turn vector");
  double fed = 0.0;
  for (std::size_t j = 0; j < schema::kFedCount; ++j) {
    fed += (f[schema::kFedOffset + j] - 0.5) / (kFedScale * fed_loading(j));
  }
  fed /= static_cast<double>(schema::kFedCount);
  const double valence = f[schema::kSentimentOffset] / kValenceScale;
  const double satisfaction = (f[schema::kSentimentOffset + 1] - 3.0) / kSatisfactionScale;
  return 0.25 * valence + 0.25 * satisfaction + 0.5 * fed;
}

double recency_quality(const Dialogue& d, double decay) {
  if (d.turns.empty()) throw ValidationError("recency_quality: dialogue has no turns");
  double num = 0.0, den = 0.0, w = 1.0;
  for (auto it = d.turns.rbegin(); it != d.turns.rend(); ++it) {
    num += w * quality_index(it->features);
    den += w;
    w *= decay;
  }
  return num / den;
}

double engagement_index(const Dialogue& d) {
  if (d.turns.empty()) throw ValidationError("engagement_index: dialogue has no turns");
  double s = 0.0;
  for (const auto& t : d.turns) {
    if (t.features.size() != schema::kFeatureDim) throw ShapeError("engagement_index: expected a 30-dim turn vector");
    s += (t.features[schema::kSentimentOffset + 2] - 0.5) / kActivationScale;
  }
  return s / static_cast<double>(d.turns.size());
}

double GroundTruth::true_ate(int arm) const {
  if (arm < 1 || static_cast<std::size_t>(arm) > ate_raw.size()) {
    throw ValidationError("true_ate: arm " + std::to_string(arm) + " out of range");
  }
  const auto i = static_cast<std::size_t>(arm - 1);
  return target == "raw" ? ate_raw[i] : ate_clamped[i];
}

Generated generate(const SynthConfig& cfg) {
  cfg.validate();
  const TreatmentPolicy policy = synth_policy(cfg.num_arms);
  const auto arm1_cats = policy.categories_for(1);
  const std::vector<OdesCategory> arm2_cats =
      cfg.num_arms == 3 ? policy.categories_for(2) : std::vector<OdesCategory>{};
  const double cut1 = probit(1.0 - cfg.p1);
  const double cut2 = cfg.num_arms == 3 ? probit(cfg.p2) : -std::numeric_limits<double>::infinity();
  const double rho = 0.7;
  const double innovation = 0.6 * std::sqrt(1.0 - rho * rho);

  Generated out;
  out.truth.config = cfg;
  const auto k = static_cast<std::size_t>(cfg.num_arms);
  std::vector<double> sum_raw(k - 1, 0.0), sum_clamped(k - 1, 0.0);
  const int width = std::max<int>(6, static_cast<int>(std::to_string(cfg.n_dialogues).size()));

  for (std::size_t i = 0; i < cfg.n_dialogues; ++i) {
    nn::Rng rng(nn::derive_seed(cfg.seed, 0x5e7d, i));
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_int_distribution<int> day_dist(0, cfg.n_days - 1);
    std::poisson_distribution<int> extra_turns(cfg.mean_turns - cfg.min_turns);
    std::poisson_distribution<int> extra_signals(0.8);

    Dialogue d;
    std::string num = std::to_string(i);
    d.id = cfg.id_prefix + "-" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(num.size(), width), '0') + num;
    const int day = day_dist(rng);
    d.date = cfg.start_date + std::chrono::days{day};
    const double drift = cfg.drift * std::sin(2.0 * std::numbers::pi * day / cfg.drift_period);
    const int n = std::min(cfg.max_turns, cfg.min_turns + (cfg.mean_turns > cfg.min_turns ? extra_turns(rng) : 0));

    const double z = n01(rng);
    const double engagement = n01(rng);
    const double v = -cfg.gamma * z + std::sqrt(1.0 - cfg.gamma * cfg.gamma) * n01(rng);
    int arm = 0;
    if (v > cut1) arm = 1;
    else if (v < cut2) arm = 2;

    std::vector<OdesCategory> cats(static_cast<std::size_t>(n), OdesCategory::Other);
    if (arm > 0) {
      const auto& pool = arm == 1 ? arm1_cats : arm2_cats;
      const int m = std::min(n, 1 + extra_signals(rng));
      std::vector<int> pos(static_cast<std::size_t>(n));
      std::iota(pos.begin(), pos.end(), 0);
      std::shuffle(pos.begin(), pos.end(), rng);
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (int s = 0; s < m; ++s) cats[static_cast<std::size_t>(pos[static_cast<std::size_t>(s)])] = pool[pick(rng)];
    }

    double u = 0.6 * n01(rng);
    for (int t = 0; t < n; ++t) {
      if (t > 0) u = rho * u + innovation * n01(rng);
      const double s = z + drift + u;
      d.turns.push_back(Turn{cats[static_cast<std::size_t>(t)], turn_vector(s, engagement, cats[static_cast<std::size_t>(t)], rng)});
    }

    const double e = recency_quality(d, cfg.decay);
    const double noise = cfg.sigma > 0.0 ? cfg.sigma * n01(rng) : 0.0;
    Outcome o;
    o.id = d.id;
    o.arm = arm;
    o.f = cfg.base + cfg.slope * e;
    o.noise = noise;
    o.y_raw.push_back(o.f + noise);
    o.y_raw.push_back(o.f + cfg.tau + (cfg.effect == Effect::Heterogeneous ? cfg.kappa * engagement_index(d) : 0.0) + noise);
    if (k == 3) o.y_raw.push_back(o.f + cfg.tau2 + noise);
    for (double y : o.y_raw) o.y.push_back(clamp_y(y));
    for (std::size_t a = 1; a < k; ++a) {
      const double raw_effect = o.y_raw[a] - o.y_raw[0];
      const double clamped_effect = o.y[a] - o.y[0];
      sum_raw[a - 1] += raw_effect;
      sum_clamped[a - 1] += clamped_effect;
      if (raw_effect != clamped_effect) ++out.truth.clamped_effects;
    }
    d.rating = o.y[static_cast<std::size_t>(arm)];
    out.dataset.dialogues.push_back(std::move(d));
    out.truth.outcomes.push_back(std::move(o));
  }
  const auto nd = static_cast<double>(cfg.n_dialogues);
  for (std::size_t a = 0; a + 1 < k; ++a) {
    out.truth.ate_raw.push_back(sum_raw[a] / nd);
    out.truth.ate_clamped.push_back(sum_clamped[a] / nd);
  }
  out.truth.target = out.truth.clamped_effects == 0 ? "raw" : "clamped";
  return out;
}

ordered_json to_json(const GroundTruth& t) {
  ordered_json j;
  j["format"] = "cfrate-truth/1";
  j["config"] = to_json(t.config);
  j["ate_raw"] = t.ate_raw;
  j["ate_clamped"] = t.ate_clamped;
  j["target"] = t.target;
  j["clamped_effects"] = t.clamped_effects;
  ordered_json rows = ordered_json::array();
  for (const auto& o : t.outcomes) {
    ordered_json r;
    r["id"] = o.id;
    r["arm"] = o.arm;
    r["f"] = o.f;
    r["noise"] = o.noise;
    r["y_raw"] = o.y_raw;
    r["y"] = o.y;
    rows.push_back(std::move(r));
  }
  j["dialogues"] = std::move(rows);
  return j;
}

GroundTruth truth_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "cfrate-truth/1") throw ValidationError("unsupported truth file format");
    GroundTruth t;
    apply_json(t.config, j.at("config"));
    t.ate_raw = j.at("ate_raw").get<std::vector<double>>();
    t.ate_clamped = j.at("ate_clamped").get<std::vector<double>>();
    t.target = j.at("target").get<std::string>();
    t.clamped_effects = j.at("clamped_effects").get<std::size_t>();
    for (const auto& r : j.at("dialogues")) {
      Outcome o;
      o.id = r.at("id").get<std::string>();
      o.arm = r.at("arm").get<int>();
      o.f = r.at("f").get<double>();
      o.noise = r.at("noise").get<double>();
      o.y_raw = r.at("y_raw").get<std::vector<double>>();
      o.y = r.at("y").get<std::vector<double>>();
      t.outcomes.push_back(std::move(o));
    }
    return t;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("truth file: ") + e.what());
  }
}

void save_truth(const GroundTruth& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write truth file '" + path.string() + "'");
  out << to_json(t).dump(1) << "\n";
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

GroundTruth load_truth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open truth file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed truth file: ") + e.what());
  }
  return truth_from_json(j);
}

std::filesystem::path truth_path_for(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p.replace_filename(dataset_path.stem().string() + ".truth.json");
  return p;
}

OracleReport oracle_metrics(const ArmPredictor& predictor, const Dataset& ds, const GroundTruth& truth, int arm) {
  std::map<std::string, const Outcome*> by_id;
  for (const auto& o : truth.outcomes) by_id[o.id] = &o;
  OracleReport r;
  r.ate_true = truth.true_ate(arm);
  double ate_sum = 0.0, cf_sq = 0.0, f_sq = 0.0;
  std::size_t n = 0, n_cf = 0;
  for (const auto& d : ds.dialogues) {
    const auto it = by_id.find(d.id);
    if (it == by_id.end()) throw ValidationError("oracle_metrics: dialogue '" + d.id + "' is not in the truth record");
    const Outcome& o = *it->second;
    std::vector<double> pred;
    for (std::size_t a = 0; a < o.y.size(); ++a) pred.push_back(predictor(d, static_cast<int>(a)));
    ate_sum += pred[static_cast<std::size_t>(arm)] - pred[0];
    for (std::size_t a = 0; a < o.y.size(); ++a) {
      const double err = clamp_y(pred[a]) - o.y[a];
      if (static_cast<int>(a) == o.arm) {
        f_sq += err * err;
      } else {
        cf_sq += err * err;
        ++n_cf;
      }
    }
    ++n;
  }
  if (n == 0) throw ValidationError("oracle_metrics: empty dataset");
  r.ate_model = ate_sum / static_cast<double>(n);
  r.ate_error = std::abs(r.ate_model - r.ate_true);
  r.counterfactual_rmse = std::sqrt(cf_sq / static_cast<double>(n_cf));
  r.factual_rmse = std::sqrt(f_sq / static_cast<double>(n));
  return r;
}

OracleReport oracle_metrics(const CfLstmModel& model, const Dataset& ds, const GroundTruth& truth, int arm) {
  if (model.num_arms() < static_cast<int>(truth.config.num_arms)) {
    throw ValidationError("oracle_metrics: model has fewer heads than the generator has arms");
  }
  return oracle_metrics([&model](const Dialogue& d, int a) { return predict(model, d, Treatment{a}).raw; }, ds, truth,
                        arm);
}

}  // namespace cfrate::synth
