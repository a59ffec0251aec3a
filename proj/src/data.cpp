#include "cfrate/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace cfrate {

using nlohmann::json;

namespace schema {
const std::array<std::string_view, kFeatureDim> kFeatureNames = {
    "odes_user_disinterest",
    "odes_user_critique",
    "odes_user_not_understand",
    "odes_user_requests_topic_switch",
    "odes_user_obscenity",
    "odes_user_rejects_topic_switch",
    "odes_user_requests_repeat",
    "odes_user_requests_stop",
    "odes_user_insult",
    "odes_user_compliment",
    "odes_user_calls_out_repetition",
    "odes_user_calls_out_contradiction",
    "odes_system_not_understand",
    "odes_other",
    "sentiment_valence",
    "sentiment_satisfaction",
    "sentiment_activation",
    "asr_confidence",
    "fed_interestingness",
    "fed_engagingness",
    "fed_specificity",
    "fed_relevance",
    "fed_correctness",
    "fed_semantic_appropriateness",
    "fed_understandability",
    "fed_fluency",
    "dialogpt_relevance",
    "dialogrpt_width",
    "dialogrpt_depth",
    "mean_norm_idf",
};
}  // namespace schema

OdesCategory odes_from_code(int code) {
  if (code < 1 || code > kOdesCount) {
    throw ValidationError("ODES code " + std::to_string(code) + " outside 1..14");
  }
  return static_cast<OdesCategory>(code);
}

std::string_view odes_name(OdesCategory c) noexcept {
  switch (c) {
    case OdesCategory::UserDisinterest: return "user disinterest";
    case OdesCategory::UserCritique: return "user critique";
    case OdesCategory::UserNotUnderstand: return "user not understand";
    case OdesCategory::UserRequestsTopicSwitch: return "user requests topic switch";
    case OdesCategory::UserObscenity: return "user obscenity";
    case OdesCategory::UserRejectsTopicSwitch: return "user rejects topic switch";
    case OdesCategory::UserRequestsRepeat: return "user requests to repeat";
    case OdesCategory::UserRequestsStop: return "user requests to stop";
    case OdesCategory::UserInsult: return "user insult";
    case OdesCategory::UserCompliment: return "user compliment";
    case OdesCategory::UserCallsOutRepetition: return "user calls out repetition";
    case OdesCategory::UserCallsOutContradiction: return "user calls out contradiction";
    case OdesCategory::SystemNotUnderstand: return "system not understand";
    case OdesCategory::Other: return "other";
  }
  return "unknown";
}

TurnFeatures::TurnFeatures(std::span<const double> v) : v_(v) {
  if (v.size() != schema::kFeatureDim) {
    throw ShapeError("turn vector has " + std::to_string(v.size()) + " features, expected " +
                     std::to_string(schema::kFeatureDim));
  }
}

void set_odes_onehot(std::span<double> features, OdesCategory c) {
  if (features.size() < kOdesCount) throw ShapeError("feature vector too short for ODES one-hot");
  for (int k = 0; k < kOdesCount; ++k) features[schema::kOdesOffset + k] = 0.0;
  features[schema::kOdesOffset + odes_index(c)] = 1.0;
}

Date parse_date(std::string_view iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  const std::string s(iso);
  if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) {
    throw ValidationError("bad date '" + s + "', expected YYYY-MM-DD");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw ValidationError("invalid calendar date '" + s + "'");
  return Date{ymd};
}

std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

void validate_dialogue(const Dialogue& d, const ValidationOptions& opts) {
  if (d.turns.size() < kMinTurns) {
    throw ValidationError("dialogue '" + d.id + "' has " + std::to_string(d.turns.size()) +
                          " turn pairs, at least 3 required");
  }
  if (d.rating && !(*d.rating >= kMinRating && *d.rating <= kMaxRating)) {
    throw ValidationError("dialogue '" + d.id + "' rating " + std::to_string(*d.rating) + " outside [1,5]");
  }
  if (d.treatment && *d.treatment < 0) {
    throw ValidationError("dialogue '" + d.id + "' has negative treatment");
  }
  const std::size_t dim = opts.expected_dim.value_or(d.feature_dim());
  for (std::size_t k = 0; k < d.turns.size(); ++k) {
    const auto& t = d.turns[k];
    if (t.features.size() != dim) {
      throw ValidationError("dialogue '" + d.id + "' turn " + std::to_string(k) + " has " +
                            std::to_string(t.features.size()) + " features, expected " + std::to_string(dim));
    }
    for (double x : t.features) {
      if (!std::isfinite(x)) throw ValidationError("dialogue '" + d.id + "' has a non-finite feature");
    }
    if (opts.check_onehot && dim == schema::kFeatureDim) {
      for (int c = 0; c < kOdesCount; ++c) {
        const double want = (c == odes_index(t.odes)) ? 1.0 : 0.0;
        if (t.features[schema::kOdesOffset + c] != want) {
          throw ValidationError("dialogue '" + d.id + "' turn " + std::to_string(k) +
                                ": ODES one-hot disagrees with label " +
                                std::to_string(static_cast<int>(t.odes)));
        }
      }
    }
  }
}

void validate_dataset(const Dataset& ds, const ValidationOptions& opts) {
  std::unordered_set<std::string> seen;
  std::optional<std::size_t> dim = opts.expected_dim;
  for (const auto& d : ds.dialogues) {
    ValidationOptions o = opts;
    if (!dim) dim = d.feature_dim();
    o.expected_dim = dim;
    validate_dialogue(d, o);
    if (!seen.insert(d.id).second) throw ValidationError("duplicate dialogue id '" + d.id + "'");
  }
}

namespace {

json dialogue_to_json(const Dialogue& d) {
  json j;
  j["id"] = d.id;
  j["date"] = format_date(d.date);
  j["rating"] = d.rating ? json(*d.rating) : json(nullptr);
  json turns = json::array();
  for (const auto& t : d.turns) {
    turns.push_back({{"odes", static_cast<int>(t.odes)}, {"features", t.features}});
  }
  j["turns"] = std::move(turns);
  if (d.treatment) j["treatment"] = *d.treatment;
  if (d.augmented) j["augmented"] = true;
  if (d.text) j["text"] = *d.text;
  return j;
}

Dialogue dialogue_from_json(const json& j) {
  Dialogue d;
  d.id = j.at("id").get<std::string>();
  d.date = parse_date(j.at("date").get<std::string>());
  const auto& r = j.at("rating");
  if (!r.is_null()) {
    if (!r.is_number()) throw ValidationError("rating must be a number or null");
    d.rating = r.get<double>();
  }
  for (const auto& jt : j.at("turns")) {
    Turn t;
    t.odes = odes_from_code(jt.at("odes").get<int>());
    t.features = jt.at("features").get<std::vector<double>>();
    d.turns.push_back(std::move(t));
  }
  if (auto it = j.find("treatment"); it != j.end() && !it->is_null()) d.treatment = it->get<int>();
  if (auto it = j.find("augmented"); it != j.end()) d.augmented = it->get<bool>();
  if (auto it = j.find("text"); it != j.end() && it->is_string()) d.text = it->get<std::string>();
  return d;
}

}  // namespace

Dataset parse_dataset(std::string_view jsonl) {
  Dataset ds;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    Dialogue d;
    try {
      d = dialogue_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const ValidationError& e) {
      throw ParseError(line_no, e.what());
    }
    validate_dialogue(d);
    if (!seen.insert(d.id).second) throw ValidationError("duplicate dialogue id '" + d.id + "'");
    ds.dialogues.push_back(std::move(d));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

std::string serialize_dataset(const Dataset& ds) {
  std::string out;
  for (const auto& d : ds.dialogues) {
    out += dialogue_to_json(d).dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write dataset file '" + path.string() + "'");
  out << serialize_dataset(ds);
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

Dataset rated_only(const Dataset& ds) {
  Dataset out;
  out.norm_stats = ds.norm_stats;
  for (const auto& d : ds.dialogues) {
    if (d.rating) out.dialogues.push_back(d);
  }
  return out;
}

NormStats zscore_fit(const Dataset& train) {
  if (train.empty()) throw ValidationError("cannot fit normalization on an empty dataset");
  const std::size_t dim = train.dialogues.front().feature_dim();
  NormStats s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  std::size_t count = 0;
  for (const auto& d : train.dialogues) {
    for (const auto& t : d.turns) {
      if (t.features.size() != dim) throw ShapeError("inconsistent feature dimension in training set");
      for (std::size_t k = 0; k < dim; ++k) s.mean[k] += t.features[k];
      ++count;
    }
  }
  if (count == 0) throw ValidationError("training set has no turns");
  for (auto& m : s.mean) m /= static_cast<double>(count);
  // Two-pass variance for accuracy.
  for (const auto& d : train.dialogues) {
    for (const auto& t : d.turns) {
      for (std::size_t k = 0; k < dim; ++k) {
        const double c = t.features[k] - s.mean[k];
        s.std[k] += c * c;
      }
    }
  }
  for (auto& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(count)), kStdFloor);
  return s;
}

std::vector<double> zscore_vector(std::span<const double> x, const NormStats& stats) {
  if (x.size() != stats.dim()) {
    throw ShapeError("normalization stats have dimension " + std::to_string(stats.dim()) +
                     " but features have dimension " + std::to_string(x.size()));
  }
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = (x[k] - stats.mean[k]) / stats.std[k];
  return out;
}

Dataset zscore_apply(const Dataset& d, const NormStats& stats) {
  if (stats.std.size() != stats.mean.size()) throw ShapeError("malformed normalization stats");
  Dataset out = d;
  out.norm_stats = stats;
  for (auto& dlg : out.dialogues) {
    for (auto& t : dlg.turns) t.features = zscore_vector(t.features, stats);
  }
  return out;
}

std::vector<double> aggregate_dialogue_features(const Dialogue& d, AggregateOptions opts) {
  const std::size_t n = d.turns.size();
  if (n < kMinTurns) {
    throw ValidationError("dialogue '" + d.id + "' needs at least 3 turns to aggregate, has " + std::to_string(n));
  }
  const std::size_t dim = d.feature_dim();
  const std::size_t slots = opts.include_counts ? 5 : 4;
  std::vector<double> out(slots * dim, 0.0);
  for (const auto& t : d.turns) {
    if (t.features.size() != dim) throw ShapeError("inconsistent feature dimension in dialogue '" + d.id + "'");
    for (std::size_t k = 0; k < dim; ++k) out[k] += t.features[k];
  }
  for (std::size_t k = 0; k < dim; ++k) {
    const double sum = out[k];
    out[k] = sum / static_cast<double>(n);
    out[dim + k] = d.turns[0].features[k];
    out[2 * dim + k] = d.turns[n - 1].features[k];
    out[3 * dim + k] = d.turns[n - 2].features[k];
    if (opts.include_counts) out[4 * dim + k] = sum;
  }
  return out;
}

}  // namespace cfrate
