#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfrate/error.hpp"

namespace cfrate {

// Open-domain evaluation signal categories, numbered as in the file format (1-14).
enum class OdesCategory : int {
  UserDisinterest = 1,
  UserCritique = 2,
  UserNotUnderstand = 3,
  UserRequestsTopicSwitch = 4,
  UserObscenity = 5,
  UserRejectsTopicSwitch = 6,
  UserRequestsRepeat = 7,
  UserRequestsStop = 8,
  UserInsult = 9,
  UserCompliment = 10,
  UserCallsOutRepetition = 11,
  UserCallsOutContradiction = 12,
  SystemNotUnderstand = 13,
  Other = 14,
};

inline constexpr int kOdesCount = 14;

constexpr int odes_index(OdesCategory c) noexcept { return static_cast<int>(c) - 1; }
OdesCategory odes_from_code(int code);  // throws ValidationError outside 1..14
std::string_view odes_name(OdesCategory c) noexcept;

// Layout of the flattened 30-dim turn vector. See docs/feature_schema.md.
namespace schema {
inline constexpr std::size_t kOdesOffset = 0;         // 14 one-hot slots
inline constexpr std::size_t kSentimentOffset = 14;   // valence, satisfaction, activation
inline constexpr std::size_t kAsrConfidence = 17;
inline constexpr std::size_t kFedOffset = 18;         // 8 FED scores
inline constexpr std::size_t kDialogptRelevance = 26;
inline constexpr std::size_t kDialogrptOffset = 27;   // width, depth
inline constexpr std::size_t kMeanNormIdf = 29;
inline constexpr std::size_t kFeatureDim = 30;

inline constexpr std::size_t kSentimentCount = 3;
inline constexpr std::size_t kFedCount = 8;
inline constexpr std::size_t kDialogrptCount = 2;

// Names in slot order; kFeatureNames[i] labels feature i.
extern const std::array<std::string_view, kFeatureDim> kFeatureNames;
}  // namespace schema

inline constexpr std::size_t kMinTurns = 3;
inline constexpr double kMinRating = 1.0;
inline constexpr double kMaxRating = 5.0;
inline constexpr double kStdFloor = 1e-6;

// One turn pair: its ODES label and the numeric feature vector.
struct Turn {
  OdesCategory odes = OdesCategory::Other;
  std::vector<double> features;

  friend bool operator==(const Turn&, const Turn&) = default;
};

// Typed read-only view over a schema-conformant turn vector.
class TurnFeatures {
 public:
  explicit TurnFeatures(std::span<const double> v);

  std::span<const double> odes_onehot() const { return v_.subspan(schema::kOdesOffset, kOdesCount); }
  std::span<const double> sentiment() const {
    return v_.subspan(schema::kSentimentOffset, schema::kSentimentCount);
  }
  double asr_confidence() const { return v_[schema::kAsrConfidence]; }
  std::span<const double> fed() const { return v_.subspan(schema::kFedOffset, schema::kFedCount); }
  double dialogpt_relevance() const { return v_[schema::kDialogptRelevance]; }
  std::span<const double> dialogrpt() const {
    return v_.subspan(schema::kDialogrptOffset, schema::kDialogrptCount);
  }
  double mean_norm_idf() const { return v_[schema::kMeanNormIdf]; }

 private:
  std::span<const double> v_;
};

// Writes the one-hot block of a schema-conformant vector for category c.
void set_odes_onehot(std::span<double> features, OdesCategory c);

using Date = std::chrono::sys_days;

Date parse_date(std::string_view iso);  // "YYYY-MM-DD"; throws ValidationError
std::string format_date(Date d);

struct Dialogue {
  std::string id;
  Date date{};
  std::vector<Turn> turns;
  std::optional<double> rating;
  // Explicit arm, overriding the policy-derived one (set by invert/assign).
  std::optional<int> treatment;
  bool augmented = false;
  std::optional<std::string> text;  // opaque, ignored by the pipeline

  std::size_t feature_dim() const { return turns.empty() ? 0 : turns.front().features.size(); }

  friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t dim() const { return mean.size(); }
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct Dataset {
  std::vector<Dialogue> dialogues;
  std::optional<NormStats> norm_stats;

  std::size_t size() const { return dialogues.size(); }
  bool empty() const { return dialogues.empty(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct ValidationOptions {
  std::optional<std::size_t> expected_dim = schema::kFeatureDim;
  // Raw (un-normalized) schema vectors must carry a one-hot block matching the label.
  bool check_onehot = true;
};

// Checks the Dialogue invariants: >= 3 turns, rating in [1,5], uniform dimension.
void validate_dialogue(const Dialogue& d, const ValidationOptions& opts = {});
// Adds uniqueness of ids on top of validate_dialogue.
void validate_dataset(const Dataset& ds, const ValidationOptions& opts = {});

Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::string_view jsonl);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
std::string serialize_dataset(const Dataset& ds);

// Rated dialogues only, in original order.
Dataset rated_only(const Dataset& ds);

NormStats zscore_fit(const Dataset& train);
// (x - mean) / std on every feature. Not idempotent: applying twice re-scales again.
Dataset zscore_apply(const Dataset& d, const NormStats& stats);
std::vector<double> zscore_vector(std::span<const double> x, const NormStats& stats);

struct AggregateOptions {
  bool include_counts = false;  // appends a per-dimension sum over turns
};

// [mean over turns, first turn, last turn, penultimate turn] (and optionally sums).
std::vector<double> aggregate_dialogue_features(const Dialogue& d, AggregateOptions opts = {});

}  // namespace cfrate
