#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cfrate/data.hpp"

namespace cfrate {

// Arm index in {0, ..., K-1}. Arm 0 is the control ("only neutral turns") group.
struct Treatment {
  int value = 0;
  friend auto operator<=>(const Treatment&, const Treatment&) = default;
};

// Total map from ODES category to arm. Arms must be contiguous from 0.
class TreatmentPolicy {
 public:
  // Default binary policy: (xiv) other -> 0, every other category (including (xiii)) -> 1.
  TreatmentPolicy();
  explicit TreatmentPolicy(const std::array<int, kOdesCount>& category_to_arm);

  int arm_of(OdesCategory c) const { return arms_[odes_index(c)]; }
  int num_arms() const { return num_arms_; }
  const std::array<int, kOdesCount>& arms() const { return arms_; }
  // Categories mapped to the given arm, in code order.
  std::vector<OdesCategory> categories_for(int arm) const;

  std::string to_json() const;  // {"1": 1, ..., "14": 0}
  static TreatmentPolicy from_json(std::string_view text);
  static TreatmentPolicy load(const std::filesystem::path& path);

  friend bool operator==(const TreatmentPolicy&, const TreatmentPolicy&) = default;

 private:
  std::array<int, kOdesCount> arms_{};
  int num_arms_ = 0;
};

Treatment assign_turn_treatment(const Turn& t, const TreatmentPolicy& p);
// Maximum arm over the turns; 0 iff every turn maps to arm 0.
Treatment assign_dialogue_treatment(const Dialogue& d, const TreatmentPolicy& p);
// Explicit override when present, otherwise the policy-derived arm.
Treatment effective_treatment(const Dialogue& d, const TreatmentPolicy& p);

// Copy of ds with every dialogue's treatment field materialized.
Dataset assign_treatments(const Dataset& ds, const TreatmentPolicy& p);

struct PositivityReport {
  std::vector<double> proportions;  // indexed by arm
  std::vector<std::size_t> counts;
  bool violated = false;            // some arm has proportion 0 or 1
  std::string warning;
};

// Fraction of dialogues per arm; logs a warning through the returned report when an
// arm is empty or holds every dialogue.
PositivityReport positivity_check(const Dataset& ds, const TreatmentPolicy& p);

// Keyword rules standing in for a trained ODES classifier. Demo quality only.
OdesCategory stub_odes_tagger(std::string_view utterance);

}  // namespace cfrate
