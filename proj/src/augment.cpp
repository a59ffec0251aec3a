#include "cfrate/augment.hpp"

namespace cfrate {

std::string augmented_id(const std::string& parent, std::size_t m) { return parent + "#aug" + std::to_string(m); }

std::vector<Dialogue> augment_by_masking(const Dialogue& d, const TreatmentPolicy& policy, std::size_t min_len) {
  if (min_len < kMinTurns) {
    throw ValidationError("augment_by_masking: min_len must be at least " + std::to_string(kMinTurns));
  }
  std::vector<Dialogue> out;
  for (std::size_t m = 0; m < d.turns.size(); ++m) {
    if (assign_turn_treatment(d.turns[m], policy).value == 0 || m + 1 < min_len) continue;
    Dialogue p;
    p.id = augmented_id(d.id, m);
    p.date = d.date;
    p.rating = d.rating;
    p.augmented = true;
    p.turns.assign(d.turns.begin(), d.turns.begin() + static_cast<std::ptrdiff_t>(m + 1));
    out.push_back(std::move(p));
  }
  return out;
}

Dataset select_low_rated(const Dataset& ds, double threshold) {
  Dataset out;
  out.norm_stats = ds.norm_stats;
  for (const auto& d : ds.dialogues) {
    if (d.rating && *d.rating < threshold) out.dialogues.push_back(d);
  }
  return out;
}

Dataset augment_dataset(const Dataset& ds, const TreatmentPolicy& policy, double threshold, std::size_t min_len) {
  Dataset out;
  out.norm_stats = ds.norm_stats;
  for (const auto& d : select_low_rated(ds, threshold).dialogues) {
    for (auto& a : augment_by_masking(d, policy, min_len)) out.dialogues.push_back(std::move(a));
  }
  return out;
}

}  // namespace cfrate
