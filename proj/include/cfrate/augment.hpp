#pragma once

#include <string>

#include "cfrate/data.hpp"
#include "cfrate/treatment.hpp"

namespace cfrate {

// For every turn m whose treatment is non-zero and whose prefix length m+1 reaches
// min_len, emits turns[0..m] as a new dialogue "<id>#aug<m>". The copy keeps the
// parent's date and rating and is flagged augmented. The input is never modified.
std::vector<Dialogue> augment_by_masking(const Dialogue& d, const TreatmentPolicy& policy,
                                         std::size_t min_len = kMinTurns);

// Rated dialogues with rating < threshold, in input order.
Dataset select_low_rated(const Dataset& ds, double threshold = 3.0);

// select_low_rated followed by augment_by_masking on each selected dialogue.
// Output order: by parent (input order), then by m.
Dataset augment_dataset(const Dataset& ds, const TreatmentPolicy& policy, double threshold = 3.0,
                        std::size_t min_len = kMinTurns);

std::string augmented_id(const std::string& parent, std::size_t m);

}  // namespace cfrate
