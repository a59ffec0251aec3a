#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "cfrate/models.hpp"

namespace cfrate {

inline constexpr std::string_view kCheckpointFormat = "cfrate-checkpoint/1";

nlohmann::json to_json(const TrainConfig& cfg);
// Overwrites only the keys present in j; unknown keys are a ValidationError.
void apply_json(TrainConfig& cfg, const nlohmann::json& j);

// JSON checkpoint: format tag, model kind, config, parameter arrays (row-major with
// shapes), optimizer and RNG state, and for CF models the policy, lambda and K.
std::string serialize_checkpoint(const AnyModel& model);
AnyModel parse_checkpoint(std::string_view text);

void save_checkpoint(const AnyModel& model, const std::filesystem::path& path);
AnyModel load_checkpoint(const std::filesystem::path& path);

}  // namespace cfrate
