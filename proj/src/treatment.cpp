#include "cfrate/treatment.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace cfrate {

namespace {

std::array<int, kOdesCount> default_arms() {
  std::array<int, kOdesCount> a{};
  a.fill(1);
  a[odes_index(OdesCategory::Other)] = 0;
  return a;
}

}  // namespace

TreatmentPolicy::TreatmentPolicy() : TreatmentPolicy(default_arms()) {}

TreatmentPolicy::TreatmentPolicy(const std::array<int, kOdesCount>& category_to_arm) : arms_(category_to_arm) {
  int max_arm = -1;
  for (int a : arms_) {
    if (a < 0) throw ValidationError("treatment policy maps a category to a negative arm");
    max_arm = std::max(max_arm, a);
  }
  std::vector<bool> used(static_cast<std::size_t>(max_arm + 1), false);
  for (int a : arms_) used[static_cast<std::size_t>(a)] = true;
  for (std::size_t a = 0; a < used.size(); ++a) {
    if (!used[a]) throw ValidationError("treatment policy arms are not contiguous: arm " + std::to_string(a) + " unused");
  }
  num_arms_ = max_arm + 1;
}

std::vector<OdesCategory> TreatmentPolicy::categories_for(int arm) const {
  std::vector<OdesCategory> out;
  for (int c = 1; c <= kOdesCount; ++c) {
    if (arms_[c - 1] == arm) out.push_back(static_cast<OdesCategory>(c));
  }
  return out;
}

std::string TreatmentPolicy::to_json() const {
  nlohmann::ordered_json j;
  for (int c = 1; c <= kOdesCount; ++c) j[std::to_string(c)] = arms_[c - 1];
  return j.dump();
}

TreatmentPolicy TreatmentPolicy::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed policy JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("policy must be a JSON object");
  std::array<int, kOdesCount> arms{};
  std::array<bool, kOdesCount> seen{};
  for (auto it = j.begin(); it != j.end(); ++it) {
    int code = 0;
    try {
      code = std::stoi(it.key());
    } catch (const std::exception&) {
      throw ValidationError("policy key '" + it.key() + "' is not an ODES code");
    }
    const int idx = odes_index(odes_from_code(code));
    if (!it.value().is_number_integer()) throw ValidationError("policy arm for '" + it.key() + "' must be an integer");
    arms[idx] = it.value().get<int>();
    seen[idx] = true;
  }
  for (int c = 0; c < kOdesCount; ++c) {
    if (!seen[c]) throw ValidationError("policy does not map ODES category " + std::to_string(c + 1));
  }
  return TreatmentPolicy(arms);
}

TreatmentPolicy TreatmentPolicy::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open policy file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

Treatment assign_turn_treatment(const Turn& t, const TreatmentPolicy& p) { return {p.arm_of(t.odes)}; }

Treatment assign_dialogue_treatment(const Dialogue& d, const TreatmentPolicy& p) {
  int arm = 0;
  for (const auto& t : d.turns) arm = std::max(arm, p.arm_of(t.odes));
  return {arm};
}

Treatment effective_treatment(const Dialogue& d, const TreatmentPolicy& p) {
  if (d.treatment) return {*d.treatment};
  return assign_dialogue_treatment(d, p);
}

Dataset assign_treatments(const Dataset& ds, const TreatmentPolicy& p) {
  Dataset out = ds;
  for (auto& d : out.dialogues) d.treatment = effective_treatment(d, p).value;
  return out;
}

PositivityReport positivity_check(const Dataset& ds, const TreatmentPolicy& p) {
  if (ds.empty()) throw ValidationError("positivity check needs a non-empty dataset");
  PositivityReport r;
  int arms = p.num_arms();
  for (const auto& d : ds.dialogues) arms = std::max(arms, effective_treatment(d, p).value + 1);
  r.counts.assign(static_cast<std::size_t>(arms), 0);
  for (const auto& d : ds.dialogues) ++r.counts[static_cast<std::size_t>(effective_treatment(d, p).value)];
  for (std::size_t a = 0; a < r.counts.size(); ++a) {
    const double prop = static_cast<double>(r.counts[a]) / static_cast<double>(ds.size());
    r.proportions.push_back(prop);
    if (prop == 0.0 || prop == 1.0) {
      r.violated = true;
      if (!r.warning.empty()) r.warning += "; ";
      r.warning += "arm " + std::to_string(a) + " has proportion " + (prop == 0.0 ? "0" : "1");
    }
  }
  if (r.violated) r.warning = "positivity violated: " + r.warning;
  return r;
}

OdesCategory stub_odes_tagger(std::string_view utterance) {
  std::string s(utterance);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto has = [&](std::string_view k) { return s.find(k) != std::string::npos; };

  // Order matters: more specific phrases first.
  if (has("already asked") || has("you already said") || has("repeating yourself")) {
    return OdesCategory::UserCallsOutRepetition;
  }
  if (has("you just said") || has("you said you") || has("contradict")) return OdesCategory::UserCallsOutContradiction;
  if (has("that's not what i said") || has("not what i said")) return OdesCategory::SystemNotUnderstand;
  if (has("say that again") || has("repeat that") || has("come again")) return OdesCategory::UserRequestsRepeat;
  if (has("something else") || has("change the subject") || has("talk about another")) {
    return OdesCategory::UserRequestsTopicSwitch;
  }
  if (has("keep talking about") || has("no, i want to")) return OdesCategory::UserRejectsTopicSwitch;
  if (has("stop") || has("go to bed") || has("goodbye") || has("shut up")) return OdesCategory::UserRequestsStop;
  if (has("couldn't care less") || has("don't care") || has("boring")) return OdesCategory::UserDisinterest;
  if (has("stupid") || has("dumb") || has("you suck")) return OdesCategory::UserCritique;
  if (has("full of sh") || has("idiot") || has("hate you")) return OdesCategory::UserInsult;
  if (has("don't know what") || has("what does that mean") || has("i don't understand")) {
    return OdesCategory::UserNotUnderstand;
  }
  if (has("***") || has("damn")) return OdesCategory::UserObscenity;
  if (has("really interesting") || has("that's cool") || has("you're great") || has("love talking")) {
    return OdesCategory::UserCompliment;
  }
  return OdesCategory::Other;
}

}  // namespace cfrate
