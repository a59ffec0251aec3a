#include <doctest.h>

#include "cfrate/treatment.hpp"
#include "helpers.hpp"

using namespace cfrate;

namespace {

Dialogue with_categories(const std::vector<int>& codes) {
  nn::Rng rng(3);
  Dialogue d;
  d.id = "cats";
  d.rating = 3.0;
  for (int c : codes) d.turns.push_back(testing::random_turn(rng, odes_from_code(c)));
  return d;
}

}  // namespace

TEST_CASE("default policy: only 'other' is control") {
  const TreatmentPolicy p;
  CHECK(p.num_arms() == 2);
  for (int c = 1; c <= 13; ++c) CHECK(p.arm_of(odes_from_code(c)) == 1);
  CHECK(p.arm_of(OdesCategory::Other) == 0);
  CHECK(p.categories_for(0) == std::vector<OdesCategory>{OdesCategory::Other});
  CHECK(p.categories_for(1).size() == 13);
}

TEST_CASE("dialogue arm is the max over turns") {
  const TreatmentPolicy p;
  CHECK(assign_dialogue_treatment(with_categories({14, 14, 14}), p).value == 0);
  CHECK(assign_dialogue_treatment(with_categories({14, 14, 13}), p).value == 1);
  CHECK(assign_dialogue_treatment(with_categories({3, 14, 14}), p).value == 1);

  std::array<int, kOdesCount> three{};
  three.fill(1);
  three[odes_index(OdesCategory::Other)] = 0;
  three[odes_index(OdesCategory::UserCompliment)] = 2;
  const TreatmentPolicy p3(three);
  CHECK(p3.num_arms() == 3);
  CHECK(assign_dialogue_treatment(with_categories({2, 10, 14}), p3).value == 2);
  CHECK(assign_dialogue_treatment(with_categories({2, 14, 14}), p3).value == 1);
  CHECK(assign_turn_treatment(with_categories({10, 14, 14}).turns[0], p3).value == 2);
}

TEST_CASE("explicit treatment overrides the policy") {
  const TreatmentPolicy p;
  Dialogue d = with_categories({14, 14, 14});
  d.treatment = 1;
  CHECK(effective_treatment(d, p).value == 1);
  Dataset ds;
  ds.dialogues = {with_categories({14, 1, 14})};
  const Dataset a = assign_treatments(ds, p);
  REQUIRE(a.dialogues[0].treatment.has_value());
  CHECK(*a.dialogues[0].treatment == 1);
}

TEST_CASE("policies must have contiguous arms starting at 0") {
  std::array<int, kOdesCount> gap{};
  gap.fill(0);
  gap[0] = 2;
  CHECK_THROWS_AS(TreatmentPolicy{gap}, ValidationError);
  std::array<int, kOdesCount> neg{};
  neg.fill(1);
  neg[3] = -1;
  CHECK_THROWS_AS(TreatmentPolicy{neg}, ValidationError);
  std::array<int, kOdesCount> single{};
  single.fill(0);
  CHECK(TreatmentPolicy{single}.num_arms() == 1);  // everything control is allowed
}

TEST_CASE("policy JSON round trip and malformed input") {
  const TreatmentPolicy p;
  CHECK(TreatmentPolicy::from_json(p.to_json()) == p);
  std::array<int, kOdesCount> three{};
  three.fill(1);
  three[13] = 0;
  three[9] = 2;
  const TreatmentPolicy p3(three);
  CHECK(TreatmentPolicy::from_json(p3.to_json()) == p3);

  CHECK_THROWS_AS(TreatmentPolicy::from_json("not json"), Error);
  CHECK_THROWS_AS(TreatmentPolicy::from_json("{\"1\": 1}"), Error);  // missing categories
  CHECK_THROWS_AS(TreatmentPolicy::load("/nonexistent/policy.json"), Error);
}

TEST_CASE("positivity check") {
  const TreatmentPolicy p;
  Dataset ds;
  ds.dialogues = {with_categories({14, 14, 14}), with_categories({14, 14, 14})};
  ds.dialogues[1].id = "b";
  auto r = positivity_check(ds, p);
  CHECK(r.violated);
  CHECK(r.counts == std::vector<std::size_t>{2, 0});
  CHECK(r.warning.find("arm 1") != std::string::npos);

  ds.dialogues[1] = with_categories({14, 5, 14});
  ds.dialogues[1].id = "b";
  r = positivity_check(ds, p);
  CHECK_FALSE(r.violated);
  CHECK(r.proportions[0] == 0.5);
  CHECK(r.proportions[1] == 0.5);
  CHECK(r.warning.empty());
}

TEST_CASE("stub tagger labels the category examples") {
  struct Case {
    const char* text;
    OdesCategory want;
  };
  const Case cases[] = {
      {"I really couldn't care less.", OdesCategory::UserDisinterest},
      {"You are really a very stupid bot.", OdesCategory::UserCritique},
      {"I don't know what genre means.", OdesCategory::UserNotUnderstand},
      {"Can we talk about something else?", OdesCategory::UserRequestsTopicSwitch},
      {"B*** me.", OdesCategory::UserObscenity},
      {"No, I want to keep talking about music.", OdesCategory::UserRejectsTopicSwitch},
      {"Could you say that again?", OdesCategory::UserRequestsRepeat},
      {"Please stop I need to go to bed.", OdesCategory::UserRequestsStop},
      {"You are so full of sh**.", OdesCategory::UserInsult},
      {"That's really interesting.", OdesCategory::UserCompliment},
      {"You already asked me that question twice.", OdesCategory::UserCallsOutRepetition},
      {"You just said you had a cat.", OdesCategory::UserCallsOutContradiction},
      {"That's not what I said.", OdesCategory::SystemNotUnderstand},
      {"Yes, I often listen to Blackpink and BTS.", OdesCategory::Other},
  };
  for (const auto& c : cases) {
    CAPTURE(c.text);
    CHECK(stub_odes_tagger(c.text) == c.want);
  }
}
