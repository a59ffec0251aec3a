#include <doctest.h>

#include <cmath>

#include "cfrate/data.hpp"
#include "helpers.hpp"

using namespace cfrate;

namespace {

std::string turn_json(int odes, double fill = 0.5) {
  std::vector<double> f(schema::kFeatureDim, fill);
  for (int c = 0; c < kOdesCount; ++c) f[static_cast<std::size_t>(c)] = (c == odes - 1) ? 1.0 : 0.0;
  std::string s = "{\"odes\":" + std::to_string(odes) + ",\"features\":[";
  for (std::size_t k = 0; k < f.size(); ++k) s += (k ? "," : "") + std::to_string(f[k]);
  return s + "]}";
}

std::string dialogue_line(const std::string& id, int n_turns, const std::string& rating = "4") {
  std::string s = "{\"id\":\"" + id + "\",\"date\":\"2021-05-04\",\"rating\":" + rating + ",\"turns\":[";
  for (int t = 0; t < n_turns; ++t) s += (t ? "," : "") + turn_json(14);
  return s + "]}";
}

}  // namespace

TEST_CASE("ODES codes map to categories and back") {
  for (int c = 1; c <= kOdesCount; ++c) CHECK(static_cast<int>(odes_from_code(c)) == c);
  CHECK_THROWS_AS(odes_from_code(0), ValidationError);
  CHECK_THROWS_AS(odes_from_code(15), ValidationError);
  CHECK(odes_name(OdesCategory::UserCompliment) == "user compliment");
}

TEST_CASE("feature schema slots are contiguous and cover 30 dims") {
  CHECK(schema::kSentimentOffset == kOdesCount);
  CHECK(schema::kAsrConfidence == schema::kSentimentOffset + schema::kSentimentCount);
  CHECK(schema::kFedOffset == schema::kAsrConfidence + 1);
  CHECK(schema::kDialogptRelevance == schema::kFedOffset + schema::kFedCount);
  CHECK(schema::kDialogrptOffset == schema::kDialogptRelevance + 1);
  CHECK(schema::kMeanNormIdf == schema::kDialogrptOffset + schema::kDialogrptCount);
  CHECK(schema::kMeanNormIdf + 1 == schema::kFeatureDim);
  CHECK(schema::kFeatureNames.size() == schema::kFeatureDim);
}

TEST_CASE("TurnFeatures views the schema blocks") {
  std::vector<double> f(schema::kFeatureDim);
  for (std::size_t k = 0; k < f.size(); ++k) f[k] = static_cast<double>(k);
  TurnFeatures v(f);
  CHECK(v.sentiment()[0] == 14.0);
  CHECK(v.asr_confidence() == 17.0);
  CHECK(v.fed()[7] == 25.0);
  CHECK(v.dialogpt_relevance() == 26.0);
  CHECK(v.dialogrpt()[1] == 28.0);
  CHECK(v.mean_norm_idf() == 29.0);
  CHECK_THROWS_AS(TurnFeatures(std::span<const double>(f.data(), 5)), ShapeError);
}

TEST_CASE("dates parse and format as ISO days") {
  const Date d = parse_date("2020-02-29");
  CHECK(format_date(d) == "2020-02-29");
  CHECK(format_date(d + std::chrono::days{1}) == "2020-03-01");
  CHECK_THROWS_AS(parse_date("2021-02-29"), ValidationError);
  CHECK_THROWS_AS(parse_date("2021-2-1"), ValidationError);
  CHECK_THROWS_AS(parse_date("yesterday"), ValidationError);
}

TEST_CASE("dataset parsing") {
  SUBCASE("valid lines, blank lines skipped, null rating kept as missing") {
    const std::string text = dialogue_line("a", 3) + "\n\n" + dialogue_line("b", 4, "null") + "\n";
    const Dataset ds = parse_dataset(text);
    REQUIRE(ds.size() == 2);
    CHECK(ds.dialogues[0].rating == 4.0);
    CHECK_FALSE(ds.dialogues[1].rating.has_value());
    CHECK(ds.dialogues[1].turns.size() == 4);
    CHECK(format_date(ds.dialogues[0].date) == "2021-05-04");
  }
  SUBCASE("malformed JSON reports the line number") {
    const std::string text = dialogue_line("a", 3) + "\n{\"id\": oops}\n";
    try {
      parse_dataset(text);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).rfind("line 2:", 0) == 0);
    }
  }
  SUBCASE("two-turn dialogue is rejected by id") {
    try {
      parse_dataset(dialogue_line("short-one", 2));
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("short-one") != std::string::npos);
    }
  }
  SUBCASE("duplicate ids, bad ratings and one-hot mismatches are rejected") {
    CHECK_THROWS_AS(parse_dataset(dialogue_line("a", 3) + "\n" + dialogue_line("a", 3)), ValidationError);
    CHECK_THROWS_AS(parse_dataset(dialogue_line("a", 3, "5.5")), ValidationError);
    CHECK_THROWS_AS(parse_dataset(dialogue_line("a", 3, "0.5")), ValidationError);
    std::string bad = dialogue_line("a", 3);
    bad.replace(bad.find("\"odes\":14"), 9, "\"odes\":3");
    CHECK_THROWS_AS(parse_dataset(bad), ValidationError);
  }
  SUBCASE("unknown ODES code is a parse error") {
    std::string bad = dialogue_line("a", 3);
    bad.replace(bad.find("\"odes\":14"), 9, "\"odes\":99");
    CHECK_THROWS_AS(parse_dataset(bad), ParseError);
  }
}

TEST_CASE("serialization round-trips bit-exactly") {
  nn::Rng rng(5);
  Dataset ds;
  for (int i = 0; i < 20; ++i) {
    auto d = testing::random_dialogue(rng, "d" + std::to_string(i), 3 + static_cast<std::size_t>(i % 7), 0.3,
                                      i % 5 == 0 ? std::nullopt : std::optional<double>(1.0 + 4.0 * (i % 9) / 8.0));
    if (i % 4 == 0) d.treatment = i % 2;
    if (i % 6 == 0) d.augmented = true;
    if (i % 3 == 0) d.text = "turn text " + std::to_string(i);
    ds.dialogues.push_back(std::move(d));
  }
  const std::string text = serialize_dataset(ds);
  const Dataset back = parse_dataset(text);
  CHECK(back == ds);
  CHECK(serialize_dataset(back) == text);

  testing::TempDir dir("data");
  save_dataset(ds, dir / "x.jsonl");
  CHECK(load_dataset(dir / "x.jsonl") == ds);
  CHECK_THROWS_AS(load_dataset(dir / "missing.jsonl"), Error);
}

TEST_CASE("z-score against a hand-computed oracle") {
  // Two dialogues of dimension 2 (non-schema, so no one-hot checks).
  Dataset ds;
  Dialogue a;
  a.id = "a";
  a.turns = {Turn{OdesCategory::Other, {1.0, 5.0}}, Turn{OdesCategory::Other, {2.0, 5.0}},
             Turn{OdesCategory::Other, {3.0, 5.0}}};
  Dialogue b;
  b.id = "b";
  b.turns = {Turn{OdesCategory::Other, {4.0, 5.0}}, Turn{OdesCategory::Other, {5.0, 5.0}},
             Turn{OdesCategory::Other, {6.0, 5.0}}};
  ds.dialogues = {a, b};
  const NormStats s = zscore_fit(ds);
  CHECK(s.mean[0] == doctest::Approx(3.5).epsilon(1e-15));
  // population variance of 1..6 is 35/12
  CHECK(s.std[0] == doctest::Approx(std::sqrt(35.0 / 12.0)).epsilon(1e-14));
  CHECK(s.mean[1] == 5.0);
  CHECK(s.std[1] == kStdFloor);  // constant column floored

  const Dataset z = zscore_apply(ds, s);
  REQUIRE(z.norm_stats.has_value());
  double sum = 0.0, sq = 0.0;
  for (const auto& d : z.dialogues) {
    for (const auto& t : d.turns) {
      sum += t.features[0];
      sq += t.features[0] * t.features[0];
      CHECK(t.features[1] == 0.0);
    }
  }
  CHECK(sum / 6.0 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sq / 6.0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(zscore_vector(std::vector<double>{1.0}, s), ShapeError);
  CHECK_THROWS_AS(zscore_fit(Dataset{}), ValidationError);
}

TEST_CASE("aggregate vector is [mean, first, last, penultimate]") {
  Dialogue d;
  d.id = "agg";
  d.turns = {Turn{OdesCategory::Other, {1.0, 10.0}}, Turn{OdesCategory::Other, {2.0, 20.0}},
             Turn{OdesCategory::Other, {3.0, 30.0}}, Turn{OdesCategory::Other, {6.0, 60.0}}};
  const auto v = aggregate_dialogue_features(d);
  const std::vector<double> want{3.0, 30.0, 1.0, 10.0, 6.0, 60.0, 3.0, 30.0};
  CHECK(v == want);
  const auto c = aggregate_dialogue_features(d, {true});
  REQUIRE(c.size() == 10);
  CHECK(c[8] == 12.0);
  CHECK(c[9] == 120.0);

  d.turns.resize(2);
  CHECK_THROWS_AS(aggregate_dialogue_features(d), ValidationError);
}

TEST_CASE("rated_only keeps order and drops missing ratings") {
  nn::Rng rng(1);
  Dataset ds;
  ds.dialogues.push_back(testing::random_dialogue(rng, "a", 3, 0.0, 2.0));
  ds.dialogues.push_back(testing::random_dialogue(rng, "b", 3, 0.0, std::nullopt));
  ds.dialogues.push_back(testing::random_dialogue(rng, "c", 3, 0.0, 5.0));
  const auto r = rated_only(ds);
  REQUIRE(r.size() == 2);
  CHECK(r.dialogues[0].id == "a");
  CHECK(r.dialogues[1].id == "c");
}
