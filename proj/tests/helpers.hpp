#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <random>
#include <string>
#include <unistd.h>

#include "cfrate/data.hpp"
#include "cfrate/neural.hpp"
#include "cfrate/treatment.hpp"

namespace testing {

using cfrate::Dataset;
using cfrate::Dialogue;
using cfrate::OdesCategory;
using cfrate::Turn;

// A schema-conformant turn with random features; `odes` sets the one-hot block.
inline Turn random_turn(cfrate::nn::Rng& rng, OdesCategory odes) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Turn t;
  t.odes = odes;
  t.features.assign(cfrate::schema::kFeatureDim, 0.0);
  for (std::size_t k = cfrate::schema::kSentimentOffset; k < cfrate::schema::kFeatureDim; ++k) t.features[k] = n01(rng);
  cfrate::set_odes_onehot(t.features, odes);
  return t;
}

// Random dialogue whose turns are "other" except with probability p_problem.
inline Dialogue random_dialogue(cfrate::nn::Rng& rng, const std::string& id, std::size_t n_turns,
                                double p_problem = 0.2, std::optional<double> rating = 3.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> code(1, 13);
  Dialogue d;
  d.id = id;
  d.date = cfrate::parse_date("2021-03-01") + std::chrono::days{static_cast<int>(rng() % 20)};
  d.rating = rating;
  for (std::size_t t = 0; t < n_turns; ++t) {
    const auto odes = u(rng) < p_problem ? cfrate::odes_from_code(code(rng)) : OdesCategory::Other;
    d.turns.push_back(random_turn(rng, odes));
  }
  return d;
}

// Non-schema dialogue of arbitrary dimension (for small-model tests).
inline Dialogue small_dialogue(cfrate::nn::Rng& rng, const std::string& id, std::size_t n_turns, std::size_t dim,
                               double rating) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Dialogue d;
  d.id = id;
  d.date = cfrate::parse_date("2021-03-01");
  d.rating = rating;
  for (std::size_t t = 0; t < n_turns; ++t) {
    Turn turn;
    turn.features.resize(dim);
    for (auto& x : turn.features) x = n01(rng);
    d.turns.push_back(std::move(turn));
  }
  return d;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("cfrate-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace testing
