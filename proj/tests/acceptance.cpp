// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cfrate/augment.hpp"
#include "cfrate/evaluation.hpp"
#include "cfrate/synth.hpp"
#include "cli.hpp"
#include "helpers.hpp"

using namespace cfrate;
using nn::Matrix;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Example> random_batch(nn::Rng& rng, std::vector<int> arms, Eigen::Index dim) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> r(1.0, 5.0);
  std::vector<Example> out;
  for (int a : arms) {
    Example ex;
    ex.inputs = Matrix(dim, 3 + static_cast<Eigen::Index>(rng() % 6));
    for (Eigen::Index k = 0; k < ex.inputs.size(); ++k) ex.inputs.data()[k] = n01(rng);
    ex.arm = a;
    ex.rating = r(rng);
    out.push_back(std::move(ex));
  }
  return out;
}

// ---- 1 -------------------------------------------------------------------

double worst_gradient_error(CfLstmModel m, const std::vector<Example>& batch, const LossOptions& o) {
  const auto analytic = cf_lstm_loss(m, batch, o).grads;
  const auto pack = m.params();
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t p = 0; p < pack.size(); ++p) {
    auto probe = pack;
    for (Eigen::Index i = 0; i < pack.values[p].size(); ++i) {
      const double old = pack.values[p].data()[i];
      probe.values[p].data()[i] = old + h;
      m.set_params(probe);
      const double up = cf_lstm_loss(m, batch, o).total;
      probe.values[p].data()[i] = old - h;
      m.set_params(probe);
      const double dn = cf_lstm_loss(m, batch, o).total;
      probe.values[p].data()[i] = old;
      const double fd = (up - dn) / (2 * h);
      const double an = analytic.values[p].data()[i];
      const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, std::abs(fd - an) / scale);
    }
  }
  return worst;
}

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg;
  cfg.hidden_size = 8;
  cfg.head_layers = {8};
  nn::Rng rng(2024);
  const auto m = init_cf_lstm(schema::kFeatureDim, 2, cfg, rng);
  const LossOptions o{1.0, 20, 17};
  // three dialogues as specified, then a 2+2 batch so the IPM term is active too
  const double e3 = worst_gradient_error(m, random_batch(rng, {0, 1, 0}, 30), o);
  const auto b4 = random_batch(rng, {0, 1, 0, 1}, 30);
  const double ipm = cf_lstm_loss(m, b4, o).ipm;
  const double e4 = worst_gradient_error(m, b4, o);
  const double secs = seconds_since(t0);
  return {e3 < 1e-3 && e4 < 1e-3 && ipm > 0.0 && secs < 30.0,
          "max rel err " + fmt(e3, 3) + " (3 dialogues), " + fmt(e4, 3) + " (4 dialogues, IPM " + fmt(ipm, 3) +
              "), " + fmt(secs, 3) + " s"};
}

// ---- 2 -------------------------------------------------------------------

double permutation_w1(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<std::size_t> perm(b.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) c += std::abs(a[i] - b[perm[i]]);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(a.size());
}

// Hungarian algorithm (potentials form) on an n x n cost matrix.
double assignment_cost(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) total += cost[p[j] - 1][j - 1];
  return total;
}

// Unequal sizes: both uniform measures become uniform on lcm(m, n) replicated atoms.
double replicated_w1(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t L = std::lcm(a.size(), b.size());
  std::vector<double> ra, rb;
  for (double x : a)
    for (std::size_t k = 0; k < L / a.size(); ++k) ra.push_back(x);
  for (double x : b)
    for (std::size_t k = 0; k < L / b.size(); ++k) rb.push_back(x);
  std::vector<std::vector<double>> cost(L, std::vector<double>(L));
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) cost[i][j] = std::abs(ra[i] - rb[j]);
  return assignment_cost(cost) / static_cast<double>(L);
}

Outcome ot_correctness() {
  nn::Rng rng(7);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto draw = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = n01(rng);
    return v;
  };
  double worst = 0.0;
  std::size_t pairs = 0;
  for (std::size_t m = 1; m <= 6; ++m) {
    for (std::size_t n = 1; n <= 6; ++n) {
      for (int trial = 0; trial < 10; ++trial) {
        const auto a = draw(m), b = draw(n);
        const double want = m == n ? permutation_w1(a, b) : replicated_w1(a, b);
        worst = std::max(worst, std::abs(ipm::wasserstein1_1d(a, b) - want));
        ++pairs;
      }
    }
  }
  std::size_t axiom_failures = 0;
  std::uniform_int_distribution<std::size_t> size(1, 12);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = draw(size(rng)), b = draw(size(rng)), c = draw(size(rng));
    const double ab = ipm::wasserstein1_1d(a, b), ba = ipm::wasserstein1_1d(b, a);
    const bool ok = std::abs(ab - ba) <= 1e-12 && ipm::wasserstein1_1d(a, a) == 0.0 && ab >= 0.0 &&
                    ab <= ipm::wasserstein1_1d(a, c) + ipm::wasserstein1_1d(c, b) + 1e-12;
    axiom_failures += !ok;
  }
  return {worst < 1e-9 && axiom_failures == 0, std::to_string(pairs) + " pairs, max abs err " + fmt(worst, 3) +
                                                   "; axiom failures " + std::to_string(axiom_failures) + "/1000"};
}

// ---- 3 and 5 ------------------------------------------------------------

struct DefaultRuns {
  std::vector<double> ate;
  std::vector<double> pearson, pearson_inverted;
  double seconds = 0.0;
  std::string error;
};

const DefaultRuns& default_runs() {
  static const DefaultRuns runs = [] {
    DefaultRuns r;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        synth::SynthConfig sc;
        sc.n_dialogues = 5000;
        sc.seed = seed;
        const auto train = synth::generate(sc);
        auto tc = sc;
        tc.n_dialogues = 2000;
        tc.seed = seed + 1000;
        tc.id_prefix = "test";
        const auto test = synth::generate(tc);
        TrainConfig cfg;
        cfg.seed = seed;
        const auto model = train_cf_lstm(train.dataset, synth::synth_policy(2), cfg);
        const auto report = evaluate(model, test.dataset);
        const auto inverted = evaluate(model, invert_treatments(test.dataset));
        r.ate.push_back(ate(model, test.dataset));
        r.pearson.push_back(report.pearson_individual.value_or(NAN));
        r.pearson_inverted.push_back(inverted.pearson_individual.value_or(NAN));
      }
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.seconds = seconds_since(t0);
    return r;
  }();
  return runs;
}

Outcome ate_recovery() {
  const auto& r = default_runs();
  if (!r.error.empty()) return {false, r.error};
  const double tau = synth::SynthConfig{}.tau;
  const double med = median3(r.ate);
  std::string per_seed;
  for (double a : r.ate) per_seed += (per_seed.empty() ? "" : ", ") + fmt(a);
  return {std::abs(med - tau) <= 0.15 && r.seconds < 600.0,
          "median ATE " + fmt(med) + " vs tau " + fmt(tau) + " (seeds: " + per_seed + "), " + fmt(r.seconds, 3) + " s"};
}

Outcome inverted_trend() {
  const auto& r = default_runs();
  if (!r.error.empty()) return {false, r.error};
  const double orig = median3(r.pearson), inv = median3(r.pearson_inverted);
  return {inv < orig && inv > 0.5 * orig,
          "median individual Pearson " + fmt(orig) + " -> " + fmt(inv) + " inverted (ratio " + fmt(inv / orig, 3) + ")"};
}

// ---- 4 -------------------------------------------------------------------

Outcome model_ordering() {
  struct Run {
    double cf, lstm, mlp;
    EvalReport cf_report;
  };
  std::vector<Run> runs;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto sc = synth::heterogeneous_benchmark(seed);
    const auto train = synth::generate(sc);
    auto tc = sc;
    tc.n_dialogues = 2000;
    tc.seed = seed + 1000;
    tc.id_prefix = "test";
    const auto test = synth::generate(tc);
    TrainConfig cfg;
    cfg.seed = seed;
    const auto cf = evaluate(train_cf_lstm(train.dataset, synth::synth_policy(2), cfg), test.dataset);
    const auto lstm = evaluate(train_baseline_lstm(train.dataset, cfg), test.dataset);
    const auto mlp = evaluate(train_baseline_mlp(train.dataset, cfg), test.dataset);
    runs.push_back({cf.pearson_individual.value_or(NAN), lstm.pearson_individual.value_or(NAN),
                    mlp.pearson_individual.value_or(NAN), cf});
  }
  std::vector<double> cf, lstm, mlp;
  for (const auto& r : runs) {
    cf.push_back(r.cf);
    lstm.push_back(r.lstm);
    mlp.push_back(r.mlp);
  }
  const double mcf = median3(cf), mlstm = median3(lstm), mmlp = median3(mlp);
  const auto median_run = std::find_if(runs.begin(), runs.end(), [&](const Run& r) { return r.cf == mcf; });
  const auto& rep = median_run->cf_report;
  const double ind = rep.pearson_individual.value_or(NAN), l1 = rep.pearson_l1d.value_or(NAN),
               l7 = rep.pearson_l7d.value_or(NAN);
  const bool ordering = ind <= l1 && l1 <= l7;
  return {mcf >= mlstm + 0.03 && mcf >= mmlp && ordering,
          "median individual Pearson cf " + fmt(mcf) + ", lstm " + fmt(mlstm) + ", mlp " + fmt(mmlp) +
              "; cf median run individual/L1d/L7d " + fmt(ind) + " / " + fmt(l1) + " / " + fmt(l7)};
}

// ---- 6 -------------------------------------------------------------------

Outcome binning() {
  const bool ok = classify(4.5, ClassScheme::FiveClass) == 5 && classify(3.4, ClassScheme::FiveClass) == 3 &&
                  classify(2.999, ClassScheme::Binary) == 0 && classify(3.0, ClassScheme::Binary) == 1;
  return {ok, "4.5->" + std::to_string(classify(4.5, ClassScheme::FiveClass)) + ", 3.4->" +
                  std::to_string(classify(3.4, ClassScheme::FiveClass)) + ", 2.999->" +
                  std::to_string(classify(2.999, ClassScheme::Binary)) + ", 3.0->" +
                  std::to_string(classify(3.0, ClassScheme::Binary))};
}

// ---- 7 -------------------------------------------------------------------

Outcome augmentation_law() {
  nn::Rng rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const TreatmentPolicy policy;
  std::size_t count_mismatch = 0, slice_mismatch = 0, total = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 3 + rng() % 18;
    const Dialogue d = testing::random_dialogue(rng, "a" + std::to_string(i), n, u(rng) * 0.5, 1.0 + 4.0 * u(rng));
    std::size_t want = 0;
    for (std::size_t m = 0; m < n; ++m) want += d.turns[m].odes != OdesCategory::Other && m + 1 >= 3;
    const auto out = augment_by_masking(d, policy);
    count_mismatch += out.size() != want;
    total += out.size();
    for (const auto& a : out) {
      for (std::size_t t = 0; t < a.turns.size(); ++t) {
        const auto& x = a.turns[t].features;
        const auto& y = d.turns[t].features;
        if (a.turns[t].odes != d.turns[t].odes || x.size() != y.size() ||
            std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0)
          ++slice_mismatch;
      }
    }
  }
  return {count_mismatch == 0 && slice_mismatch == 0,
          std::to_string(total) + " prefixes; count mismatches " + std::to_string(count_mismatch) +
              ", slice mismatches " + std::to_string(slice_mismatch)};
}

// ---- 8 -------------------------------------------------------------------

Outcome loss_reduction() {
  nn::Rng rng(88);
  double worst = 0.0;
  for (int b = 0; b < 100; ++b) {
    TrainConfig cfg;
    cfg.hidden_size = 2 + static_cast<int>(rng() % 8);
    cfg.head_layers = {2 + static_cast<int>(rng() % 6)};
    cfg.lstm_layers = 1 + static_cast<int>(rng() % 2);
    cfg.pooling = rng() % 2 ? Pooling::Final : Pooling::Mean;
    const auto dim = static_cast<Eigen::Index>(1 + rng() % 30);
    const auto cf = init_cf_lstm(dim, 1, cfg, rng);
    BaselineLstmModel base;
    base.encoder = cf.encoder;
    base.head = cf.heads[0];
    base.config = cfg;
    const auto batch = random_batch(rng, std::vector<int>(1 + rng() % 32, 0), dim);
    const double a = cf_lstm_loss(cf, batch, {0.0, 10, rng()}).total;
    const double c = baseline_lstm_loss(base, batch).total;
    worst = std::max(worst, std::abs(a - c));
  }
  return {worst <= 1e-12, "100 batches, max |difference| " + fmt(worst, 3)};
}

// ---- 9 -------------------------------------------------------------------

Outcome determinism() {
  struct Files {
    std::string data, truth, model, report;
    int codes = 0;
  };
  auto pipeline = [](const testing::TempDir& dir) {
    Files f;
    std::ostringstream out, err;
    const std::string data = (dir / "d.jsonl").string(), model = (dir / "m.json").string();
    f.codes += cli::run({"synth", "--out", data, "--n", "400", "--seed", "11"}, out, err);
    f.codes += cli::run({"train", "--model", "cf-lstm", "--data", data, "--out", model, "--seed", "5", "--epochs", "5"},
                        out, err);
    std::ostringstream report;
    f.codes += cli::run({"evaluate", "--model", model, "--data", data}, report, err);
    f.data = testing::read_file(data);
    f.truth = testing::read_file(dir / "d.truth.json");
    f.model = testing::read_file(model);
    f.report = report.str();
    return f;
  };
  const testing::TempDir a("accept-a"), b("accept-b");
  const Files x = pipeline(a), y = pipeline(b);
  const bool ok = x.codes == 0 && y.codes == 0 && !x.model.empty() && x.data == y.data && x.truth == y.truth &&
                  x.model == y.model && x.report == y.report;
  return {ok, std::string("dataset ") + (x.data == y.data ? "same" : "differs") + ", checkpoint " +
                  (x.model == y.model ? "same" : "differs") + ", report " + (x.report == y.report ? "same" : "differs") +
                  ", exit codes " + std::to_string(x.codes + y.codes)};
}

// ---- 10 ------------------------------------------------------------------

Outcome separable_classification() {
  synth::SynthConfig sc;
  sc.n_dialogues = 5000;
  sc.sigma = 0.0;
  sc.seed = 1;
  const auto train = synth::generate(sc);
  auto tc = sc;
  tc.n_dialogues = 2000;
  tc.seed = 1001;
  tc.id_prefix = "test";
  const auto test = synth::generate(tc);
  TrainConfig cfg;
  cfg.seed = 1;
  const auto r = evaluate(train_cf_lstm(train.dataset, synth::synth_policy(2), cfg), test.dataset);
  return {r.accuracy_binary >= 0.95 && r.accuracy_5class >= 0.85,
          "held-out binary " + fmt(r.accuracy_binary) + ", 5-class " + fmt(r.accuracy_5class)};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"gradient fidelity", gradient_fidelity},
      {"optimal transport correctness", ot_correctness},
      {"ATE recovery", ate_recovery},
      {"model ordering", model_ordering},
      {"inverted-treatment trend", inverted_trend},
      {"binning exactness", binning},
      {"augmentation law", augmentation_law},
      {"loss reduction", loss_reduction},
      {"determinism", determinism},
      {"classification on separable data", separable_classification},
  };
  int failures = 0;
  int index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << index << ". " << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
