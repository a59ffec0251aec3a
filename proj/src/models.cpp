#include "cfrate/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace cfrate {

namespace {

using nn::Matrix;
using nn::ParamPack;
using nn::Tape;
using nn::Var;
using BatchView = std::span<const Example* const>;

std::vector<Eigen::Index> head_sizes(Eigen::Index in, const std::vector<int>& hidden) {
  std::vector<Eigen::Index> sizes{in};
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(1);
  return sizes;
}

std::vector<nn::LstmParams> init_encoder(Eigen::Index input_dim, const TrainConfig& cfg, nn::Rng& rng) {
  std::vector<nn::LstmParams> enc;
  Eigen::Index in = input_dim;
  for (int l = 0; l < cfg.lstm_layers; ++l) {
    enc.push_back(nn::init_lstm(in, cfg.hidden_size, rng));
    in = cfg.hidden_size;
  }
  return enc;
}

void set_output_bias(nn::MlpParams& head, double value) { head.layers.back().bias(0) = value; }

double mean_rating(const std::vector<Example>& xs) {
  if (xs.empty()) return 0.5 * (kMinRating + kMaxRating);
  double s = 0.0;
  for (const auto& x : xs) s += x.rating;
  return s / static_cast<double>(xs.size());
}

std::string rng_state(const nn::Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

// --- tape helpers -----------------------------------------------------------

Var encode_on_tape(Tape& tape, const std::vector<nn::LstmVars>& enc, Pooling pooling, const Matrix& inputs) {
  Var x = tape.constant(inputs);
  for (const auto& layer : enc) x = nn::lstm_apply(tape, layer, x);
  return pooling == Pooling::Final ? tape.column(x, tape.value(x).cols() - 1) : tape.mean_columns(x);
}

std::vector<nn::LstmVars> bind_encoder(Tape& tape, const std::vector<nn::LstmParams>& enc) {
  std::vector<nn::LstmVars> v;
  for (const auto& layer : enc) v.push_back(nn::bind(tape, layer));
  return v;
}

void append_encoder(ParamPack& pack, const std::vector<nn::LstmParams>& enc) {
  for (std::size_t l = 0; l < enc.size(); ++l) nn::append(pack, "encoder.lstm" + std::to_string(l), enc[l]);
}

void append_encoder_grads(ParamPack& pack, const Tape& tape, const std::vector<nn::LstmVars>& vars) {
  for (std::size_t l = 0; l < vars.size(); ++l) {
    nn::append(pack, "encoder.lstm" + std::to_string(l), nn::gradients(tape, vars[l]));
  }
}

struct CfTapeLoss {
  Var total;
  double mse = 0.0;
  double ipm = 0.0;
};

CfTapeLoss cf_loss_on_tape(Tape& tape, const std::vector<nn::LstmVars>& enc, const std::vector<nn::MlpVars>& heads,
                           Pooling pooling, BatchView batch, const LossOptions& opts) {
  if (batch.empty()) throw ValidationError("cf_lstm_loss: empty batch");
  const std::size_t k = heads.size();
  std::vector<std::vector<Var>> errors(k);
  std::vector<std::vector<Var>> phis(k);
  for (const Example* ex : batch) {
    if (ex->arm < 0 || static_cast<std::size_t>(ex->arm) >= k) {
      throw ValidationError("cf_lstm_loss: treatment " + std::to_string(ex->arm) + " has no head (K=" +
                            std::to_string(k) + ")");
    }
    const auto a = static_cast<std::size_t>(ex->arm);
    Var phi = encode_on_tape(tape, enc, pooling, ex->inputs);
    Var pred = nn::mlp_apply(tape, heads[a], phi);
    errors[a].push_back(tape.squared_error(pred, ex->rating));
    phis[a].push_back(phi);
  }
  CfTapeLoss out;
  std::vector<Var> terms;
  for (std::size_t a = 0; a < k; ++a) {
    if (errors[a].empty()) continue;
    Var arm_mse = tape.scale(tape.add_n(errors[a]), 1.0 / static_cast<double>(errors[a].size()));
    out.mse += tape.scalar(arm_mse);
    terms.push_back(arm_mse);
  }
  if (opts.ipm_weight != 0.0) {
    for (std::size_t a = 1; a < k; ++a) {
      ipm::IpmConfig icfg{opts.n_proj, nn::derive_seed(opts.projection_seed, a)};
      if (auto w = ipm::ipm_term(tape, phis[0], phis[a], icfg)) {
        out.ipm += tape.scalar(*w);
        terms.push_back(tape.scale(*w, opts.ipm_weight));
      }
    }
  }
  out.total = tape.add_n(terms);
  return out;
}

double cf_loss_and_grad(const CfLstmModel& m, BatchView batch, const LossOptions& opts, ParamPack* grads,
                        double* mse_out = nullptr, double* ipm_out = nullptr) {
  Tape tape;
  auto enc = bind_encoder(tape, m.encoder);
  std::vector<nn::MlpVars> heads;
  for (const auto& h : m.heads) heads.push_back(nn::bind(tape, h));
  CfTapeLoss loss = cf_loss_on_tape(tape, enc, heads, m.config.pooling, batch, opts);
  if (mse_out) *mse_out = loss.mse;
  if (ipm_out) *ipm_out = loss.ipm;
  if (grads) {
    tape.backward(loss.total);
    *grads = ParamPack{};
    append_encoder_grads(*grads, tape, enc);
    for (std::size_t a = 0; a < heads.size(); ++a) {
      nn::append(*grads, "head" + std::to_string(a), nn::gradients(tape, heads[a], m.heads[a]));
    }
  }
  return tape.scalar(loss.total);
}

double baseline_lstm_loss_and_grad(const BaselineLstmModel& m, BatchView batch, ParamPack* grads) {
  if (batch.empty()) throw ValidationError("baseline loss: empty batch");
  Tape tape;
  auto enc = bind_encoder(tape, m.encoder);
  auto head = nn::bind(tape, m.head);
  std::vector<Var> errors;
  for (const Example* ex : batch) {
    Var phi = encode_on_tape(tape, enc, m.config.pooling, ex->inputs);
    errors.push_back(tape.squared_error(nn::mlp_apply(tape, head, phi), ex->rating));
  }
  Var loss = tape.scale(tape.add_n(errors), 1.0 / static_cast<double>(errors.size()));
  if (grads) {
    tape.backward(loss);
    *grads = ParamPack{};
    append_encoder_grads(*grads, tape, enc);
    nn::append(*grads, "head", nn::gradients(tape, head, m.head));
  }
  return tape.scalar(loss);
}

double baseline_mlp_loss_and_grad(const BaselineMlpModel& m, BatchView batch, ParamPack* grads) {
  if (batch.empty()) throw ValidationError("baseline loss: empty batch");
  Tape tape;
  auto reg = nn::bind(tape, m.regressor);
  std::vector<Var> errors;
  for (const Example* ex : batch) {
    errors.push_back(tape.squared_error(nn::mlp_apply(tape, reg, tape.constant(ex->inputs)), ex->rating));
  }
  Var loss = tape.scale(tape.add_n(errors), 1.0 / static_cast<double>(errors.size()));
  if (grads) {
    tape.backward(loss);
    *grads = ParamPack{};
    nn::append(*grads, "regressor", nn::gradients(tape, reg, m.regressor));
  }
  return tape.scalar(loss);
}

// --- training loop ------------------------------------------------------------

using LossFn = std::function<double(const ParamPack&, BatchView, std::uint64_t projection_seed, ParamPack* grads)>;
using ValFn = std::function<double(const ParamPack&, BatchView)>;

struct LoopResult {
  ParamPack params;
  TrainRecord record;
};

LoopResult train_loop(ParamPack params, const std::vector<Example>& examples, const TrainConfig& cfg, int epochs,
                      nn::Rng& rng, const LossFn& loss_fn, const ValFn& val_fn,
                      const std::vector<bool>* trainable = nullptr) {
  const std::size_t n = examples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = 0;
  std::vector<const Example*> val;
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_val) {
      val.push_back(&examples[order[i]]);
    } else {
      train_idx.push_back(order[i]);
    }
  }
  // Restore a canonical order so the per-epoch shuffles alone define batch membership.
  std::sort(train_idx.begin(), train_idx.end());

  LoopResult out;
  out.record.optimizer = nn::adam_init(params);
  ParamPack best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  std::vector<const Example*> batch;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(start + batch_size, train_idx.size()); ++i) {
        batch.push_back(&examples[train_idx[i]]);
      }
      ParamPack grads;
      const std::uint64_t pseed = nn::derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1, n_batches);
      loss_sum += loss_fn(params, batch, pseed, &grads);
      grads.names = params.names;
      auto step = nn::optimizer_step(params, grads, out.record.optimizer, cfg.learning_rate, {}, trainable);
      params = std::move(step.params);
      out.record.optimizer = std::move(step.state);
      ++n_batches;
    }
    out.record.train_loss.push_back(n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0);

    if (!val.empty()) {
      const double v = val_fn(params, val);
      out.record.val_loss.push_back(v);
      if (v < best_val) {
        best_val = v;
        best = params;
        out.record.best_epoch = epoch;
        bad_epochs = 0;
      } else if (++bad_epochs >= cfg.patience) {
        break;
      }
    } else {
      out.record.best_epoch = epoch;
    }
  }
  out.params = val.empty() ? std::move(params) : std::move(best);
  out.record.rng_state = rng_state(rng);
  return out;
}

std::vector<const Example*> pointers(std::span<const Example> xs) {
  std::vector<const Example*> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(&x);
  return out;
}

nn::Vector encoder_forward(const std::vector<nn::LstmParams>& encoder, Pooling pooling, const Matrix& inputs) {
  Matrix seq = inputs.transpose();  // n x D
  Matrix hidden;
  for (const auto& layer : encoder) {
    hidden = nn::lstm_forward(seq, layer).hidden;  // H x n
    seq = hidden.transpose();
  }
  if (pooling == Pooling::Final) return hidden.col(hidden.cols() - 1);
  return hidden.rowwise().mean();
}

double factual_mse_cf(const CfLstmModel& m, BatchView xs) {
  double s = 0.0;
  for (const Example* ex : xs) {
    const nn::Vector phi = encoder_forward(m.encoder, m.config.pooling, ex->inputs);
    const double r = nn::mlp_forward(phi, m.heads.at(static_cast<std::size_t>(ex->arm)))(0) - ex->rating;
    s += r * r;
  }
  return s / static_cast<double>(xs.size());
}

std::vector<Example> make_aggregate_examples(const Dataset& ds, const NormStats& norm, bool include_counts) {
  std::vector<Example> out;
  for (const auto& d : ds.dialogues) {
    if (!d.rating) continue;
    Dialogue z = d;
    for (auto& t : z.turns) t.features = zscore_vector(t.features, norm);
    const auto agg = aggregate_dialogue_features(z, {include_counts});
    Example ex;
    ex.inputs = Eigen::Map<const nn::Vector>(agg.data(), static_cast<Eigen::Index>(agg.size()));
    ex.rating = *d.rating;
    out.push_back(std::move(ex));
  }
  return out;
}

nn::Vector aggregate_input(const BaselineMlpModel& m, const Dialogue& d) {
  Dialogue z = d;
  for (auto& t : z.turns) t.features = zscore_vector(t.features, m.norm);
  const auto agg = aggregate_dialogue_features(z, {m.config.include_counts});
  return Eigen::Map<const nn::Vector>(agg.data(), static_cast<Eigen::Index>(agg.size()));
}

void check_input_dim(Eigen::Index model_dim, const Dialogue& d) {
  if (static_cast<std::size_t>(model_dim) != d.feature_dim()) {
    throw ShapeError("model expects input dimension " + std::to_string(model_dim) + " but dialogue '" + d.id +
                     "' has dimension " + std::to_string(d.feature_dim()));
  }
}

}  // namespace

// -----------------------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("invalid training config: " + what); };
  if (hidden_size < 1) fail("hidden_size must be positive");
  if (lstm_layers < 1) fail("lstm_layers must be positive");
  for (int h : head_layers) {
    if (h < 1) fail("head layer widths must be positive");
  }
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (epochs < 1) fail("epochs must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(ipm_weight >= 0.0)) fail("ipm_weight must be >= 0");
  if (n_proj < 1) fail("n_proj must be positive");
  if (patience < 1) fail("patience must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) fail("validation_fraction must lie in [0,1)");
}

nn::Matrix normalized_inputs(const Dialogue& d, const NormStats& norm) {
  const auto n = static_cast<Eigen::Index>(d.turns.size());
  const auto dim = static_cast<Eigen::Index>(norm.dim());
  if (n == 0) throw ValidationError("dialogue '" + d.id + "' has no turns");
  check_input_dim(dim, d);
  nn::Matrix x(dim, n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto& f = d.turns[static_cast<std::size_t>(t)].features;
    for (Eigen::Index k = 0; k < dim; ++k) {
      x(k, t) = (f[static_cast<std::size_t>(k)] - norm.mean[static_cast<std::size_t>(k)]) /
                norm.std[static_cast<std::size_t>(k)];
    }
  }
  return x;
}

std::vector<Example> make_examples(const Dataset& ds, const TreatmentPolicy& policy, const NormStats& norm) {
  std::vector<Example> out;
  out.reserve(ds.size());
  for (const auto& d : ds.dialogues) {
    if (!d.rating) throw ValidationError("dialogue '" + d.id + "' has no rating");
    out.push_back(Example{normalized_inputs(d, norm), effective_treatment(d, policy).value, *d.rating});
  }
  return out;
}

nn::ParamPack CfLstmModel::params() const {
  ParamPack p;
  append_encoder(p, encoder);
  for (std::size_t a = 0; a < heads.size(); ++a) nn::append(p, "head" + std::to_string(a), heads[a]);
  return p;
}

void CfLstmModel::set_params(const nn::ParamPack& p) {
  std::size_t pos = 0;
  for (auto& layer : encoder) layer = nn::take_lstm(p, pos);
  for (auto& h : heads) h = nn::take_mlp(p, pos, h);
  if (pos != p.size()) throw ShapeError("parameter pack has extra entries for this CF-LSTM");
}

nn::ParamPack BaselineLstmModel::params() const {
  ParamPack p;
  append_encoder(p, encoder);
  nn::append(p, "head", head);
  return p;
}

void BaselineLstmModel::set_params(const nn::ParamPack& p) {
  std::size_t pos = 0;
  for (auto& layer : encoder) layer = nn::take_lstm(p, pos);
  head = nn::take_mlp(p, pos, head);
  if (pos != p.size()) throw ShapeError("parameter pack has extra entries for this LSTM");
}

nn::ParamPack BaselineMlpModel::params() const {
  ParamPack p;
  nn::append(p, "regressor", regressor);
  return p;
}

void BaselineMlpModel::set_params(const nn::ParamPack& p) {
  std::size_t pos = 0;
  regressor = nn::take_mlp(p, pos, regressor);
  if (pos != p.size()) throw ShapeError("parameter pack has extra entries for this MLP");
}

std::string model_kind(const AnyModel& m) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, BaselineMlpModel>) return "mlp";
        if constexpr (std::is_same_v<T, BaselineLstmModel>) return "lstm";
        return "cf-lstm";
      },
      m);
}

Eigen::Index model_input_dim(const AnyModel& m) {
  return std::visit([](const auto& x) { return x.input_dim(); }, m);
}

CfLstmModel init_cf_lstm(Eigen::Index input_dim, int num_arms, const TrainConfig& cfg, nn::Rng& rng) {
  if (num_arms < 1) throw ValidationError("CF-LSTM needs at least one head");
  CfLstmModel m;
  m.config = cfg;
  m.encoder = init_encoder(input_dim, cfg, rng);
  const auto sizes = head_sizes(cfg.hidden_size, cfg.head_layers);
  for (int a = 0; a < num_arms; ++a) m.heads.push_back(nn::init_mlp(sizes, nn::Activation::Relu, rng));
  m.norm = NormStats{std::vector<double>(static_cast<std::size_t>(input_dim), 0.0),
                     std::vector<double>(static_cast<std::size_t>(input_dim), 1.0)};
  return m;
}

nn::Vector encode(const std::vector<nn::LstmParams>& encoder, Pooling pooling, const nn::Matrix& inputs) {
  return encoder_forward(encoder, pooling, inputs);
}

nn::Vector encode(const CfLstmModel& m, const Dialogue& d) {
  return encoder_forward(m.encoder, m.config.pooling, normalized_inputs(d, m.norm));
}

LossBreakdown cf_lstm_loss(const CfLstmModel& m, std::span<const Example> batch, const LossOptions& opts) {
  LossBreakdown out;
  const auto ptrs = pointers(batch);
  out.total = cf_loss_and_grad(m, ptrs, opts, &out.grads, &out.mse, &out.ipm);
  out.grads.names = m.params().names;
  return out;
}

LossBreakdown baseline_lstm_loss(const BaselineLstmModel& m, std::span<const Example> batch) {
  LossBreakdown out;
  const auto ptrs = pointers(batch);
  out.total = baseline_lstm_loss_and_grad(m, ptrs, &out.grads);
  out.mse = out.total;
  return out;
}

double clamp_rating(double r) { return std::clamp(r, kMinRating, kMaxRating); }

Prediction predict(const CfLstmModel& m, const Dialogue& d, Treatment arm) {
  if (arm.value < 0 || arm.value >= m.num_arms()) {
    throw ValidationError("arm " + std::to_string(arm.value) + " out of range for a model with " +
                          std::to_string(m.num_arms()) + " heads");
  }
  const nn::Vector phi = encode(m, d);
  const double raw = nn::mlp_forward(phi, m.heads[static_cast<std::size_t>(arm.value)])(0);
  return {raw, clamp_rating(raw)};
}

Prediction predict(const BaselineLstmModel& m, const Dialogue& d) {
  const nn::Vector phi = encoder_forward(m.encoder, m.config.pooling, normalized_inputs(d, m.norm));
  const double raw = nn::mlp_forward(phi, m.head)(0);
  return {raw, clamp_rating(raw)};
}

Prediction predict(const BaselineMlpModel& m, const Dialogue& d) {
  check_input_dim(m.input_dim(), d);
  const double raw = nn::mlp_forward(aggregate_input(m, d), m.regressor)(0);
  return {raw, clamp_rating(raw)};
}

Prediction predict_factual(const AnyModel& m, const Dialogue& d) {
  return std::visit(
      [&d](const auto& x) -> Prediction {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, CfLstmModel>) {
          return predict(x, d, effective_treatment(d, x.policy));
        } else {
          return predict(x, d);
        }
      },
      m);
}

CfLstmModel train_cf_lstm(const Dataset& train, const TreatmentPolicy& policy, const TrainConfig& cfg) {
  cfg.validate();
  const Dataset rated = rated_only(train);
  if (rated.empty()) throw ValidationError("train_cf_lstm: no rated dialogues");
  const int k = std::max(2, policy.num_arms());

  nn::Rng rng(nn::derive_seed(cfg.seed, 0xcf));
  CfLstmModel m = init_cf_lstm(static_cast<Eigen::Index>(rated.dialogues.front().feature_dim()), k, cfg, rng);
  m.policy = policy;
  m.norm = zscore_fit(train);
  const auto examples = make_examples(rated, policy, m.norm);
  for (const auto& ex : examples) {
    if (ex.arm >= k) throw ValidationError("train_cf_lstm: treatment " + std::to_string(ex.arm) + " exceeds policy arms");
  }
  const double mu = mean_rating(examples);
  for (auto& h : m.heads) set_output_bias(h, mu);

  const LossOptions base{cfg.ipm_weight, cfg.n_proj, 0};
  CfLstmModel scratch = m;
  auto loss_fn = [&](const ParamPack& p, BatchView batch, std::uint64_t pseed, ParamPack* grads) {
    scratch.set_params(p);
    LossOptions o = base;
    o.projection_seed = pseed;
    return cf_loss_and_grad(scratch, batch, o, grads);
  };
  auto val_fn = [&](const ParamPack& p, BatchView xs) {
    scratch.set_params(p);
    return factual_mse_cf(scratch, xs);
  };
  auto result = train_loop(m.params(), examples, cfg, cfg.epochs, rng, loss_fn, val_fn);
  m.set_params(result.params);
  m.record = std::move(result.record);
  return m;
}

BaselineLstmModel train_baseline_lstm(const Dataset& train, const TrainConfig& cfg) {
  cfg.validate();
  const Dataset rated = rated_only(train);
  if (rated.empty()) throw ValidationError("train_baseline_lstm: no rated dialogues");
  nn::Rng rng(nn::derive_seed(cfg.seed, 0x15));
  BaselineLstmModel m;
  m.config = cfg;
  m.encoder = init_encoder(static_cast<Eigen::Index>(rated.dialogues.front().feature_dim()), cfg, rng);
  m.head = nn::init_mlp(head_sizes(cfg.hidden_size, cfg.head_layers), nn::Activation::Relu, rng);
  m.norm = zscore_fit(train);
  const auto examples = make_examples(rated, TreatmentPolicy{}, m.norm);
  set_output_bias(m.head, mean_rating(examples));

  BaselineLstmModel scratch = m;
  auto loss_fn = [&](const ParamPack& p, BatchView batch, std::uint64_t, ParamPack* grads) {
    scratch.set_params(p);
    return baseline_lstm_loss_and_grad(scratch, batch, grads);
  };
  auto val_fn = [&](const ParamPack& p, BatchView xs) {
    scratch.set_params(p);
    return baseline_lstm_loss_and_grad(scratch, xs, nullptr);
  };
  auto result = train_loop(m.params(), examples, cfg, cfg.epochs, rng, loss_fn, val_fn);
  m.set_params(result.params);
  m.record = std::move(result.record);
  return m;
}

BaselineMlpModel train_baseline_mlp(const Dataset& train, const TrainConfig& cfg) {
  cfg.validate();
  const Dataset rated = rated_only(train);
  if (rated.empty()) throw ValidationError("train_baseline_mlp: no rated dialogues");
  nn::Rng rng(nn::derive_seed(cfg.seed, 0x31));
  BaselineMlpModel m;
  m.config = cfg;
  m.norm = zscore_fit(train);
  const auto examples = make_aggregate_examples(rated, m.norm, cfg.include_counts);
  std::vector<int> hidden{cfg.hidden_size};
  hidden.insert(hidden.end(), cfg.head_layers.begin(), cfg.head_layers.end());
  m.regressor = nn::init_mlp(head_sizes(examples.front().inputs.rows(), hidden), nn::Activation::Relu, rng);
  set_output_bias(m.regressor, mean_rating(examples));

  BaselineMlpModel scratch = m;
  auto loss_fn = [&](const ParamPack& p, BatchView batch, std::uint64_t, ParamPack* grads) {
    scratch.set_params(p);
    return baseline_mlp_loss_and_grad(scratch, batch, grads);
  };
  auto val_fn = [&](const ParamPack& p, BatchView xs) {
    scratch.set_params(p);
    return baseline_mlp_loss_and_grad(scratch, xs, nullptr);
  };
  auto result = train_loop(m.params(), examples, cfg, cfg.epochs, rng, loss_fn, val_fn);
  m.set_params(result.params);
  m.record = std::move(result.record);
  return m;
}

CfLstmModel extend_treatments(const CfLstmModel& model, int k_new, const Dataset& fresh, const TreatmentPolicy& policy,
                              const TrainConfig& cfg, ExtendPhases phases) {
  if (k_new < 0) throw ValidationError("extend_treatments: k_new must be >= 0");
  if (k_new == 0) return model;
  cfg.validate();
  const int k_old = model.num_arms();
  const int k_total = k_old + k_new;
  if (policy.num_arms() != k_total) {
    throw ValidationError("extend_treatments: policy defines " + std::to_string(policy.num_arms()) +
                          " arms, expected " + std::to_string(k_total));
  }
  const auto examples = make_examples(rated_only(fresh), policy, model.norm);
  std::vector<std::size_t> per_arm(static_cast<std::size_t>(k_total), 0);
  double new_arm_sum = 0.0;
  for (const auto& ex : examples) {
    ++per_arm[static_cast<std::size_t>(ex.arm)];
    if (ex.arm >= k_old) new_arm_sum += ex.rating;
  }
  std::size_t new_count = 0;
  for (int a = k_old; a < k_total; ++a) {
    if (per_arm[static_cast<std::size_t>(a)] == 0) {
      throw ValidationError("extend_treatments: fresh data has no rated dialogue in new arm " + std::to_string(a));
    }
    new_count += per_arm[static_cast<std::size_t>(a)];
  }

  nn::Rng rng(nn::derive_seed(cfg.seed, 0xe7, static_cast<std::uint64_t>(k_total)));
  CfLstmModel m = model;
  m.policy = policy;
  const auto sizes = head_sizes(model.config.hidden_size, model.config.head_layers);
  for (int a = 0; a < k_new; ++a) {
    m.heads.push_back(nn::init_mlp(sizes, nn::Activation::Relu, rng));
    set_output_bias(m.heads.back(), new_arm_sum / static_cast<double>(new_count));
  }

  TrainConfig run_cfg = cfg;
  run_cfg.hidden_size = model.config.hidden_size;
  run_cfg.lstm_layers = model.config.lstm_layers;
  run_cfg.head_layers = model.config.head_layers;
  run_cfg.pooling = model.config.pooling;

  const LossOptions base{run_cfg.ipm_weight, run_cfg.n_proj, 0};
  CfLstmModel scratch = m;
  auto loss_fn = [&](const ParamPack& p, BatchView batch, std::uint64_t pseed, ParamPack* grads) {
    scratch.set_params(p);
    LossOptions o = base;
    o.projection_seed = pseed;
    return cf_loss_and_grad(scratch, batch, o, grads);
  };
  auto val_fn = [&](const ParamPack& p, BatchView xs) {
    scratch.set_params(p);
    return factual_mse_cf(scratch, xs);
  };

  // Phase one: only the new heads move.
  const ParamPack start = m.params();
  std::vector<bool> trainable(start.size(), false);
  const std::size_t first_new = start.size() - static_cast<std::size_t>(k_new) * 2 * m.heads.back().layers.size();
  for (std::size_t i = first_new; i < start.size(); ++i) trainable[i] = true;
  auto phase1 = train_loop(start, examples, run_cfg, run_cfg.epochs, rng, loss_fn, val_fn, &trainable);
  m.set_params(phase1.params);
  m.record.train_loss.insert(m.record.train_loss.end(), phase1.record.train_loss.begin(), phase1.record.train_loss.end());
  m.record.val_loss.insert(m.record.val_loss.end(), phase1.record.val_loss.begin(), phase1.record.val_loss.end());
  m.record.optimizer = phase1.record.optimizer;
  m.record.rng_state = phase1.record.rng_state;
  if (phases == ExtendPhases::HeadsOnly) return m;

  auto phase2 = train_loop(m.params(), examples, run_cfg, run_cfg.epochs, rng, loss_fn, val_fn);
  m.set_params(phase2.params);
  m.record.train_loss.insert(m.record.train_loss.end(), phase2.record.train_loss.begin(), phase2.record.train_loss.end());
  m.record.val_loss.insert(m.record.val_loss.end(), phase2.record.val_loss.begin(), phase2.record.val_loss.end());
  m.record.optimizer = phase2.record.optimizer;
  m.record.rng_state = phase2.record.rng_state;
  return m;
}

int classify(double rating, ClassScheme scheme) {
  if (scheme == ClassScheme::Binary) return rating < 3.0 ? 0 : 1;
  const double r = std::floor(rating + 0.5);
  return static_cast<int>(std::clamp(r, kMinRating, kMaxRating));
}

}  // namespace cfrate
