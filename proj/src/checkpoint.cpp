#include "cfrate/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace cfrate {

namespace {

using nlohmann::json;
using nn::Matrix;

json matrix_to_json(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const json& j) {
  const auto& shape = j.at("shape");
  if (!shape.is_array() || shape.size() != 2) throw ValidationError("checkpoint: array shape must have two extents");
  const auto rows = shape[0].get<Eigen::Index>();
  const auto cols = shape[1].get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw ValidationError("checkpoint: array data length does not match its shape");
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
  return m;
}

std::string_view activation_name(nn::Activation a) {
  switch (a) {
    case nn::Activation::Linear: return "linear";
    case nn::Activation::Relu: return "relu";
    case nn::Activation::Tanh: return "tanh";
    case nn::Activation::Sigmoid: return "sigmoid";
  }
  return "linear";
}

nn::Activation activation_from(const std::string& s) {
  if (s == "linear") return nn::Activation::Linear;
  if (s == "relu") return nn::Activation::Relu;
  if (s == "tanh") return nn::Activation::Tanh;
  if (s == "sigmoid") return nn::Activation::Sigmoid;
  throw ValidationError("checkpoint: unknown activation '" + s + "'");
}

json lstm_to_json(const nn::LstmParams& p) {
  return {{"w_input", matrix_to_json(p.w_input)},
          {"w_hidden", matrix_to_json(p.w_hidden)},
          {"bias", matrix_to_json(p.bias)}};
}

nn::LstmParams lstm_from_json(const json& j) {
  nn::LstmParams p;
  p.w_input = matrix_from_json(j.at("w_input"));
  p.w_hidden = matrix_from_json(j.at("w_hidden"));
  p.bias = matrix_from_json(j.at("bias"));
  nn::check_lstm(p);
  return p;
}

json mlp_to_json(const nn::MlpParams& p) {
  json layers = json::array();
  for (const auto& l : p.layers) {
    layers.push_back({{"weight", matrix_to_json(l.weight)},
                      {"bias", matrix_to_json(l.bias)},
                      {"activation", activation_name(l.activation)}});
  }
  return layers;
}

nn::MlpParams mlp_from_json(const json& j) {
  nn::MlpParams p;
  for (const auto& l : j) {
    nn::DenseLayer layer;
    layer.weight = matrix_from_json(l.at("weight"));
    layer.bias = matrix_from_json(l.at("bias"));
    layer.activation = activation_from(l.at("activation").get<std::string>());
    p.layers.push_back(std::move(layer));
  }
  nn::check_mlp(p);
  return p;
}

json encoder_to_json(const std::vector<nn::LstmParams>& enc) {
  json out = json::array();
  for (const auto& l : enc) out.push_back(lstm_to_json(l));
  return out;
}

std::vector<nn::LstmParams> encoder_from_json(const json& j) {
  std::vector<nn::LstmParams> out;
  for (const auto& l : j) out.push_back(lstm_from_json(l));
  if (out.empty()) throw ValidationError("checkpoint: encoder has no layers");
  return out;
}

json norm_to_json(const NormStats& n) { return {{"mean", n.mean}, {"std", n.std}}; }

NormStats norm_from_json(const json& j) {
  NormStats n{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
  if (n.mean.size() != n.std.size()) throw ValidationError("checkpoint: norm stats mean/std lengths differ");
  return n;
}

json record_to_json(const TrainRecord& r) {
  json m1 = json::array();
  json m2 = json::array();
  for (const auto& m : r.optimizer.first_moment) m1.push_back(matrix_to_json(m));
  for (const auto& m : r.optimizer.second_moment) m2.push_back(matrix_to_json(m));
  return {{"train_loss", r.train_loss},
          {"val_loss", r.val_loss},
          {"best_epoch", r.best_epoch},
          {"optimizer", {{"step", r.optimizer.step}, {"first_moment", m1}, {"second_moment", m2}}},
          {"rng_state", r.rng_state}};
}

TrainRecord record_from_json(const json& j) {
  TrainRecord r;
  r.train_loss = j.at("train_loss").get<std::vector<double>>();
  r.val_loss = j.at("val_loss").get<std::vector<double>>();
  r.best_epoch = j.at("best_epoch").get<int>();
  const auto& opt = j.at("optimizer");
  r.optimizer.step = opt.at("step").get<std::int64_t>();
  for (const auto& m : opt.at("first_moment")) r.optimizer.first_moment.push_back(matrix_from_json(m));
  for (const auto& m : opt.at("second_moment")) r.optimizer.second_moment.push_back(matrix_from_json(m));
  r.rng_state = j.at("rng_state").get<std::string>();
  return r;
}

json body(const BaselineMlpModel& m) {
  return {{"regressor", mlp_to_json(m.regressor)}};
}

json body(const BaselineLstmModel& m) {
  return {{"encoder", encoder_to_json(m.encoder)}, {"head", mlp_to_json(m.head)}};
}

json body(const CfLstmModel& m) {
  json heads = json::array();
  for (const auto& h : m.heads) heads.push_back(mlp_to_json(h));
  return {{"encoder", encoder_to_json(m.encoder)},
          {"heads", heads},
          {"num_arms", m.num_arms()},
          {"ipm_weight", m.config.ipm_weight},
          {"policy", json::parse(m.policy.to_json())}};
}

template <class M>
void check_optimizer_shapes(const M& m) {
  const auto p = m.params();
  const auto& opt = m.record.optimizer;
  if (opt.first_moment.empty() && opt.second_moment.empty()) return;
  if (opt.first_moment.size() != p.size() || opt.second_moment.size() != p.size()) {
    throw ValidationError("checkpoint: optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (opt.first_moment[i].rows() != p.values[i].rows() || opt.first_moment[i].cols() != p.values[i].cols() ||
        opt.second_moment[i].rows() != p.values[i].rows() || opt.second_moment[i].cols() != p.values[i].cols()) {
      throw ValidationError("checkpoint: optimizer moment shape mismatch for " + p.names[i]);
    }
  }
}

}  // namespace

json to_json(const TrainConfig& c) {
  return {{"hidden_size", c.hidden_size},
          {"lstm_layers", c.lstm_layers},
          {"head_layers", c.head_layers},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"ipm_weight", c.ipm_weight},
          {"n_proj", c.n_proj},
          {"seed", c.seed},
          {"patience", c.patience},
          {"validation_fraction", c.validation_fraction},
          {"pooling", c.pooling == Pooling::Final ? "final" : "mean"},
          {"include_counts", c.include_counts}};
}

void apply_json(TrainConfig& c, const json& j) {
  if (!j.is_object()) throw ValidationError("training config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& v = it.value();
      if (k == "hidden_size") c.hidden_size = v.get<int>();
      else if (k == "lstm_layers") c.lstm_layers = v.get<int>();
      else if (k == "head_layers") c.head_layers = v.get<std::vector<int>>();
      else if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "epochs") c.epochs = v.get<int>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "ipm_weight") c.ipm_weight = v.get<double>();
      else if (k == "n_proj") c.n_proj = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "patience") c.patience = v.get<int>();
      else if (k == "validation_fraction") c.validation_fraction = v.get<double>();
      else if (k == "include_counts") c.include_counts = v.get<bool>();
      else if (k == "pooling") {
        const auto s = v.get<std::string>();
        if (s == "final") c.pooling = Pooling::Final;
        else if (s == "mean") c.pooling = Pooling::Mean;
        else throw ValidationError("pooling must be 'final' or 'mean', got '" + s + "'");
      } else {
        throw ValidationError("unknown training config key '" + k + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("training config: ") + e.what());
  }
}

std::string serialize_checkpoint(const AnyModel& model) {
  json j;
  j["format"] = kCheckpointFormat;
  j["kind"] = model_kind(model);
  std::visit(
      [&j](const auto& m) {
        j["config"] = to_json(m.config);
        j["norm"] = norm_to_json(m.norm);
        j["record"] = record_to_json(m.record);
        j["model"] = body(m);
      },
      model);
  return j.dump(1) + "\n";
}

AnyModel parse_checkpoint(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
  try {
    if (!j.is_object() || !j.contains("format")) throw ValidationError("checkpoint has no format tag");
    const auto format = j.at("format").get<std::string>();
    if (format != kCheckpointFormat) {
      throw ValidationError("unsupported checkpoint format '" + format + "' (expected '" +
                            std::string(kCheckpointFormat) + "')");
    }
    TrainConfig cfg;
    apply_json(cfg, j.at("config"));
    const NormStats norm = norm_from_json(j.at("norm"));
    TrainRecord record = record_from_json(j.at("record"));
    const auto& body = j.at("model");
    const auto kind = j.at("kind").get<std::string>();

    auto check_dim = [&norm](Eigen::Index d) {
      if (static_cast<std::size_t>(d) != norm.dim()) {
        throw ValidationError("checkpoint: input dimension " + std::to_string(d) + " differs from norm stats " +
                              std::to_string(norm.dim()));
      }
    };

    if (kind == "mlp") {
      BaselineMlpModel m{mlp_from_json(body.at("regressor")), norm, cfg, std::move(record)};
      check_optimizer_shapes(m);
      return m;
    }
    if (kind == "lstm") {
      BaselineLstmModel m{encoder_from_json(body.at("encoder")), mlp_from_json(body.at("head")), norm, cfg,
                          std::move(record)};
      check_dim(m.input_dim());
      check_optimizer_shapes(m);
      return m;
    }
    if (kind == "cf-lstm") {
      CfLstmModel m;
      m.encoder = encoder_from_json(body.at("encoder"));
      for (const auto& h : body.at("heads")) m.heads.push_back(mlp_from_json(h));
      if (body.at("num_arms").get<int>() != m.num_arms()) throw ValidationError("checkpoint: head count mismatch");
      m.norm = norm;
      m.config = cfg;
      m.config.ipm_weight = body.at("ipm_weight").get<double>();
      m.policy = TreatmentPolicy::from_json(body.at("policy").dump());
      m.record = std::move(record);
      check_dim(m.input_dim());
      check_optimizer_shapes(m);
      return m;
    }
    throw ValidationError("unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const AnyModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint file '" + path.string() + "'");
  out << serialize_checkpoint(model);
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

AnyModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace cfrate
