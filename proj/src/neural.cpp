#include "cfrate/neural.hpp"

#include <cmath>
#include <cstring>
#include <memory>

namespace cfrate::nn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

namespace {

std::string shape_str(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

Matrix sigmoid_of(const Matrix& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

bool all_finite(const Matrix& m) { return m.allFinite(); }

// Forward cache of one LSTM run, shared between the value and its backward pass.
struct LstmCache {
  Matrix gates;    // 4H x n, post-activation [i, f, g, o]
  Matrix cells;    // H x n
  Matrix tanh_c;   // H x n
  Matrix hidden;   // H x n
};

LstmCache lstm_run(const Matrix& inputs, const Matrix& w_input, const Matrix& w_hidden, const Matrix& bias) {
  const Eigen::Index h = w_hidden.cols();
  const Eigen::Index n = inputs.cols();
  if (w_input.rows() != 4 * h || w_hidden.rows() != 4 * h || bias.rows() != 4 * h || bias.cols() != 1) {
    throw ShapeError("lstm: inconsistent gate shapes (w_input " + shape_str(w_input) + ", w_hidden " +
                     shape_str(w_hidden) + ", bias " + shape_str(bias) + ")");
  }
  if (w_input.cols() != inputs.rows()) {
    throw ShapeError("lstm: input dimension " + std::to_string(inputs.rows()) + " does not match parameters (" +
                     std::to_string(w_input.cols()) + ")");
  }
  if (n < 1) throw ShapeError("lstm: empty sequence");

  LstmCache c;
  c.gates.resize(4 * h, n);
  c.cells.resize(h, n);
  c.tanh_c.resize(h, n);
  c.hidden.resize(h, n);

  Matrix pre = w_input * inputs;
  pre.colwise() += bias.col(0);
  Vector h_prev = Vector::Zero(h);
  Vector c_prev = Vector::Zero(h);
  for (Eigen::Index t = 0; t < n; ++t) {
    Vector z = pre.col(t) + w_hidden * h_prev;
    auto gi = c.gates.col(t).segment(0, h);
    auto gf = c.gates.col(t).segment(h, h);
    auto gg = c.gates.col(t).segment(2 * h, h);
    auto go = c.gates.col(t).segment(3 * h, h);
    gi = (1.0 / (1.0 + (-z.segment(0, h).array()).exp())).matrix();
    gf = (1.0 / (1.0 + (-z.segment(h, h).array()).exp())).matrix();
    gg = z.segment(2 * h, h).array().tanh().matrix();
    go = (1.0 / (1.0 + (-z.segment(3 * h, h).array()).exp())).matrix();
    c.cells.col(t) = gf.cwiseProduct(c_prev) + gi.cwiseProduct(gg);
    c.tanh_c.col(t) = c.cells.col(t).array().tanh().matrix();
    c.hidden.col(t) = go.cwiseProduct(c.tanh_c.col(t));
    h_prev = c.hidden.col(t);
    c_prev = c.cells.col(t);
  }
  return c;
}

}  // namespace

bool bit_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

bool operator==(const LstmParams& a, const LstmParams& b) {
  return bit_equal(a.w_input, b.w_input) && bit_equal(a.w_hidden, b.w_hidden) && bit_equal(a.bias, b.bias);
}

bool operator==(const DenseLayer& a, const DenseLayer& b) {
  return a.activation == b.activation && bit_equal(a.weight, b.weight) && bit_equal(a.bias, b.bias);
}

bool operator==(const ParamPack& a, const ParamPack& b) {
  if (a.names != b.names || a.values.size() != b.values.size()) return false;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (!bit_equal(a.values[i], b.values[i])) return false;
  }
  return true;
}

bool operator==(const AdamState& a, const AdamState& b) {
  if (a.step != b.step || a.first_moment.size() != b.first_moment.size() ||
      a.second_moment.size() != b.second_moment.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.first_moment.size(); ++i) {
    if (!bit_equal(a.first_moment[i], b.first_moment[i]) || !bit_equal(a.second_moment[i], b.second_moment[i])) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&, std::size_t)> backprop) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, requires_grad ? std::move(backprop) : nullptr});
  return Var{static_cast<int>(nodes_.size() - 1)};
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Var Tape::parameter(Matrix value) { return push(std::move(value), true, [](Tape&, std::size_t) {}); }

Var Tape::constant(Matrix value) { return push(std::move(value), false); }

Var Tape::matmul(Var a, Var b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.cols() != vb.rows()) throw ShapeError("matmul: " + shape_str(va) + " * " + shape_str(vb));
  return push(va * vb, needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.needs(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  return push(value(a) + value(b), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  return push(value(a) - value(b), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    t.accumulate(a, g);
    if (t.needs(b)) t.accumulate(b, -g);
  });
}

Var Tape::hadamard(Var a, Var b) {
  require_same_shape(value(a), value(b), "hadamard");
  return push(value(a).cwiseProduct(value(b)), needs(a) || needs(b), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.needs(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.needs(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

Var Tape::scale(Var a, double s) {
  return push(value(a) * s, needs(a), [a, s](Tape& t, std::size_t self) { t.accumulate(a, t.nodes_[self].grad * s); });
}

Var Tape::sigmoid(Var a) {
  return push(sigmoid_of(value(a)), needs(a), [a](Tape& t, std::size_t self) {
    const Node& n = t.nodes_[self];
    t.accumulate(a, (n.grad.array() * n.value.array() * (1.0 - n.value.array())).matrix());
  });
}

Var Tape::tanh(Var a) {
  return push(value(a).array().tanh().matrix(), needs(a), [a](Tape& t, std::size_t self) {
    const Node& n = t.nodes_[self];
    t.accumulate(a, (n.grad.array() * (1.0 - n.value.array().square())).matrix());
  });
}

Var Tape::relu(Var a) {
  return push(value(a).cwiseMax(0.0), needs(a), [a](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    t.accumulate(a, (t.value(a).array() > 0.0).select(g.array(), 0.0).matrix());
  });
}

Var Tape::sum(Var a) {
  Matrix v(1, 1);
  v(0, 0) = value(a).sum();
  return push(std::move(v), needs(a), [a](Tape& t, std::size_t self) {
    const Matrix& va = t.value(a);
    t.accumulate(a, Matrix::Constant(va.rows(), va.cols(), t.nodes_[self].grad(0, 0)));
  });
}

Var Tape::add_n(std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("add_n: no operands");
  Matrix v = value(xs[0]);
  bool req = needs(xs[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    require_same_shape(v, value(xs[i]), "add_n");
    v += value(xs[i]);
    req = req || needs(xs[i]);
  }
  std::vector<Var> ins(xs.begin(), xs.end());
  return push(std::move(v), req, [ins = std::move(ins)](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    for (Var x : ins) t.accumulate(x, g);
  });
}

Var Tape::sum_squares(Var a) {
  Matrix v(1, 1);
  v(0, 0) = value(a).squaredNorm();
  return push(std::move(v), needs(a), [a](Tape& t, std::size_t self) {
    t.accumulate(a, 2.0 * t.nodes_[self].grad(0, 0) * t.value(a));
  });
}

Var Tape::squared_error(Var pred, double target) {
  const Matrix& p = value(pred);
  if (p.rows() != 1 || p.cols() != 1) throw ShapeError("squared_error: prediction must be 1x1, got " + shape_str(p));
  Matrix v(1, 1);
  const double diff = p(0, 0) - target;
  v(0, 0) = diff * diff;
  return push(std::move(v), needs(pred), [pred, diff](Tape& t, std::size_t self) {
    Matrix g(1, 1);
    g(0, 0) = 2.0 * diff * t.nodes_[self].grad(0, 0);
    t.accumulate(pred, g);
  });
}

Var Tape::column(Var a, Eigen::Index j) {
  const Matrix& va = value(a);
  if (j < 0 || j >= va.cols()) throw ShapeError("column: index out of range");
  return push(va.col(j), needs(a), [a, j](Tape& t, std::size_t self) {
    const Matrix& va2 = t.value(a);
    Matrix g = Matrix::Zero(va2.rows(), va2.cols());
    g.col(j) = t.nodes_[self].grad;
    t.accumulate(a, g);
  });
}

Var Tape::mean_columns(Var a) {
  const Matrix& va = value(a);
  if (va.cols() == 0) throw ShapeError("mean_columns: no columns");
  return push(va.rowwise().mean(), needs(a), [a](Tape& t, std::size_t self) {
    const Matrix& va2 = t.value(a);
    const Matrix& g = t.nodes_[self].grad;
    Matrix out = g.replicate(1, va2.cols()) / static_cast<double>(va2.cols());
    t.accumulate(a, out);
  });
}

Var Tape::lstm_sequence(Var inputs, Var w_input, Var w_hidden, Var bias) {
  if (!all_finite(value(inputs))) throw NumericError("lstm: non-finite value in input sequence");
  auto cache = std::make_shared<LstmCache>(lstm_run(value(inputs), value(w_input), value(w_hidden), value(bias)));
  const bool req = needs(inputs) || needs(w_input) || needs(w_hidden) || needs(bias);
  Matrix hidden = cache->hidden;
  return push(std::move(hidden), req, [=](Tape& t, std::size_t self) {
    const Matrix& d_hidden = t.nodes_[self].grad;
    const Matrix& x = t.value(inputs);
    const Matrix& wi = t.value(w_input);
    const Matrix& wh = t.value(w_hidden);
    const Eigen::Index h = wh.cols();
    const Eigen::Index n = x.cols();
    const LstmCache& c = *cache;

    Matrix dz(4 * h, n);
    Vector dh_next = Vector::Zero(h);
    Vector dc_next = Vector::Zero(h);
    for (Eigen::Index step = n - 1; step >= 0; --step) {
      const auto gi = c.gates.col(step).segment(0, h).array();
      const auto gf = c.gates.col(step).segment(h, h).array();
      const auto gg = c.gates.col(step).segment(2 * h, h).array();
      const auto go = c.gates.col(step).segment(3 * h, h).array();
      const auto tc = c.tanh_c.col(step).array();

      const Eigen::ArrayXd dh = d_hidden.col(step).array() + dh_next.array();
      const Eigen::ArrayXd dc = dc_next.array() + dh * go * (1.0 - tc.square());
      const Eigen::ArrayXd c_prev = step > 0 ? Eigen::ArrayXd(c.cells.col(step - 1).array()) : Eigen::ArrayXd::Zero(h);

      dz.col(step).segment(0, h) = (dc * gg * gi * (1.0 - gi)).matrix();
      dz.col(step).segment(h, h) = (dc * c_prev * gf * (1.0 - gf)).matrix();
      dz.col(step).segment(2 * h, h) = (dc * gi * (1.0 - gg.square())).matrix();
      dz.col(step).segment(3 * h, h) = (dh * tc * go * (1.0 - go)).matrix();

      dh_next = wh.transpose() * dz.col(step);
      dc_next = (dc * gf).matrix();
    }
    if (t.needs(w_input)) t.accumulate(w_input, dz * x.transpose());
    if (t.needs(w_hidden) && n > 1) {
      t.accumulate(w_hidden, dz.rightCols(n - 1) * c.hidden.leftCols(n - 1).transpose());
    } else if (t.needs(w_hidden)) {
      t.accumulate(w_hidden, Matrix::Zero(wh.rows(), wh.cols()));
    }
    if (t.needs(bias)) t.accumulate(bias, dz.rowwise().sum());
    if (t.needs(inputs)) t.accumulate(inputs, wi.transpose() * dz);
  });
}

Var Tape::custom(std::vector<Var> inputs, Matrix value, CustomBackprop backprop) {
  bool req = false;
  for (Var v : inputs) req = req || needs(v);
  return push(std::move(value), req, [inputs = std::move(inputs), backprop = std::move(backprop)](Tape& t, std::size_t self) {
    std::vector<Matrix> grads = backprop(t.nodes_[self].grad);
    if (grads.size() != inputs.size()) throw ShapeError("custom op returned the wrong number of gradients");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      require_same_shape(grads[i], t.value(inputs[i]), "custom op gradient");
      t.accumulate(inputs[i], grads[i]);
    }
  });
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("scalar: node is " + shape_str(m));
  return m(0, 0);
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(lv));
  for (auto& n : nodes_) n.grad.resize(0, 0);
  Node& root = node(loss);
  if (!root.requires_grad) return;
  root.grad = Matrix::Ones(1, 1);
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Modules

LstmParams init_lstm(Eigen::Index input_size, Eigen::Index hidden_size, Rng& rng) {
  if (input_size < 1 || hidden_size < 1) throw ShapeError("init_lstm: sizes must be positive");
  auto fill = [&rng](Matrix& m, double fan_in) {
    const double k = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> u(-k, k);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = u(rng);
    }
  };
  LstmParams p;
  p.w_input.resize(4 * hidden_size, input_size);
  p.w_hidden.resize(4 * hidden_size, hidden_size);
  Matrix b(4 * hidden_size, 1);
  fill(p.w_input, static_cast<double>(input_size));
  fill(p.w_hidden, static_cast<double>(hidden_size));
  fill(b, static_cast<double>(hidden_size));
  p.bias = b.col(0);
  return p;
}

MlpParams init_mlp(std::span<const Eigen::Index> sizes, Activation hidden_activation, Rng& rng) {
  if (sizes.size() < 2) throw ShapeError("init_mlp: need at least input and output sizes");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const Eigen::Index in = sizes[l];
    const Eigen::Index out = sizes[l + 1];
    if (in < 1 || out < 1) throw ShapeError("init_mlp: sizes must be positive");
    const double k = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-k, k);
    DenseLayer layer;
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = u(rng);
    }
    for (Eigen::Index r = 0; r < out; ++r) layer.bias(r) = u(rng);
    layer.activation = (l + 2 == sizes.size()) ? Activation::Linear : hidden_activation;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

void check_lstm(const LstmParams& p) {
  const Eigen::Index h = p.w_hidden.cols();
  if (h < 1 || p.w_hidden.rows() != 4 * h || p.w_input.rows() != 4 * h || p.bias.size() != 4 * h) {
    throw ShapeError("LSTM parameters have inconsistent shapes");
  }
  if (!p.w_input.allFinite() || !p.w_hidden.allFinite() || !p.bias.allFinite()) {
    throw NumericError("LSTM parameters contain non-finite values");
  }
}

void check_mlp(const MlpParams& p) {
  if (p.layers.empty()) throw ShapeError("MLP has no layers");
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    if (layer.bias.size() != layer.weight.rows()) throw ShapeError("MLP layer " + std::to_string(l) + " bias size mismatch");
    if (l > 0 && layer.weight.cols() != p.layers[l - 1].weight.rows()) {
      throw ShapeError("MLP layer " + std::to_string(l) + " does not chain with the previous layer");
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw NumericError("MLP layer " + std::to_string(l) + " contains non-finite values");
    }
  }
}

LstmOutput lstm_forward(const Matrix& sequence, const LstmParams& p) {
  if (sequence.rows() < 1) throw ShapeError("lstm_forward: empty sequence");
  if (sequence.cols() != p.input_size()) {
    throw ShapeError("lstm_forward: sequence has " + std::to_string(sequence.cols()) + " features, parameters expect " +
                     std::to_string(p.input_size()));
  }
  if (!sequence.allFinite()) throw NumericError("lstm_forward: non-finite value in input sequence");
  LstmCache c = lstm_run(sequence.transpose(), p.w_input, p.w_hidden, p.bias);
  LstmOutput out;
  out.final_hidden = c.hidden.col(c.hidden.cols() - 1);
  out.hidden = std::move(c.hidden);
  return out;
}

namespace {

Vector activate(const Vector& z, Activation a) {
  switch (a) {
    case Activation::Linear: return z;
    case Activation::Relu: return z.cwiseMax(0.0);
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Sigmoid: return sigmoid_of(z);
  }
  return z;
}

}  // namespace

Vector mlp_forward(const Vector& x, const MlpParams& p) {
  if (p.layers.empty()) throw ShapeError("mlp_forward: no layers");
  if (x.size() != p.input_size()) {
    throw ShapeError("mlp_forward: input has " + std::to_string(x.size()) + " entries, first layer expects " +
                     std::to_string(p.input_size()));
  }
  Vector h = x;
  for (const auto& layer : p.layers) {
    if (layer.weight.cols() != h.size()) throw ShapeError("mlp_forward: layer shapes do not chain");
    h = activate(layer.weight * h + layer.bias, layer.activation);
  }
  return h;
}

LstmVars bind(Tape& tape, const LstmParams& p) {
  return LstmVars{tape.parameter(p.w_input), tape.parameter(p.w_hidden), tape.parameter(p.bias)};
}

MlpVars bind(Tape& tape, const MlpParams& p) {
  MlpVars v;
  for (const auto& layer : p.layers) {
    v.weights.push_back(tape.parameter(layer.weight));
    v.biases.push_back(tape.parameter(layer.bias));
    v.activations.push_back(layer.activation);
  }
  return v;
}

LstmParams gradients(const Tape& tape, const LstmVars& v) {
  LstmParams g;
  g.w_input = tape.grad(v.w_input);
  g.w_hidden = tape.grad(v.w_hidden);
  g.bias = tape.grad(v.bias).col(0);
  return g;
}

MlpParams gradients(const Tape& tape, const MlpVars& v, const MlpParams& shape_like) {
  MlpParams g;
  for (std::size_t l = 0; l < v.weights.size(); ++l) {
    DenseLayer layer;
    layer.weight = tape.grad(v.weights[l]);
    layer.bias = tape.grad(v.biases[l]).col(0);
    layer.activation = shape_like.layers.at(l).activation;
    g.layers.push_back(std::move(layer));
  }
  return g;
}

Var lstm_apply(Tape& tape, const LstmVars& v, Var inputs) {
  return tape.lstm_sequence(inputs, v.w_input, v.w_hidden, v.bias);
}

Var mlp_apply(Tape& tape, const MlpVars& v, Var x) {
  Var h = x;
  for (std::size_t l = 0; l < v.weights.size(); ++l) {
    h = tape.add(tape.matmul(v.weights[l], h), v.biases[l]);
    switch (v.activations[l]) {
      case Activation::Linear: break;
      case Activation::Relu: h = tape.relu(h); break;
      case Activation::Tanh: h = tape.tanh(h); break;
      case Activation::Sigmoid: h = tape.sigmoid(h); break;
    }
  }
  return h;
}

void append(ParamPack& pack, const std::string& prefix, const LstmParams& p) {
  pack.names.push_back(prefix + ".w_input");
  pack.values.push_back(p.w_input);
  pack.names.push_back(prefix + ".w_hidden");
  pack.values.push_back(p.w_hidden);
  pack.names.push_back(prefix + ".bias");
  pack.values.push_back(p.bias);
}

void append(ParamPack& pack, const std::string& prefix, const MlpParams& p) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    pack.names.push_back(base + ".weight");
    pack.values.push_back(p.layers[l].weight);
    pack.names.push_back(base + ".bias");
    pack.values.push_back(p.layers[l].bias);
  }
}

LstmParams take_lstm(const ParamPack& pack, std::size_t& pos) {
  if (pos + 3 > pack.size()) throw ShapeError("parameter pack too short for an LSTM");
  LstmParams p;
  p.w_input = pack.values[pos++];
  p.w_hidden = pack.values[pos++];
  p.bias = pack.values[pos++].col(0);
  return p;
}

MlpParams take_mlp(const ParamPack& pack, std::size_t& pos, const MlpParams& shape_like) {
  if (pos + 2 * shape_like.layers.size() > pack.size()) throw ShapeError("parameter pack too short for an MLP");
  MlpParams p;
  for (const auto& ref : shape_like.layers) {
    DenseLayer layer;
    layer.weight = pack.values[pos++];
    layer.bias = pack.values[pos++].col(0);
    layer.activation = ref.activation;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

AdamState adam_init(const ParamPack& params) {
  AdamState s;
  for (const auto& v : params.values) {
    s.first_moment.push_back(Matrix::Zero(v.rows(), v.cols()));
    s.second_moment.push_back(Matrix::Zero(v.rows(), v.cols()));
  }
  return s;
}

StepResult optimizer_step(const ParamPack& params, const ParamPack& grads, const AdamState& state, double lr,
                          const AdamConfig& cfg, const std::vector<bool>* trainable) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw ShapeError("optimizer_step: parameter, gradient and state counts differ");
  }
  if (trainable && trainable->size() != n) throw ShapeError("optimizer_step: trainable mask has the wrong length");
  for (std::size_t i = 0; i < n; ++i) {
    require_same_shape(params.values[i], grads.values[i], "optimizer_step");
    if (!grads.values[i].allFinite()) {
      throw NumericError("non-finite gradient for parameter '" + params.names[i] + "'");
    }
  }

  StepResult out{params, state};
  out.state.step = state.step + 1;
  const double t = static_cast<double>(out.state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    if (trainable && !(*trainable)[i]) continue;
    const Matrix& g = grads.values[i];
    Matrix& m = out.state.first_moment[i];
    Matrix& v = out.state.second_moment[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    out.params.values[i].array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
  }
  return out;
}

}  // namespace cfrate::nn
