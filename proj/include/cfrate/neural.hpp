#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfrate/error.hpp"

// Small deterministic reverse-mode engine. Values are Eigen matrices of doubles;
// vectors are single-column matrices.
namespace cfrate::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Stateless seed mixing (splitmix64) for deriving independent child streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// Same shape and bit-identical contents.
bool bit_equal(const Matrix& a, const Matrix& b);

// Handle to a node recorded on a Tape.
struct Var {
  int id = -1;
};

class Tape {
 public:
  Var parameter(Matrix value);  // receives a gradient
  Var constant(Matrix value);   // no gradient

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double s);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var sum(Var a);                    // 1x1
  Var add_n(std::span<const Var> xs);  // all same shape
  Var sum_squares(Var a);            // 1x1, sum of squared entries
  Var squared_error(Var pred, double target);  // pred must be 1x1
  Var column(Var a, Eigen::Index j);
  Var mean_columns(Var a);           // rows x 1

  // Runs an LSTM over the columns of `inputs` (D x n) from a zero state and
  // returns all hidden states (H x n). Gates stacked as [input, forget, cell, output].
  Var lstm_sequence(Var inputs, Var w_input, Var w_hidden, Var bias);

  // Records an externally defined op. `backprop` maps the upstream gradient of the
  // result to one gradient per input (same shapes as the inputs' values).
  using CustomBackprop = std::function<std::vector<Matrix>(const Matrix& upstream)>;
  Var custom(std::vector<Var> inputs, Matrix value, CustomBackprop backprop);

  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  double scalar(Var v) const;
  // Gradient of the last backward() target with respect to v (zero if unreached).
  Matrix grad(Var v) const;

  // Reverse-mode sweep from a 1x1 node, visiting nodes in reverse creation order.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // empty until touched
    bool requires_grad = false;
    std::function<void(Tape&, std::size_t self)> backprop;
  };

  Var push(Matrix value, bool requires_grad, std::function<void(Tape&, std::size_t)> backprop = {});
  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  bool needs(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
  void accumulate(Var v, const Matrix& g);

  std::vector<Node> nodes_;
};

struct LstmParams {
  Matrix w_input;   // 4H x D
  Matrix w_hidden;  // 4H x H
  Vector bias;      // 4H

  Eigen::Index input_size() const { return w_input.cols(); }
  Eigen::Index hidden_size() const { return w_hidden.cols(); }
  friend bool operator==(const LstmParams&, const LstmParams&);
};

enum class Activation { Linear, Relu, Tanh, Sigmoid };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Linear;
  friend bool operator==(const DenseLayer&, const DenseLayer&);
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  Eigen::Index input_size() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
  Eigen::Index output_size() const { return layers.empty() ? 0 : layers.back().weight.rows(); }
  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
LstmParams init_lstm(Eigen::Index input_size, Eigen::Index hidden_size, Rng& rng);
// Hidden layers use `hidden_activation`; the final layer is linear.
MlpParams init_mlp(std::span<const Eigen::Index> sizes, Activation hidden_activation, Rng& rng);

void check_lstm(const LstmParams& p);
void check_mlp(const MlpParams& p);

struct LstmOutput {
  Matrix hidden;  // H x n
  Vector final_hidden;
};

// Plain forward passes (no tape). `sequence` is n x D, one turn per row.
LstmOutput lstm_forward(const Matrix& sequence, const LstmParams& p);
Vector mlp_forward(const Vector& x, const MlpParams& p);

// Tape bindings: leaves for every parameter of a module.
struct LstmVars {
  Var w_input, w_hidden, bias;
};
struct MlpVars {
  std::vector<Var> weights, biases;
  std::vector<Activation> activations;
};

LstmVars bind(Tape& tape, const LstmParams& p);
MlpVars bind(Tape& tape, const MlpParams& p);
LstmParams gradients(const Tape& tape, const LstmVars& v);
MlpParams gradients(const Tape& tape, const MlpVars& v, const MlpParams& shape_like);

// `inputs` is D x n (one column per turn).
Var lstm_apply(Tape& tape, const LstmVars& v, Var inputs);
Var mlp_apply(Tape& tape, const MlpVars& v, Var x);

// A named flat view of a model's parameters, used by the optimizer and checkpoints.
struct ParamPack {
  std::vector<std::string> names;
  std::vector<Matrix> values;

  std::size_t size() const { return values.size(); }
  friend bool operator==(const ParamPack&, const ParamPack&);
};

void append(ParamPack& pack, const std::string& prefix, const LstmParams& p);
void append(ParamPack& pack, const std::string& prefix, const MlpParams& p);
// Reads parameters back in append order starting at `pos`, advancing it.
LstmParams take_lstm(const ParamPack& pack, std::size_t& pos);
MlpParams take_mlp(const ParamPack& pack, std::size_t& pos, const MlpParams& shape_like);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  friend bool operator==(const AdamState&, const AdamState&);
};

AdamState adam_init(const ParamPack& params);

struct StepResult {
  ParamPack params;
  AdamState state;
};

// One Adam update. Entries with trainable[i] == false are left untouched, moments included.
// Throws NumericError naming the parameter on a non-finite gradient.
StepResult optimizer_step(const ParamPack& params, const ParamPack& grads, const AdamState& state, double lr,
                          const AdamConfig& cfg = {}, const std::vector<bool>* trainable = nullptr);

}  // namespace cfrate::nn
