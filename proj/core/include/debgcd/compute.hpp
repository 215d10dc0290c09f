#pragma once

// Dense reverse-mode compute core.
//
// Values are row-major float64 matrices. A Tape records every operation
// applied to Vars together with a backward closure; Tape::backward(loss)
// walks the records in reverse and accumulates exact gradients into the
// ParamSet slots that were bound with Tape::param().

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace debgcd::compute {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// Floor applied to every probability entering a logarithm.
inline constexpr double kLogClamp = 1e-12;
// Rows with a smaller Euclidean norm cannot be normalized.
inline constexpr double kMinRowNorm = 1e-12;

// Deterministic generator with platform-independent transforms. The std
// distributions are implementation-defined, so sampling is done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double normal();
  // Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  // Independent stream derived from this one.
  Rng split() { return Rng(next_u64()); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix random_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev);

struct Param {
  Matrix value;
  Matrix grad;
};

// Named parameters in name order. Iteration order (and therefore update
// and serialization order) is the lexicographic name order.
class ParamSet {
 public:
  Param& add(const std::string& name, Matrix value);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Param> params_;
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Scalar value of a 1x1 Var.
  double item() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the op's output value and the gradient flowing into it.
  using Backward = std::function<void(Tape&, const Matrix& out, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Non-differentiable input.
  Var constant(Matrix value);
  // Leaf bound to a parameter; gradients land in param.grad on backward().
  // Binding the same parameter twice returns the same Var.
  Var param(Param& param);
  // Value-only copy of v; no gradient crosses it.
  Var detach(Var v) { return constant(v.value()); }

  // Records an op result. needs_grad is derived from the inputs.
  Var record(Matrix value, std::vector<Var> inputs, Backward backward);

  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  // Adds g into the gradient slot of v (no-op unless v needs gradients).
  void accumulate(Var v, const Matrix& g);

  // Reverse pass from a 1x1 Var. May be called once per tape.
  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    Backward backward;
    Param* param = nullptr;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> bound_;
  bool backward_done_ = false;
};

// ---- differentiable operations -------------------------------------------

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var hadamard(Var a, Var b);
// Elementwise product with a constant matrix of the same shape.
Var mul_const(Var a, const Matrix& c);
Var add_const(Var a, const Matrix& c);
// x + bias, bias is 1 x cols and broadcast over rows.
Var add_row_bias(Var x, Var bias);
Var gelu(Var x);
Var sigmoid(Var x);
// log(max(x, kLogClamp)); the gradient is zero where the clamp is active.
Var log_clamped(Var x);
// Row-wise x / ||x||. Throws DegenerateInputError for rows with norm <= kMinRowNorm.
Var l2_normalize_rows(Var x);
// Row-wise softmax of x / temperature. Throws ConfigError for temperature <= 0.
Var softmax_rows(Var x, double temperature);
// Row-wise log-softmax of x / temperature.
Var log_softmax_rows(Var x, double temperature);
Var slice_rows(Var x, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var x, std::span<const std::size_t> rows);
// out(i) = x(i, cols[i]); result is n x 1.
Var pick(Var x, std::span<const std::size_t> cols);
Var sum(Var x);
Var mean(Var x);
// Mean over rows, 1 x cols.
Var col_mean(Var x);
// Sum over columns, rows x 1.
Var row_sum(Var x);
Var concat_rows(Var a, Var b);

// y = x W + b with W stored as in x out, b as 1 x out.
Var linear_forward(Var weight, Var bias, Var x);

// ---- value-level helpers (no tape) ----------------------------------------

Matrix l2_normalize_rows(const Matrix& x);
Matrix softmax_rows(const Matrix& x, double temperature);

// ---- multilayer perceptrons ----------------------------------------------

enum class Activation { kNone, kGelu };

struct MlpSpec {
  // widths[0] is the input width; one linear layer per consecutive pair.
  std::vector<Eigen::Index> widths;
  Activation hidden = Activation::kGelu;
  Activation final = Activation::kNone;

  std::size_t layer_count() const { return widths.empty() ? 0 : widths.size() - 1; }
  void validate() const;
};

// Registers prefix.fc{i}.weight / prefix.fc{i}.bias for i = 1..layers.
void init_mlp(ParamSet& params, const std::string& prefix, const MlpSpec& spec, Rng& rng);
Var mlp_forward(Tape& tape, ParamSet& params, const std::string& prefix, const MlpSpec& spec,
                Var x);

// ---- verification --------------------------------------------------------

// Largest |analytic - central difference| / max(1, |central difference|)
// over every scalar of every parameter. loss_fn must build a scalar on the
// given tape and be deterministic in the parameter values.
double grad_check(const std::function<Var(Tape&)>& loss_fn, ParamSet& params, double eps);

}  // namespace debgcd::compute
