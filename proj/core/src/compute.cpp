#include "debgcd/compute.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <utility>

#include "debgcd/errors.hpp"

namespace debgcd::compute {

namespace {

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
  }
}

void require_temperature(double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("softmax temperature must be positive, got " + std::to_string(temperature));
  }
}

Matrix softmax_impl(const Matrix& x, double temperature) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    double total = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp((x(i, j) - mx) / temperature);
      total += out(i, j);
    }
    out.row(i) /= total;
  }
  return out;
}

Matrix normalize_impl(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    if (!(n > kMinRowNorm)) {
      throw DegenerateInputError("l2_normalize: row " + std::to_string(i) + " has near-zero norm");
    }
    out.row(i) = x.row(i) / n;
  }
  return out;
}

}  // namespace

// ---- Rng -----------------------------------------------------------------

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::size_t Rng::below(std::size_t n) {
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t r = engine_();
  while (r >= limit) r = engine_();
  return static_cast<std::size_t>(r % bound);
}

Matrix random_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.normal();
  }
  return m;
}

// ---- ParamSet ------------------------------------------------------------

Param& ParamSet::add(const std::string& name, Matrix value) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  Param p;
  p.grad = Matrix::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const Param& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamSet::zero_grad() {
  for (auto& [name, p] : params_) p.grad.setZero();
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

// ---- Tape ----------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::item() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw DimensionError("item: expected 1x1, got " + shape(v));
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Param& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  bound_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::vector<Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape() != this) throw DimensionError("operation mixes Vars from different tapes");
    n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.needs_grad) return;
  require_same_shape("accumulate", n.value, g);
  if (n.has_grad) {
    n.grad += g;
  } else {
    n.grad = g;
    n.has_grad = true;
  }
}

void Tape::backward(Var loss) {
  if (backward_done_) throw NumericError("backward called twice on the same tape");
  backward_done_ = true;
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) throw DimensionError("backward: loss must be 1x1");
  if (!nodes_[loss.id()].needs_grad) return;
  accumulate(loss, Matrix::Ones(1, 1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.value, n.grad);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

// ---- operations ----------------------------------------------------------

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape(a.value()) + " * " + shape(b.value()));
  }
  Matrix out = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape(a.value()) + " * " + shape(b.value()) + "^T");
  }
  Matrix out = a.value() * b.value().transpose();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value());
    if (t.needs_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Matrix out = a.value() + b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Matrix out = a.value() - b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, -g);
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  return a.tape()->record(std::move(out), {a}, [a, s](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g * s);
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape("hadamard", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var mul_const(Var a, const Matrix& c) {
  require_same_shape("mul_const", a.value(), c);
  Matrix out = a.value().cwiseProduct(c);
  return a.tape()->record(std::move(out), {a}, [a, c](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(c));
  });
}

Var add_const(Var a, const Matrix& c) {
  require_same_shape("add_const", a.value(), c);
  Matrix out = a.value() + c;
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
  });
}

Var add_row_bias(Var x, Var bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_row_bias: bias " + shape(bias.value()) + " for input " +
                         shape(x.value()));
  }
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return x.tape()->record(std::move(out), {x, bias},
                          [x, bias](Tape& t, const Matrix&, const Matrix& g) {
                            t.accumulate(x, g);
                            if (t.needs_grad(bias)) t.accumulate(bias, g.colwise().sum());
                          });
}

Var gelu(Var x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  Matrix out = x.value().unaryExpr(
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix&, const Matrix& g) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    Matrix d = x.value().unaryExpr([](double v) {
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      return cdf + v * pdf;
    });
    t.accumulate(x, g.cwiseProduct(d));
  });
}

Var sigmoid(Var x) {
  Matrix out = x.value().unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix& y, const Matrix& g) {
    t.accumulate(x, g.cwiseProduct(y.unaryExpr([](double s) { return s * (1.0 - s); })));
  });
}

Var log_clamped(Var x) {
  Matrix out = x.value().unaryExpr([](double v) { return std::log(std::max(v, kLogClamp)); });
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& xv = x.value();
    Matrix d(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      d.data()[i] = xv.data()[i] > kLogClamp ? g.data()[i] / xv.data()[i] : 0.0;
    }
    t.accumulate(x, d);
  });
}

Var l2_normalize_rows(Var x) {
  Matrix out = normalize_impl(x.value());
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix& y, const Matrix& g) {
    const Matrix& xv = x.value();
    Matrix d(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      const double n = xv.row(i).norm();
      const double proj = y.row(i).dot(g.row(i));
      d.row(i) = (g.row(i) - proj * y.row(i)) / n;
    }
    t.accumulate(x, d);
  });
}

Var softmax_rows(Var x, double temperature) {
  require_temperature(temperature);
  Matrix out = softmax_impl(x.value(), temperature);
  return x.tape()->record(std::move(out), {x},
                          [x, temperature](Tape& t, const Matrix& p, const Matrix& g) {
                            Matrix d(p.rows(), p.cols());
                            for (Eigen::Index i = 0; i < p.rows(); ++i) {
                              const double inner = p.row(i).dot(g.row(i));
                              d.row(i) = p.row(i).cwiseProduct(
                                             (g.row(i).array() - inner).matrix()) /
                                         temperature;
                            }
                            t.accumulate(x, d);
                          });
}

Var log_softmax_rows(Var x, double temperature) {
  require_temperature(temperature);
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mx = xv.row(i).maxCoeff();
    double total = 0.0;
    for (Eigen::Index j = 0; j < xv.cols(); ++j) total += std::exp((xv(i, j) - mx) / temperature);
    const double lse = std::log(total);
    for (Eigen::Index j = 0; j < xv.cols(); ++j) out(i, j) = (xv(i, j) - mx) / temperature - lse;
  }
  return x.tape()->record(std::move(out), {x},
                          [x, temperature](Tape& t, const Matrix& lp, const Matrix& g) {
                            Matrix d(lp.rows(), lp.cols());
                            for (Eigen::Index i = 0; i < lp.rows(); ++i) {
                              const double gs = g.row(i).sum();
                              for (Eigen::Index j = 0; j < lp.cols(); ++j) {
                                d(i, j) = (g(i, j) - std::exp(lp(i, j)) * gs) / temperature;
                              }
                            }
                            t.accumulate(x, d);
                          });
}

Var slice_rows(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw DimensionError("slice_rows: range out of bounds for " + shape(x.value()));
  }
  Matrix out = x.value().middleRows(start, count);
  return x.tape()->record(std::move(out), {x},
                          [x, start, count](Tape& t, const Matrix&, const Matrix& g) {
                            Matrix d = Matrix::Zero(x.rows(), x.cols());
                            d.middleRows(start, count) = g;
                            t.accumulate(x, d);
                          });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Matrix& xv = x.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= static_cast<std::size_t>(xv.rows())) {
      throw DimensionError("gather_rows: row index out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = xv.row(static_cast<Eigen::Index>(rows[i]));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape()->record(std::move(out), {x},
                          [x, idx = std::move(idx)](Tape& t, const Matrix&, const Matrix& g) {
                            Matrix d = Matrix::Zero(x.rows(), x.cols());
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              d.row(static_cast<Eigen::Index>(idx[i])) +=
                                  g.row(static_cast<Eigen::Index>(i));
                            }
                            t.accumulate(x, d);
                          });
}

Var pick(Var x, std::span<const std::size_t> cols) {
  const Matrix& xv = x.value();
  if (cols.size() != static_cast<std::size_t>(xv.rows())) {
    throw DimensionError("pick: need one column index per row");
  }
  Matrix out(xv.rows(), 1);
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const auto c = static_cast<Eigen::Index>(cols[static_cast<std::size_t>(i)]);
    if (c >= xv.cols()) throw DimensionError("pick: column index out of range");
    out(i, 0) = xv(i, c);
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return x.tape()->record(std::move(out), {x},
                          [x, idx = std::move(idx)](Tape& t, const Matrix&, const Matrix& g) {
                            Matrix d = Matrix::Zero(x.rows(), x.cols());
                            for (Eigen::Index i = 0; i < d.rows(); ++i) {
                              d(i, static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)])) =
                                  g(i, 0);
                            }
                            t.accumulate(x, d);
                          });
}

Var sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(x, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().size());
  if (n == 0) throw DimensionError("mean of empty matrix");
  return scale(sum(x), 1.0 / n);
}

Var col_mean(Var x) {
  if (x.rows() == 0) throw DimensionError("col_mean of empty matrix");
  Matrix out = x.value().colwise().mean();
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix&, const Matrix& g) {
    const double inv = 1.0 / static_cast<double>(x.rows());
    Matrix d = g.replicate(x.rows(), 1) * inv;
    t.accumulate(x, d);
  });
}

Var row_sum(Var x) {
  Matrix out = x.value().rowwise().sum();
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(x, g.replicate(1, x.cols()));
  });
}

Var concat_rows(Var a, Var b) {
  if (a.cols() != b.cols()) throw DimensionError("concat_rows: column mismatch");
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.topRows(a.rows()));
    if (t.needs_grad(b)) t.accumulate(b, g.bottomRows(b.rows()));
  });
}

Var linear_forward(Var weight, Var bias, Var x) {
  if (x.cols() != weight.rows()) {
    throw DimensionError("linear: input " + shape(x.value()) + " for weight " +
                         shape(weight.value()));
  }
  return add_row_bias(matmul(x, weight), bias);
}

Matrix l2_normalize_rows(const Matrix& x) { return normalize_impl(x); }

Matrix softmax_rows(const Matrix& x, double temperature) {
  require_temperature(temperature);
  return softmax_impl(x, temperature);
}

// ---- MLP -----------------------------------------------------------------

void MlpSpec::validate() const {
  if (widths.size() < 2) throw ConfigError("MLP needs at least one layer");
  for (auto w : widths) {
    if (w <= 0) throw ConfigError("MLP widths must be positive");
  }
}

void init_mlp(ParamSet& params, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
  spec.validate();
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const auto in = spec.widths[l];
    const auto out = spec.widths[l + 1];
    const std::string base = prefix + ".fc" + std::to_string(l + 1);
    params.add(base + ".weight", random_normal(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))));
    params.add(base + ".bias", Matrix::Zero(1, out));
  }
}

Var mlp_forward(Tape& tape, ParamSet& params, const std::string& prefix, const MlpSpec& spec,
                Var x) {
  const std::size_t n = spec.layer_count();
  for (std::size_t l = 0; l < n; ++l) {
    const std::string base = prefix + ".fc" + std::to_string(l + 1);
    x = linear_forward(tape.param(params.at(base + ".weight")), tape.param(params.at(base + ".bias")),
                       x);
    const Activation act = l + 1 == n ? spec.final : spec.hidden;
    if (act == Activation::kGelu) x = gelu(x);
  }
  return x;
}

// ---- gradient check ------------------------------------------------------

double grad_check(const std::function<Var(Tape&)>& loss_fn, ParamSet& params, double eps) {
  auto evaluate = [&]() {
    Tape t;
    const double v = loss_fn(t).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
    return v;
  };

  params.zero_grad();
  {
    Tape t;
    Var loss = loss_fn(t);
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss is not finite");
    t.backward(loss);
  }

  double worst = 0.0;
  for (auto& [name, p] : params) {
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      double& slot = p.value.data()[k];
      const double saved = slot;
      slot = saved + eps;
      const double up = evaluate();
      slot = saved - eps;
      const double down = evaluate();
      slot = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p.grad.data()[k];
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace debgcd::compute
