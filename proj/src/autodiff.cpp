// SPDX-License-Identifier: Apache-2.0
#include "newsret/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "newsret/error.hpp"

namespace newsret {
namespace {

#ifdef NDEBUG
std::atomic<bool> g_numeric_checks{false};
#else
std::atomic<bool> g_numeric_checks{true};
#endif

void require_matrix(const Tensor& t, const char* kernel) {
  if (t.rank() != 2) {
    fail(ErrorCode::kDimension, std::string(kernel) + ": expected matrix, got " + t.shape_string());
  }
}

void check_finite(const Tensor& t, const char* kernel) {
  if (g_numeric_checks.load(std::memory_order_relaxed) && !t.all_finite()) {
    fail(ErrorCode::kNumeric, std::string(kernel) + ": non-finite input");
  }
}

const Tensor& checked(Var v, const char* kernel) {
  const Tensor& t = v.value();
  require_matrix(t, kernel);
  check_finite(t, kernel);
  return t;
}

void same_tape(Var a, Var b, const char* kernel) {
  if (&a.tape() != &b.tape()) fail(ErrorCode::kContract, std::string(kernel) + ": vars on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* kernel) {
  if (!a.same_shape(b)) {
    fail(ErrorCode::kDimension, std::string(kernel) + ": shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
  }
}

}  // namespace

void set_numeric_checks(bool enabled) noexcept { g_numeric_checks.store(enabled); }
bool numeric_checks() noexcept { return g_numeric_checks.load(); }

const Tensor& Var::value() const {
  if (tape_ == nullptr) fail(ErrorCode::kContract, "use of an unbound Var");
  return tape_->value(index_);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(const Parameter& param) {
  if (auto it = leaves_.find(&param); it != leaves_.end()) return Var(this, it->second);
  Node node;
  node.value = param.value;
  node.param = &param;
  node.requires_grad = grad_enabled_ && param.trainable;
  nodes_.push_back(std::move(node));
  leaves_.emplace(&param, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (std::size_t p : parents) {
    if (p >= nodes_.size()) fail(ErrorCode::kContract, "parent recorded after child");
    node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
  }
  if (node.requires_grad) {
    node.parents = std::move(parents);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t index) {
  Node& node = nodes_[index];
  if (node.grad.numel() == 0) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

GradientMap Tape::backward(Var loss) {
  if (&loss.tape() != this) fail(ErrorCode::kContract, "loss belongs to another tape");
  if (loss.value().numel() != 1) {
    fail(ErrorCode::kContract, "backward requires a scalar loss, got " + loss.value().shape_string());
  }
  for (Node& node : nodes_) node.grad = Tensor();
  backward_visits_ = 0;
  grad_buffer(loss.index()).data()[0] = 1.0;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    ++backward_visits_;
    if (!node.requires_grad || !node.backward || node.grad.numel() == 0) continue;
    node.backward(*this, i);
  }
  GradientMap grads;
  for (const auto& [param, index] : leaves_) {
    const Node& node = nodes_[index];
    if (node.requires_grad && node.grad.numel() != 0) {
      grads.emplace(param, node.grad);
    } else {
      grads.emplace(param, Tensor(node.value.shape(), 0.0));
    }
  }
  return grads;
}

namespace ops {

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  const Tensor& x = checked(a, "matmul");
  const Tensor& y = checked(b, "matmul");
  const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
  if (y.rows() != k) {
    fail(ErrorCode::kDimension, "matmul: " + x.shape_string() + " x " + y.shape_string());
  }
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out.at(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x.at(i, p);
      if (xv == 0.0) continue;
      const double* yrow = &y.at(p, 0);
      for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
    }
  }
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ai);
    const Tensor& y = t.value(bi);
    if (t.requires_grad(ai)) {
      Tensor& gx = t.grad_buffer(ai);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g.at(i, j) * y.at(p, j);
          gx.at(i, p) += acc;
        }
      }
    }
    if (t.requires_grad(bi)) {
      Tensor& gy = t.grad_buffer(bi);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x.at(i, p);
          if (xv == 0.0) continue;
          double* gyrow = &gy.at(p, 0);
          const double* grow = &g.at(i, 0);
          for (std::size_t j = 0; j < n; ++j) gyrow[j] += xv * grow[j];
        }
      }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  same_tape(a, b, "matmul_nt");
  const Tensor& x = checked(a, "matmul_nt");
  const Tensor& y = checked(b, "matmul_nt");
  const std::size_t m = x.rows(), k = x.cols(), n = y.rows();
  if (y.cols() != k) {
    fail(ErrorCode::kDimension, "matmul_nt: " + x.shape_string() + " x " + y.shape_string() + "^T");
  }
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xrow = &x.at(i, 0);
    for (std::size_t j = 0; j < n; ++j) {
      const double* yrow = &y.at(j, 0);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += xrow[p] * yrow[p];
      out.at(i, j) = acc;
    }
  }
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ai);
    const Tensor& y = t.value(bi);
    if (t.requires_grad(ai)) {
      Tensor& gx = t.grad_buffer(ai);
      for (std::size_t i = 0; i < m; ++i) {
        double* gxrow = &gx.at(i, 0);
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g.at(i, j);
          if (gv == 0.0) continue;
          const double* yrow = &y.at(j, 0);
          for (std::size_t p = 0; p < k; ++p) gxrow[p] += gv * yrow[p];
        }
      }
    }
    if (t.requires_grad(bi)) {
      Tensor& gy = t.grad_buffer(bi);
      for (std::size_t i = 0; i < m; ++i) {
        const double* xrow = &x.at(i, 0);
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g.at(i, j);
          if (gv == 0.0) continue;
          double* gyrow = &gy.at(j, 0);
          for (std::size_t p = 0; p < k; ++p) gyrow[p] += gv * xrow[p];
        }
      }
    }
  });
}

namespace {

template <typename Forward, typename GradA, typename GradB>
Var elementwise(Var a, Var b, const char* kernel, Forward forward, GradA grad_a, GradB grad_b) {
  same_tape(a, b, kernel);
  const Tensor& x = checked(a, kernel);
  const Tensor& y = checked(b, kernel);
  require_same_shape(x, y, kernel);
  Tensor out(x.shape(), 0.0);
  auto xd = x.data();
  auto yd = y.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = forward(xd[i], yd[i]);
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi, grad_a, grad_b](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    auto xd = t.value(ai).data();
    auto yd = t.value(bi).data();
    if (t.requires_grad(ai)) {
      auto gx = t.grad_buffer(ai).data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * grad_a(xd[i], yd[i]);
    }
    if (t.requires_grad(bi)) {
      auto gy = t.grad_buffer(bi).data();
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * grad_b(xd[i], yd[i]);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var scale(Var a, double factor) {
  const Tensor& x = checked(a, "scale");
  Tensor out(x.shape(), 0.0);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * factor;
  const std::size_t ai = a.index();
  return a.tape().record(std::move(out), {ai}, [ai, factor](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    auto gx = t.grad_buffer(ai).data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Var add_bias(Var x, Var bias) {
  same_tape(x, bias, "add_bias");
  const Tensor& v = checked(x, "add_bias");
  const Tensor& b = checked(bias, "add_bias");
  const std::size_t m = v.rows(), n = v.cols();
  if (b.rows() != 1 || b.cols() != n) {
    fail(ErrorCode::kDimension, "add_bias: " + v.shape_string() + " + " + b.shape_string());
  }
  Tensor out = v;
  out.requires_grad = false;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += b.at(0, j);
  }
  const std::size_t xi = x.index(), bi = bias.index();
  return x.tape().record(std::move(out), {xi, bi}, [xi, bi, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(xi)) {
      auto gx = t.grad_buffer(xi).data();
      auto gd = g.data();
      for (std::size_t i = 0; i < gd.size(); ++i) gx[i] += gd[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gb.at(0, j) += g.at(i, j);
      }
    }
  });
}

Var softmax_rows(Var x, std::span<const std::uint8_t> allowed) {
  const Tensor& v = checked(x, "softmax_rows");
  const std::size_t m = v.rows(), n = v.cols();
  if (!allowed.empty() && allowed.size() != m * n) {
    fail(ErrorCode::kDimension, "softmax_rows: mask size does not match input");
  }
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (allowed.empty() || allowed[i * n + j]) hi = std::max(hi, v.at(i, j));
    }
    if (!std::isfinite(hi)) fail(ErrorCode::kContract, "softmax_rows: row with no allowed entry");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (allowed.empty() || allowed[i * n + j]) {
        const double e = std::exp(v.at(i, j) - hi);
        out.at(i, j) = e;
        total += e;
      }
    }
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= total;
  }
  const std::size_t xi = x.index();
  return x.tape().record(std::move(out), {xi}, [xi, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

Var layer_norm_rows(Var x, Var gain, Var offset, double eps) {
  same_tape(x, gain, "layer_norm_rows");
  same_tape(x, offset, "layer_norm_rows");
  const Tensor& v = checked(x, "layer_norm_rows");
  const Tensor& g = checked(gain, "layer_norm_rows");
  const Tensor& b = checked(offset, "layer_norm_rows");
  const std::size_t m = v.rows(), n = v.cols();
  if (g.rows() != 1 || g.cols() != n || !g.same_shape(b)) {
    fail(ErrorCode::kDimension, "layer_norm_rows: gain/offset must be [1," + std::to_string(n) + "]");
  }
  if (eps < 0.0) fail(ErrorCode::kConfig, "layer_norm_rows: negative epsilon");
  auto normalized = std::make_shared<Tensor>(std::vector<std::size_t>{m, n}, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(m, 0.0);
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += v.at(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = v.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (v.at(i, j) - mu) * inv;
      normalized->at(i, j) = xhat;
      out.at(i, j) = g.at(0, j) * xhat + b.at(0, j);
    }
  }
  const std::size_t xi = x.index(), gi = gain.index(), bi = offset.index();
  return x.tape().record(
      std::move(out), {xi, gi, bi},
      [xi, gi, bi, m, n, normalized, inv_std](Tape& t, std::size_t self) {
        const Tensor& dy = t.grad(self);
        const Tensor& gain = t.value(gi);
        if (t.requires_grad(gi)) {
          Tensor& dg = t.grad_buffer(gi);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) dg.at(0, j) += dy.at(i, j) * normalized->at(i, j);
          }
        }
        if (t.requires_grad(bi)) {
          Tensor& db = t.grad_buffer(bi);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) db.at(0, j) += dy.at(i, j);
          }
        }
        if (t.requires_grad(xi)) {
          Tensor& dx = t.grad_buffer(xi);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = dy.at(i, j) * gain.at(0, j);
              mean_d += d;
              mean_dx += d * normalized->at(i, j);
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = dy.at(i, j) * gain.at(0, j);
              dx.at(i, j) += (*inv_std)[i] * (d - mean_d - normalized->at(i, j) * mean_dx);
            }
          }
        }
      });
}

Var gelu(Var x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const Tensor& v = checked(x, "gelu");
  Tensor out(v.shape(), 0.0);
  auto xd = v.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    const double z = xd[i];
    od[i] = 0.5 * z * (1.0 + std::tanh(kC * (z + kA * z * z * z)));
  }
  const std::size_t xi = x.index();
  return x.tape().record(std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    auto xd = t.value(xi).data();
    auto gx = t.grad_buffer(xi).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double z = xd[i];
      const double th = std::tanh(kC * (z + kA * z * z * z));
      const double d = 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * z * z);
      gx[i] += g[i] * d;
    }
  });
}

Var embedding(Var table, std::span<const std::int32_t> ids) {
  const Tensor& w = checked(table, "embedding");
  const std::size_t vocab = w.rows(), dim = w.cols();
  if (ids.empty()) fail(ErrorCode::kDimension, "embedding: empty id list");
  Tensor out({ids.size(), dim}, 0.0);
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      fail(ErrorCode::kDimension, "embedding: id " + std::to_string(ids[i]) + " out of range");
    }
    auto src = w.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t ti = table.index();
  return table.tape().record(std::move(out), {ti},
                             [ti, dim, saved = std::move(saved)](Tape& t, std::size_t self) {
                               const Tensor& g = t.grad(self);
                               Tensor& gw = t.grad_buffer(ti);
                               for (std::size_t i = 0; i < saved.size(); ++i) {
                                 const auto r = static_cast<std::size_t>(saved[i]);
                                 for (std::size_t j = 0; j < dim; ++j) gw.at(r, j) += g.at(i, j);
                               }
                             });
}

Var sum(Var x) {
  const Tensor& v = checked(x, "sum");
  double total = 0.0;
  for (double d : v.data()) total += d;
  const std::size_t xi = x.index();
  return x.tape().record(Tensor::scalar(total), {xi}, [xi](Tape& t, std::size_t self) {
    const double g = t.grad(self).item();
    for (double& d : t.grad_buffer(xi).data()) d += g;
  });
}

Var mean(Var x) {
  const Tensor& v = checked(x, "mean");
  const double count = static_cast<double>(v.numel());
  double total = 0.0;
  for (double d : v.data()) total += d;
  const std::size_t xi = x.index();
  return x.tape().record(Tensor::scalar(total / count), {xi}, [xi, count](Tape& t, std::size_t self) {
    const double g = t.grad(self).item() / count;
    for (double& d : t.grad_buffer(xi).data()) d += g;
  });
}

Var mean_rows(Var x) {
  const Tensor& v = checked(x, "mean_rows");
  const std::size_t m = v.rows(), n = v.cols();
  Tensor out({1, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(0, j) += v.at(i, j);
  }
  for (double& d : out.data()) d /= static_cast<double>(m);
  const std::size_t xi = x.index();
  return x.tape().record(std::move(out), {xi}, [xi, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(xi);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += g.at(0, j) * inv;
    }
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& v = checked(x, "slice_rows");
  if (count == 0 || begin + count > v.rows()) {
    fail(ErrorCode::kDimension, "slice_rows: range out of bounds for " + v.shape_string());
  }
  const std::size_t n = v.cols();
  std::vector<double> data(v.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                           v.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  const std::size_t xi = x.index();
  return x.tape().record(Tensor({count, n}, std::move(data)), {xi},
                         [xi, begin, n](Tape& t, std::size_t self) {
                           auto g = t.grad(self).data();
                           auto gx = t.grad_buffer(xi).data().subspan(begin * n, g.size());
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& v = checked(x, "slice_cols");
  if (count == 0 || begin + count > v.cols()) {
    fail(ErrorCode::kDimension, "slice_cols: range out of bounds for " + v.shape_string());
  }
  const std::size_t m = v.rows();
  Tensor out({m, count}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = v.at(i, begin + j);
  }
  const std::size_t xi = x.index();
  return x.tape().record(std::move(out), {xi}, [xi, begin, count, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < count; ++j) gx.at(i, begin + j) += g.at(i, j);
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& v = checked(x, "gather_rows");
  if (rows.empty()) fail(ErrorCode::kDimension, "gather_rows: empty row list");
  const std::size_t n = v.cols();
  Tensor out({rows.size(), n}, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= v.rows()) fail(ErrorCode::kDimension, "gather_rows: row out of range");
    auto src = v.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t xi = x.index();
  return x.tape().record(std::move(out), {xi},
                         [xi, n, saved = std::vector<std::size_t>(rows.begin(), rows.end())](
                             Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& gx = t.grad_buffer(xi);
                           for (std::size_t i = 0; i < saved.size(); ++i) {
                             for (std::size_t j = 0; j < n; ++j) gx.at(saved[i], j) += g.at(i, j);
                           }
                         });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::kDimension, "concat_rows: no inputs");
  const std::size_t n = checked(parts[0], "concat_rows").cols();
  std::size_t m = 0;
  std::vector<std::size_t> parents;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    same_tape(parts[0], p, "concat_rows");
    const Tensor& v = checked(p, "concat_rows");
    if (v.cols() != n) fail(ErrorCode::kDimension, "concat_rows: column mismatch");
    offsets.push_back(m);
    parents.push_back(p.index());
    m += v.rows();
  }
  std::vector<double> data;
  data.reserve(m * n);
  for (Var p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return parts[0].tape().record(Tensor({m, n}, std::move(data)), parents,
                                [parents, offsets, n](Tape& t, std::size_t self) {
                                  auto g = t.grad(self).data();
                                  for (std::size_t k = 0; k < parents.size(); ++k) {
                                    if (!t.requires_grad(parents[k])) continue;
                                    auto gx = t.grad_buffer(parents[k]).data();
                                    auto src = g.subspan(offsets[k] * n, gx.size());
                                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += src[i];
                                  }
                                });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::kDimension, "concat_cols: no inputs");
  const std::size_t m = checked(parts[0], "concat_cols").rows();
  std::size_t n = 0;
  std::vector<std::size_t> parents;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    same_tape(parts[0], p, "concat_cols");
    const Tensor& v = checked(p, "concat_cols");
    if (v.rows() != m) fail(ErrorCode::kDimension, "concat_cols: row mismatch");
    offsets.push_back(n);
    widths.push_back(v.cols());
    parents.push_back(p.index());
    n += v.cols();
  }
  Tensor out({m, n}, 0.0);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, offsets[k] + j) = v.at(i, j);
    }
  }
  return parts[0].tape().record(std::move(out), parents,
                                [parents, offsets, widths, m](Tape& t, std::size_t self) {
                                  const Tensor& g = t.grad(self);
                                  for (std::size_t k = 0; k < parents.size(); ++k) {
                                    if (!t.requires_grad(parents[k])) continue;
                                    Tensor& gx = t.grad_buffer(parents[k]);
                                    for (std::size_t i = 0; i < m; ++i) {
                                      for (std::size_t j = 0; j < widths[k]; ++j) {
                                        gx.at(i, j) += g.at(i, offsets[k] + j);
                                      }
                                    }
                                  }
                                });
}

Var cross_entropy_rows(Var logits, std::span<const std::int32_t> targets) {
  const Tensor& z = checked(logits, "cross_entropy_rows");
  const std::size_t m = z.rows(), n = z.cols();
  if (targets.size() != m) fail(ErrorCode::kDimension, "cross_entropy_rows: one target per row required");
  auto probs = std::make_shared<Tensor>(std::vector<std::size_t>{m, n}, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= n) {
      fail(ErrorCode::kDimension, "cross_entropy_rows: target out of range");
    }
    double hi = z.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) hi = std::max(hi, z.at(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(z.at(i, j) - hi);
      probs->at(i, j) = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) probs->at(i, j) /= total;
    loss += hi + std::log(total) - z.at(i, static_cast<std::size_t>(targets[i]));
  }
  loss /= static_cast<double>(m);
  const std::size_t zi = logits.index();
  return logits.tape().record(
      Tensor::scalar(loss), {zi},
      [zi, m, n, probs, saved = std::vector<std::int32_t>(targets.begin(), targets.end())](
          Tape& t, std::size_t self) {
        const double g = t.grad(self).item() / static_cast<double>(m);
        Tensor& gz = t.grad_buffer(zi);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gz.at(i, j) += g * probs->at(i, j);
          gz.at(i, static_cast<std::size_t>(saved[i])) -= g;
        }
      });
}

}  // namespace ops
}  // namespace newsret
