#include "mxq/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mxq::ops {
namespace {

enum class Broadcast { Same, ScalarRhs, RowRhs, ScalarLhs, RowLhs };

bool is_row_of(const Tensor& small, const Tensor& big) {
  return small.rank() == 1 && big.rank() >= 1 && small.dim(0) == big.shape().back();
}

Broadcast resolve(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.numel() == 1) return Broadcast::ScalarRhs;
  if (a.numel() == 1) return Broadcast::ScalarLhs;
  if (is_row_of(b, a)) return Broadcast::RowRhs;
  if (is_row_of(a, b)) return Broadcast::RowLhs;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

// Index of the operand element that pairs with output element i.
struct Indexer {
  Broadcast mode;
  std::size_t row_len;
  std::size_t lhs(std::size_t i) const {
    switch (mode) {
      case Broadcast::ScalarLhs: return 0;
      case Broadcast::RowLhs: return i % row_len;
      default: return i;
    }
  }
  std::size_t rhs(std::size_t i) const {
    switch (mode) {
      case Broadcast::ScalarRhs: return 0;
      case Broadcast::RowRhs: return i % row_len;
      default: return i;
    }
  }
};

template <typename Fwd, typename DLhs, typename DRhs>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, DLhs dlhs, DRhs drhs) {
  const Broadcast mode = resolve(name, a, b);
  const bool lhs_big = mode == Broadcast::Same || mode == Broadcast::ScalarRhs ||
                       mode == Broadcast::RowRhs;
  const Shape out_shape = lhs_big ? a.shape() : b.shape();
  const std::size_t n = numel_of(out_shape);
  const Indexer ix{mode, out_shape.back()};
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[ix.lhs(i)], bv[ix.rhs(i)]);

  std::vector<double> a_saved(av.begin(), av.end());
  std::vector<double> b_saved(bv.begin(), bv.end());
  return Tensor::make_result(
      out_shape, std::move(out), name, {a, b},
      [ix, n, a_saved = std::move(a_saved), b_saved = std::move(b_saved), dlhs, drhs](
          std::span<const double> g, std::span<std::vector<double>*> grads) {
        if (auto* ga = grads[0]) {
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ia = ix.lhs(i);
            (*ga)[ia] += g[i] * dlhs(a_saved[ia], b_saved[ix.rhs(i)]);
          }
        }
        if (auto* gb = grads[1]) {
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ib = ix.rhs(i);
            (*gb)[ib] += g[i] * drhs(a_saved[ix.lhs(i)], b_saved[ib]);
          }
        }
      });
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  std::vector<double> saved(xv.begin(), xv.end());
  std::vector<double> out_saved = out;
  return Tensor::make_result(
      x.shape(), std::move(out), name, {x},
      [saved = std::move(saved), out_saved = std::move(out_saved), deriv](
          std::span<const double> g, std::span<std::vector<double>*> grads) {
        auto& gx = *grads[0];
        for (std::size_t i = 0; i < saved.size(); ++i) gx[i] += g[i] * deriv(saved[i], out_saved[i]);
      });
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_constant(const Tensor& a, double value) {
  return unary(
      "add_constant", a, [value](double x) { return x + value; },
      [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  // Operands are saved by handle; leaf weights must not be mutated before backward.
  auto a_impl = a.impl();
  auto b_impl = b.impl();
  return Tensor::make_result(
      {m, n}, std::move(out), "matmul", {a, b},
      [a_impl, b_impl, m, k, n](std::span<const double> g, std::span<std::vector<double>*> grads) {
        if (auto* ga = grads[0]) gemm_nt(g.data(), b_impl->data.data(), ga->data(), m, n, k);
        if (auto* gb = grads[1]) gemm_tn(a_impl->data.data(), g.data(), gb->data(), m, k, n);
      });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto av = a.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return Tensor::make_result({c, r}, std::move(out), "transpose", {a},
                             [r, c](std::span<const double> g, std::span<std::vector<double>*> grads) {
                               auto& ga = *grads[0];
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                             });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto av = a.data();
  return Tensor::make_result(std::move(shape), std::vector<double>(av.begin(), av.end()),
                             "reshape", {a},
                             [](std::span<const double> g, std::span<std::vector<double>*> grads) {
                               auto& ga = *grads[0];
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank() || begin >= end || end > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape()));
  }
  const Shape& in = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
  for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
  const std::size_t len = end - begin, full = in[axis];
  Shape out_shape = in;
  out_shape[axis] = len;
  auto av = a.data();
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.begin() + (o * full + begin) * inner, len * inner,
                out.begin() + o * len * inner);
  return Tensor::make_result(
      std::move(out_shape), std::move(out), "slice", {a},
      [outer, inner, len, full, begin](std::span<const double> g,
                                       std::span<std::vector<double>*> grads) {
        auto& ga = *grads[0];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < len * inner; ++i)
            ga[(o * full + begin) * inner + i] += g[o * len * inner + i];
      });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch at " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " +
                         shape_str(first));
      }
    }
    lens.push_back(s[axis]);
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pv = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * lens[p] * inner, lens[p] * inner,
                  out.begin() + (o * total + offset) * inner);
    offset += lens[p];
  }
  return Tensor::make_result(
      std::move(out_shape), std::move(out), "concat", parts,
      [outer, inner, total, lens](std::span<const double> g,
                                  std::span<std::vector<double>*> grads) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < lens.size(); ++p) {
          if (auto* gp = grads[p]) {
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < lens[p] * inner; ++i)
                (*gp)[o * lens[p] * inner + i] += g[(o * total + offset) * inner + i];
          }
          offset += lens[p];
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match last dim of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  std::vector<double> xhat(x.numel()), inv_std(rows), out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mean) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  std::vector<double> g_saved(gv.begin(), gv.end());
  return Tensor::make_result(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std),
       g_saved = std::move(g_saved)](std::span<const double> g,
                                     std::span<std::vector<double>*> grads) {
        for (std::size_t r = 0; r < rows; ++r) {
          const double* grow = g.data() + r * d;
          const double* xh = xhat.data() + r * d;
          if (auto* gg = grads[1])
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += grow[j] * xh[j];
          if (auto* gb = grads[2])
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += grow[j];
          if (auto* gx = grads[0]) {
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dy = grow[j] * g_saved[j];
              sum_dy += dy;
              sum_dy_xh += dy * xh[j];
            }
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dy = grow[j] * g_saved[j];
              (*gx)[r * d + j] += inv_std[r] * (dy - inv_d * sum_dy - xh[j] * inv_d * sum_dy_xh);
            }
          }
        }
      });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (out[r * d + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= z;
  }
  std::vector<double> y = out;
  return Tensor::make_result(
      x.shape(), std::move(out), "softmax", {x},
      [rows, d, y = std::move(y)](std::span<const double> g, std::span<std::vector<double>*> grads) {
        auto& gx = *grads[0];
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
          for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
        }
      });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("log_softmax: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = row[j] - lse;
  }
  std::vector<double> y = out;
  return Tensor::make_result(
      x.shape(), std::move(out), "log_softmax", {x},
      [rows, d, y = std::move(y)](std::span<const double> g, std::span<std::vector<double>*> grads) {
        auto& gx = *grads[0];
        for (std::size_t r = 0; r < rows; ++r) {
          double sum = 0.0;
          for (std::size_t j = 0; j < d; ++j) sum += g[r * d + j];
          for (std::size_t j = 0; j < d; ++j)
            gx[r * d + j] += g[r * d + j] - std::exp(y[r * d + j]) * sum;
        }
      });
}

Tensor gelu(const Tensor& x) {
  return unary(
      "gelu", x,
      [](double v) {
        return 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kGeluCubic * v * v * v)));
      },
      [](double v, double) {
        const double u = kSqrt2OverPi * (v + kGeluCubic * v * v * v);
        const double t = std::tanh(u);
        const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor reduce_sum(const Tensor& x) {
  auto xv = x.data();
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return Tensor::make_result({1}, {s}, "reduce_sum", {x},
                             [](std::span<const double> g, std::span<std::vector<double>*> grads) {
                               for (double& v : *grads[0]) v += g[0];
                             });
}

Tensor reduce_mean(const Tensor& x) {
  auto xv = x.data();
  const double n = static_cast<double>(xv.size());
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0) / n;
  return Tensor::make_result({1}, {s}, "reduce_mean", {x},
                             [n](std::span<const double> g, std::span<std::vector<double>*> grads) {
                               for (double& v : *grads[0]) v += g[0] / n;
                             });
}

Tensor stop_gradient(const Tensor& x) {
  auto xv = x.data();
  return Tensor(x.shape(), std::vector<double>(xv.begin(), xv.end()));
}

}  // namespace mxq::ops
