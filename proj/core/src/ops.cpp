// SPDX-License-Identifier: Apache-2.0
#include "siga/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Core>

#include "siga/errors.hpp"

namespace siga {

namespace {

using detail::Node;

bool tracking(std::initializer_list<const Tensor*> ins) {
  if (!grad_mode_enabled()) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor emit(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> ins,
            Tape::BackwardFn fn) {
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  if (tracking(ins)) {
    std::vector<detail::NodePtr> nodes;
    nodes.reserve(ins.size());
    for (const Tensor* t : ins) nodes.push_back(t->node());
    active_tape().record(out.node(), std::move(nodes), std::move(fn));
  }
  return out;
}

Tensor emit_many(Shape shape, std::vector<double> data, std::span<const Tensor> ins,
                 Tape::BackwardFn fn) {
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  bool any = false;
  for (const Tensor& t : ins) any = any || t.requires_grad();
  if (grad_mode_enabled() && any) {
    std::vector<detail::NodePtr> nodes;
    for (const Tensor& t : ins) nodes.push_back(t.node());
    active_tape().record(out.node(), std::move(nodes), std::move(fn));
  }
  return out;
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(x.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     to_string(s));
  }
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

template <class F, class G>
Tensor unary(const Tensor& x, F&& f, G&& dfdx_from_xy) {
  auto xs = x.data();
  std::vector<double> y(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) y[i] = f(xs[i]);
  Node* xn = x.node().get();
  return emit(x.shape(), std::move(y), {&x}, [xn, dfdx_from_xy](Node& out) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      xn->grad[i] += out.grad[i] * dfdx_from_xy(xn->data[i], out.data[i]);
    }
  });
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  Map(c, M, N).noalias() += MapC(a, M, K) * MapC(b, K, N);
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  Map(c, M, N).noalias() += MapC(a, M, K) * MapC(b, N, K).transpose();
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  Map(c, K, N).noalias() += MapC(a, M, K).transpose() * MapC(b, M, N);
}

// Columns of 3x3 zero-padded neighbourhoods: col[(ci*9 + ky*3 + kx), r*W + c].
void im2col3x3(const double* x, std::size_t Ci, std::size_t H, std::size_t W, double* col) {
  const std::size_t P = H * W;
  for (std::size_t ci = 0; ci < Ci; ++ci) {
    const double* ip = x + ci * P;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = col + (ci * 9 + static_cast<std::size_t>(ky * 3 + kx)) * P;
        const int dy = ky - 1, dx = kx - 1;
        for (std::size_t r = 0; r < H; ++r) {
          const long sr = static_cast<long>(r) + dy;
          double* drow = dst + r * W;
          if (sr < 0 || sr >= static_cast<long>(H)) {
            std::fill(drow, drow + W, 0.0);
            continue;
          }
          const double* srow = ip + static_cast<std::size_t>(sr) * W;
          for (std::size_t c = 0; c < W; ++c) {
            const long sc = static_cast<long>(c) + dx;
            drow[c] = (sc < 0 || sc >= static_cast<long>(W)) ? 0.0 : srow[sc];
          }
        }
      }
    }
  }
}

void col2im3x3(const double* col, std::size_t Ci, std::size_t H, std::size_t W, double* gx) {
  const std::size_t P = H * W;
  for (std::size_t ci = 0; ci < Ci; ++ci) {
    double* gp = gx + ci * P;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = col + (ci * 9 + static_cast<std::size_t>(ky * 3 + kx)) * P;
        const int dy = ky - 1, dx = kx - 1;
        for (std::size_t r = 0; r < H; ++r) {
          const long sr = static_cast<long>(r) + dy;
          if (sr < 0 || sr >= static_cast<long>(H)) continue;
          double* grow = gp + static_cast<std::size_t>(sr) * W;
          const double* srow = src + r * W;
          const std::size_t c0 = dx < 0 ? 1 : 0;
          const std::size_t c1 = dx > 0 ? W - 1 : W;
          for (std::size_t c = c0; c < c1; ++c) grow[static_cast<long>(c) + dx] += srow[c];
        }
      }
    }
  }
}

}  // namespace

bool all_finite(const Tensor& x) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  auto as = a.data(), bs = b.data();
  std::vector<double> y(as.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = as[i] + bs[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return emit(a.shape(), std::move(y), {&a, &b}, [an, bn](Node& out) {
    for (Node* n : {an, bn}) {
      if (!n->requires_grad) continue;
      for (std::size_t i = 0; i < out.grad.size(); ++i) n->grad[i] += out.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  auto as = a.data(), bs = b.data();
  std::vector<double> y(as.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = as[i] - bs[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return emit(a.shape(), std::move(y), {&a, &b}, [an, bn](Node& out) {
    if (an->requires_grad) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
    }
    if (bn->requires_grad) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] -= out.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  auto as = a.data(), bs = b.data();
  std::vector<double> y(as.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = as[i] * bs[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return emit(a.shape(), std::move(y), {&a, &b}, [an, bn](Node& out) {
    if (an->requires_grad) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] += out.grad[i] * an->data[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same(a, b, "div");
  auto as = a.data(), bs = b.data();
  std::vector<double> y(as.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = as[i] / bs[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return emit(a.shape(), std::move(y), {&a, &b}, [an, bn](Node& out) {
    if (an->requires_grad) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i] / bn->data[i];
    }
    if (bn->requires_grad) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) {
        bn->grad[i] -= out.grad[i] * out.data[i] / bn->data[i];
      }
    }
  });
}

Tensor affine(const Tensor& x, double a, double b) {
  auto xs = x.data();
  std::vector<double> y(xs.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a * xs[i] + b;
  Node* xn = x.node().get();
  return emit(x.shape(), std::move(y), {&x}, [xn, a](Node& out) {
    for (std::size_t i = 0; i < out.grad.size(); ++i) xn->grad[i] += a * out.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool shared_rhs = false;
  Shape out_shape;
  if (a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0)) {
    m = a.dim(0), k = a.dim(1), n = b.dim(1);
    out_shape = {m, n};
    shared_rhs = true;
  } else if (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1)) {
    batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    out_shape = {batch, m, n};
  } else if (a.rank() == 3 && b.rank() == 2 && a.dim(2) == b.dim(0)) {
    batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    out_shape = {batch, m, n};
    shared_rhs = true;
  } else {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  std::vector<double> y(batch * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  const std::size_t bstride = shared_rhs ? 0 : k * n;
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(ad + s * m * k, bd + s * bstride, y.data() + s * m * n, m, k, n);
  }
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return emit(std::move(out_shape), std::move(y), {&a, &b},
              [an, bn, batch, m, k, n, bstride](Node& out) {
                for (std::size_t s = 0; s < batch; ++s) {
                  const double* g = out.grad.data() + s * m * n;
                  if (an->requires_grad) {
                    gemm_nt(g, bn->data.data() + s * bstride, an->grad.data() + s * m * k, m, n,
                            k);
                  }
                  if (bn->requires_grad) {
                    gemm_tn(an->data.data() + s * m * k, g, bn->grad.data() + s * bstride, m, k,
                            n);
                  }
                }
              });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 4, "conv2d");
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (w.rank() != 4 || w.dim(1) != Ci || w.dim(2) != 3 || w.dim(3) != 3) {
    throw ShapeError("conv2d: weight " + to_string(w.shape()) + " incompatible with input " +
                     to_string(x.shape()));
  }
  const std::size_t Co = w.dim(0);
  if (bias.shape() != Shape{Co}) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " vs weight " +
                     to_string(w.shape()));
  }
  const std::size_t P = H * W, K = Ci * 9;
  std::vector<double> y(B * Co * P);
  std::vector<double> col(K * P);
  const double* wd = w.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    double* yb = y.data() + b * Co * P;
    for (std::size_t co = 0; co < Co; ++co) std::fill(yb + co * P, yb + (co + 1) * P, bias[co]);
    im2col3x3(x.data().data() + b * Ci * P, Ci, H, W, col.data());
    gemm_nn(wd, col.data(), yb, Co, K, P);
  }

  Node* xn = x.node().get();
  Node* wn = w.node().get();
  Node* bn = bias.node().get();
  return emit({B, Co, H, W}, std::move(y), {&x, &w, &bias},
              [xn, wn, bn, B, Ci, Co, H, W, P, K](Node& out) {
                std::vector<double> col(K * P);
                for (std::size_t b = 0; b < B; ++b) {
                  const double* g = out.grad.data() + b * Co * P;
                  if (bn->requires_grad) {
                    for (std::size_t co = 0; co < Co; ++co) {
                      double s = 0.0;
                      for (std::size_t i = 0; i < P; ++i) s += g[co * P + i];
                      bn->grad[co] += s;
                    }
                  }
                  if (wn->requires_grad) {
                    im2col3x3(xn->data.data() + b * Ci * P, Ci, H, W, col.data());
                    gemm_nt(g, col.data(), wn->grad.data(), Co, P, K);
                  }
                  if (xn->requires_grad) {
                    std::fill(col.begin(), col.end(), 0.0);
                    gemm_tn(wn->data.data(), g, col.data(), Co, K, P);
                    col2im3x3(col.data(), Ci, H, W, xn->grad.data() + b * Ci * P);
                  }
                }
              });
}

Tensor conv2d_1x1(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 4, "conv2d_1x1");
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (w.rank() != 2 || w.dim(1) != Ci) {
    throw ShapeError("conv2d_1x1: weight " + to_string(w.shape()) + " incompatible with input " +
                     to_string(x.shape()));
  }
  const std::size_t Co = w.dim(0);
  if (bias.shape() != Shape{Co}) {
    throw ShapeError("conv2d_1x1: bias " + to_string(bias.shape()) + " vs weight " +
                     to_string(w.shape()));
  }
  const std::size_t P = H * W;
  std::vector<double> y(B * Co * P);
  for (std::size_t b = 0; b < B; ++b) {
    double* yb = y.data() + b * Co * P;
    for (std::size_t co = 0; co < Co; ++co) std::fill(yb + co * P, yb + (co + 1) * P, bias[co]);
    gemm_nn(w.data().data(), x.data().data() + b * Ci * P, yb, Co, Ci, P);
  }
  Node* xn = x.node().get();
  Node* wn = w.node().get();
  Node* bn = bias.node().get();
  return emit({B, Co, H, W}, std::move(y), {&x, &w, &bias},
              [xn, wn, bn, B, Ci, Co, P](Node& out) {
                for (std::size_t b = 0; b < B; ++b) {
                  const double* g = out.grad.data() + b * Co * P;
                  if (bn->requires_grad) {
                    for (std::size_t co = 0; co < Co; ++co) {
                      double s = 0.0;
                      for (std::size_t i = 0; i < P; ++i) s += g[co * P + i];
                      bn->grad[co] += s;
                    }
                  }
                  if (wn->requires_grad) {
                    gemm_nt(g, xn->data.data() + b * Ci * P, wn->grad.data(), Co, P, Ci);
                  }
                  if (xn->requires_grad) {
                    gemm_tn(wn->data.data(), g, xn->grad.data() + b * Ci * P, Co, Ci, P);
                  }
                }
              });
}

Tensor avg_pool(const Tensor& x, std::size_t fh, std::size_t fw) {
  if (x.rank() < 2 || fh == 0 || fw == 0) throw ShapeError("avg_pool: bad input " + to_string(x.shape()));
  const Shape& s = x.shape();
  const std::size_t H = s[s.size() - 2], W = s[s.size() - 1];
  if (H % fh != 0 || W % fw != 0) {
    throw ShapeError("avg_pool: " + to_string(s) + " not divisible by " + std::to_string(fh) +
                     "x" + std::to_string(fw));
  }
  const std::size_t Ho = H / fh, Wo = W / fw;
  const std::size_t planes = x.numel() / (H * W);
  Shape os = s;
  os[os.size() - 2] = Ho;
  os[os.size() - 1] = Wo;
  const double inv = 1.0 / static_cast<double>(fh * fw);
  std::vector<double> y(planes * Ho * Wo, 0.0);
  auto xs = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        y[(p * Ho + r / fh) * Wo + c / fw] += xs[(p * H + r) * W + c] * inv;
      }
    }
  }
  Node* xn = x.node().get();
  return emit(std::move(os), std::move(y), {&x}, [xn, planes, H, W, Ho, Wo, fh, fw, inv](Node& out) {
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
          xn->grad[(p * H + r) * W + c] += out.grad[(p * Ho + r / fh) * Wo + c / fw] * inv;
        }
      }
    }
  });
}

Tensor upsample_nearest_2x(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("upsample_nearest_2x: bad input " + to_string(x.shape()));
  const Shape& s = x.shape();
  const std::size_t H = s[s.size() - 2], W = s[s.size() - 1];
  const std::size_t planes = x.numel() / (H * W);
  Shape os = s;
  os[os.size() - 2] = 2 * H;
  os[os.size() - 1] = 2 * W;
  std::vector<double> y(planes * 4 * H * W);
  auto xs = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t r = 0; r < 2 * H; ++r) {
      for (std::size_t c = 0; c < 2 * W; ++c) {
        y[(p * 2 * H + r) * 2 * W + c] = xs[(p * H + r / 2) * W + c / 2];
      }
    }
  }
  Node* xn = x.node().get();
  return emit(std::move(os), std::move(y), {&x}, [xn, planes, H, W](Node& out) {
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t r = 0; r < 2 * H; ++r) {
        for (std::size_t c = 0; c < 2 * W; ++c) {
          xn->grad[(p * H + r / 2) * W + c / 2] += out.grad[(p * 2 * H + r) * 2 * W + c];
        }
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit a = split_axis(x.shape(), axis, "softmax");
  auto xs = x.data();
  std::vector<double> y(xs.size());
  for (std::size_t o = 0; o < a.outer; ++o) {
    for (std::size_t i = 0; i < a.inner; ++i) {
      const std::size_t base = o * a.n * a.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < a.n; ++k) mx = std::max(mx, xs[base + k * a.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < a.n; ++k) {
        const double e = std::exp(xs[base + k * a.inner] - mx);
        y[base + k * a.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < a.n; ++k) y[base + k * a.inner] /= z;
    }
  }
  Node* xn = x.node().get();
  return emit(x.shape(), std::move(y), {&x}, [xn, a](Node& out) {
    for (std::size_t o = 0; o < a.outer; ++o) {
      for (std::size_t i = 0; i < a.inner; ++i) {
        const std::size_t base = o * a.n * a.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < a.n; ++k) {
          dot += out.grad[base + k * a.inner] * out.data[base + k * a.inner];
        }
        for (std::size_t k = 0; k < a.n; ++k) {
          const std::size_t j = base + k * a.inner;
          xn->grad[j] += out.data[j] * (out.grad[j] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit a = split_axis(x.shape(), axis, "log_softmax");
  auto xs = x.data();
  std::vector<double> y(xs.size());
  for (std::size_t o = 0; o < a.outer; ++o) {
    for (std::size_t i = 0; i < a.inner; ++i) {
      const std::size_t base = o * a.n * a.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < a.n; ++k) mx = std::max(mx, xs[base + k * a.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < a.n; ++k) z += std::exp(xs[base + k * a.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < a.n; ++k) y[base + k * a.inner] = xs[base + k * a.inner] - lse;
    }
  }
  Node* xn = x.node().get();
  return emit(x.shape(), std::move(y), {&x}, [xn, a](Node& out) {
    for (std::size_t o = 0; o < a.outer; ++o) {
      for (std::size_t i = 0; i < a.inner; ++i) {
        const std::size_t base = o * a.n * a.inner + i;
        double gsum = 0.0;
        for (std::size_t k = 0; k < a.n; ++k) gsum += out.grad[base + k * a.inner];
        for (std::size_t k = 0; k < a.n; ++k) {
          const std::size_t j = base + k * a.inner;
          xn->grad[j] += out.grad[j] - std::exp(out.data[j]) * gsum;
        }
      }
    }
  });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  const AxisSplit a = split_axis(x.shape(), axis, "sum");
  Shape os = x.shape();
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  auto xs = x.data();
  std::vector<double> y(a.outer * a.inner, 0.0);
  for (std::size_t o = 0; o < a.outer; ++o) {
    for (std::size_t k = 0; k < a.n; ++k) {
      for (std::size_t i = 0; i < a.inner; ++i) {
        y[o * a.inner + i] += xs[(o * a.n + k) * a.inner + i];
      }
    }
  }
  Node* xn = x.node().get();
  return emit(std::move(os), std::move(y), {&x}, [xn, a](Node& out) {
    for (std::size_t o = 0; o < a.outer; ++o) {
      for (std::size_t k = 0; k < a.n; ++k) {
        for (std::size_t i = 0; i < a.inner; ++i) {
          xn->grad[(o * a.n + k) * a.inner + i] += out.grad[o * a.inner + i];
        }
      }
    }
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const double n = static_cast<double>(split_axis(x.shape(), axis, "mean").n);
  return scale(sum(x, axis), 1.0 / n);
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Node* xn = x.node().get();
  return emit({}, {s}, {&x}, [xn](Node& out) {
    const double g = out.grad[0];
    for (double& v : xn->grad) v += g;
  });
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean_all of empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor concat(std::span<const Tensor> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + to_string(s0));
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& t : xs) {
    const Shape& s = t.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == s0[d];
    if (!ok) {
      throw ShapeError("concat: shape mismatch " + to_string(s0) + " vs " + to_string(s));
    }
    widths.push_back(s[axis]);
    total += s[axis];
  }
  const AxisSplit a = split_axis(s0, axis, "concat");
  Shape os = s0;
  os[axis] = total;
  std::vector<double> y(a.outer * total * a.inner);
  std::size_t offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    auto src = xs[t].data();
    const std::size_t chunk = widths[t] * a.inner;
    for (std::size_t o = 0; o < a.outer; ++o) {
      std::copy_n(src.data() + o * chunk, chunk, y.data() + o * total * a.inner + offset);
    }
    offset += chunk;
  }
  std::vector<Node*> nodes;
  for (const Tensor& t : xs) nodes.push_back(t.node().get());
  return emit_many(std::move(os), std::move(y), xs, [nodes, widths, a, total](Node& out) {
    std::size_t offset = 0;
    for (std::size_t t = 0; t < nodes.size(); ++t) {
      const std::size_t chunk = widths[t] * a.inner;
      if (nodes[t]->requires_grad) {
        for (std::size_t o = 0; o < a.outer; ++o) {
          const double* g = out.grad.data() + o * total * a.inner + offset;
          double* d = nodes[t]->grad.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) d[i] += g[i];
        }
      }
      offset += chunk;
    }
  });
}

Tensor concat(std::initializer_list<Tensor> xs, std::size_t axis) {
  return concat(std::span<const Tensor>(xs.begin(), xs.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end) {
  const AxisSplit a = split_axis(x.shape(), axis, "slice");
  if (start > end || end > a.n) {
    throw ShapeError("slice: [" + std::to_string(start) + "," + std::to_string(end) +
                     ") out of range for " + to_string(x.shape()) + " axis " +
                     std::to_string(axis));
  }
  Shape os = x.shape();
  os[axis] = end - start;
  const std::size_t chunk = (end - start) * a.inner;
  std::vector<double> y(a.outer * chunk);
  auto xs = x.data();
  for (std::size_t o = 0; o < a.outer; ++o) {
    std::copy_n(xs.data() + (o * a.n + start) * a.inner, chunk, y.data() + o * chunk);
  }
  Node* xn = x.node().get();
  return emit(std::move(os), std::move(y), {&x}, [xn, a, start, chunk](Node& out) {
    for (std::size_t o = 0; o < a.outer; ++o) {
      double* d = xn->grad.data() + (o * a.n + start) * a.inner;
      const double* g = out.grad.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) d[i] += g[i];
    }
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  const Shape& s = x.shape();
  if (s.size() > shape.size()) {
    throw ShapeError("broadcast: cannot broadcast " + to_string(s) + " to " + to_string(shape));
  }
  const std::size_t lead = shape.size() - s.size();
  std::vector<std::size_t> src_stride(shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t d = s.size(); d-- > 0;) {
    const std::size_t td = d + lead;
    if (s[d] == shape[td]) {
      src_stride[td] = s[d] == 1 ? 0 : stride;
    } else if (s[d] != 1) {
      throw ShapeError("broadcast: cannot broadcast " + to_string(s) + " to " + to_string(shape));
    }
    stride *= s[d];
  }
  const std::size_t total = numel(shape);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(shape.size(), 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < total; ++i) {
    map[i] = src;
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) {
        src += src_stride[d];
        break;
      }
      src -= src_stride[d] * (shape[d] - 1);
      idx[d] = 0;
    }
  }
  auto xs = x.data();
  std::vector<double> y(total);
  for (std::size_t i = 0; i < total; ++i) y[i] = xs[map[i]];
  Node* xn = x.node().get();
  return emit(shape, std::move(y), {&x}, [xn, map = std::move(map)](Node& out) {
    for (std::size_t i = 0; i < map.size(); ++i) xn->grad[map[i]] += out.grad[i];
  });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " to " + to_string(shape));
  }
  std::vector<double> y(x.data().begin(), x.data().end());
  Node* xn = x.node().get();
  return emit(shape, std::move(y), {&x}, [xn](Node& out) {
    for (std::size_t i = 0; i < out.grad.size(); ++i) xn->grad[i] += out.grad[i];
  });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> perm) {
  const Shape& s = x.shape();
  if (perm.size() != s.size()) {
    throw ShapeError("permute: rank mismatch for " + to_string(s));
  }
  std::vector<bool> seen(s.size(), false);
  for (std::size_t p : perm) {
    if (p >= s.size() || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(s.size());
  std::size_t st = 1;
  for (std::size_t d = s.size(); d-- > 0;) {
    in_stride[d] = st;
    st *= s[d];
  }
  Shape os(s.size());
  std::vector<std::size_t> step(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) {
    os[d] = s[perm[d]];
    step[d] = in_stride[perm[d]];
  }
  const std::size_t total = x.numel();
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(s.size(), 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < total; ++i) {
    map[i] = src;
    for (std::size_t d = os.size(); d-- > 0;) {
      if (++idx[d] < os[d]) {
        src += step[d];
        break;
      }
      src -= step[d] * (os[d] - 1);
      idx[d] = 0;
    }
  }
  auto xs = x.data();
  std::vector<double> y(total);
  for (std::size_t i = 0; i < total; ++i) y[i] = xs[map[i]];
  Node* xn = x.node().get();
  return emit(std::move(os), std::move(y), {&x}, [xn, map = std::move(map)](Node& out) {
    for (std::size_t i = 0; i < map.size(); ++i) xn->grad[map[i]] += out.grad[i];
  });
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> perm) {
  return permute(x, std::span<const std::size_t>(perm.begin(), perm.size()));
}

Tensor linear_interp_1d(const Tensor& x, std::size_t width) {
  if (x.rank() < 1 || width == 0) throw ShapeError("linear_interp_1d: bad input");
  const std::size_t N = x.shape().back();
  if (N == 0) throw ShapeError("linear_interp_1d: empty last axis");
  const std::size_t rows = x.numel() / N;
  std::vector<std::size_t> i0(width), i1(width);
  std::vector<double> frac(width);
  for (std::size_t j = 0; j < width; ++j) {
    const double pos = (width == 1 || N == 1)
                           ? 0.0
                           : static_cast<double>(j) * static_cast<double>(N - 1) /
                                 static_cast<double>(width - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    if (lo > N - 1) lo = N - 1;
    i0[j] = lo;
    i1[j] = std::min(lo + 1, N - 1);
    frac[j] = pos - static_cast<double>(lo);
  }
  Shape os = x.shape();
  os.back() = width;
  auto xs = x.data();
  std::vector<double> y(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xs.data() + r * N;
    for (std::size_t j = 0; j < width; ++j) {
      y[r * width + j] = (1.0 - frac[j]) * src[i0[j]] + frac[j] * src[i1[j]];
    }
  }
  Node* xn = x.node().get();
  return emit(std::move(os), std::move(y), {&x}, [xn, rows, N, width, i0, i1, frac](Node& out) {
    for (std::size_t r = 0; r < rows; ++r) {
      double* g = xn->grad.data() + r * N;
      for (std::size_t j = 0; j < width; ++j) {
        const double go = out.grad[r * width + j];
        g[i0[j]] += (1.0 - frac[j]) * go;
        g[i1[j]] += frac[j] * go;
      }
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> indices) {
  require_rank(table, 2, "embedding_lookup");
  const std::size_t V = table.dim(0), E = table.dim(1);
  std::vector<double> y(indices.size() * E);
  auto ts = table.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || static_cast<std::size_t>(indices[r]) >= V) {
      throw ContractError("embedding_lookup: index " + std::to_string(indices[r]) +
                          " outside vocabulary of " + std::to_string(V));
    }
    std::copy_n(ts.data() + static_cast<std::size_t>(indices[r]) * E, E, y.data() + r * E);
  }
  Node* tn = table.node().get();
  std::vector<int> idx(indices.begin(), indices.end());
  return emit({indices.size(), E}, std::move(y), {&table}, [tn, idx, E](Node& out) {
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* g = tn->grad.data() + static_cast<std::size_t>(idx[r]) * E;
      for (std::size_t e = 0; e < E; ++e) g[e] += out.grad[r * E + e];
    }
  });
}

Tensor gather_last(const Tensor& x, std::span<const int> indices) {
  if (x.rank() < 1) throw ShapeError("gather_last: scalar input");
  const std::size_t K = x.shape().back();
  const std::size_t rows = x.numel() / K;
  if (indices.size() != rows) {
    throw ShapeError("gather_last: " + std::to_string(indices.size()) + " indices for " +
                     to_string(x.shape()));
  }
  Shape os = x.shape();
  os.pop_back();
  std::vector<double> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (indices[r] < 0 || static_cast<std::size_t>(indices[r]) >= K) {
      throw ContractError("gather_last: index " + std::to_string(indices[r]) + " out of range");
    }
    y[r] = x.data()[r * K + static_cast<std::size_t>(indices[r])];
  }
  Node* xn = x.node().get();
  std::vector<int> idx(indices.begin(), indices.end());
  return emit(std::move(os), std::move(y), {&x}, [xn, idx, K](Node& out) {
    for (std::size_t r = 0; r < idx.size(); ++r) {
      xn->grad[r * K + static_cast<std::size_t>(idx[r])] += out.grad[r];
    }
  });
}

Tensor channel_standardize(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                           const ChannelStats* fixed, ChannelStats* observed) {
  require_rank(x, 4, "channel_standardize");
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw ShapeError("channel_standardize: scale/shift " + to_string(gamma.shape()) + "/" +
                     to_string(beta.shape()) + " vs input " + to_string(x.shape()));
  }
  if (fixed && (fixed->mean.size() != C || fixed->var.size() != C)) {
    throw ShapeError("channel_standardize: fixed statistics size mismatch");
  }
  auto xs = x.data();
  const double n = static_cast<double>(B * P);
  std::vector<double> inv_std(C);
  std::vector<double> xhat(xs.size());
  std::vector<double> y(xs.size());
  if (observed) {
    observed->mean.assign(C, 0.0);
    observed->var.assign(C, 0.0);
  }
  for (std::size_t c = 0; c < C; ++c) {
    double m, v;
    if (fixed) {
      m = fixed->mean[c];
      v = fixed->var[c];
    } else {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = xs.data() + (b * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) s += p[i];
      }
      m = s / n;
      double q = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = xs.data() + (b * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) q += (p[i] - m) * (p[i] - m);
      }
      v = q / n;
    }
    if (observed) {
      observed->mean[c] = m;
      observed->var[c] = v;
    }
    inv_std[c] = 1.0 / std::sqrt(v + eps);
    const double g = gamma[c], sh = beta[c];
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        const double h = (xs[off + i] - m) * inv_std[c];
        xhat[off + i] = h;
        y[off + i] = g * h + sh;
      }
    }
  }
  Node* xn = x.node().get();
  Node* gn = gamma.node().get();
  Node* bn = beta.node().get();
  const bool batch_stats = fixed == nullptr;
  return emit(x.shape(), std::move(y), {&x, &gamma, &beta},
              [xn, gn, bn, B, C, P, n, batch_stats, inv_std = std::move(inv_std),
               xhat = std::move(xhat)](Node& out) {
                for (std::size_t c = 0; c < C; ++c) {
                  double sg = 0.0, sgh = 0.0;
                  for (std::size_t b = 0; b < B; ++b) {
                    const std::size_t off = (b * C + c) * P;
                    for (std::size_t i = 0; i < P; ++i) {
                      sg += out.grad[off + i];
                      sgh += out.grad[off + i] * xhat[off + i];
                    }
                  }
                  if (gn->requires_grad) gn->grad[c] += sgh;
                  if (bn->requires_grad) bn->grad[c] += sg;
                  if (!xn->requires_grad) continue;
                  const double g = gn->data[c];
                  const double k = g * inv_std[c];
                  for (std::size_t b = 0; b < B; ++b) {
                    const std::size_t off = (b * C + c) * P;
                    for (std::size_t i = 0; i < P; ++i) {
                      if (batch_stats) {
                        xn->grad[off + i] +=
                            k * (out.grad[off + i] - sg / n - xhat[off + i] * sgh / n);
                      } else {
                        xn->grad[off + i] += k * out.grad[off + i];
                      }
                    }
                  }
                }
              });
}

std::vector<int> argmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("argmax_rows: expected rank 2, got " + to_string(x.shape()));
  const std::size_t R = x.dim(0), K = x.dim(1);
  std::vector<int> out(R);
  for (std::size_t r = 0; r < R; ++r) {
    auto row = x.data().subspan(r * K, K);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace {

constexpr std::array<OpKind, 22> kAllOps = {
    OpKind::kAdd,     OpKind::kSub,       OpKind::kMul,
    OpKind::kDiv,     OpKind::kMatmul,    OpKind::kConv2d,
    OpKind::kConv2d1x1, OpKind::kRelu,    OpKind::kTanh,
    OpKind::kSigmoid, OpKind::kExp,       OpKind::kLog,
    OpKind::kSoftmax, OpKind::kSum,       OpKind::kMean,
    OpKind::kConcat,  OpKind::kUpsampleNearest2x, OpKind::kSlice,
    OpKind::kBroadcast, OpKind::kLinearInterp1d, OpKind::kClamp,
    OpKind::kEmbeddingLookup,
};

void require_arity(std::span<const Tensor> in, std::size_t n, OpKind kind) {
  if (in.size() != n) {
    throw ContractError(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                        " inputs, got " + std::to_string(in.size()));
  }
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kConv2d1x1: return "conv2d_1x1";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kConcat: return "concat";
    case OpKind::kUpsampleNearest2x: return "upsample_nearest_2x";
    case OpKind::kSlice: return "slice";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kLinearInterp1d: return "linear_interp_1d";
    case OpKind::kClamp: return "clamp";
    case OpKind::kEmbeddingLookup: return "embedding_lookup";
  }
  return "unknown";
}

std::span<const OpKind> all_op_kinds() { return kAllOps; }

Tensor forward_op(OpKind kind, std::span<const Tensor> in, const OpAttrs& attrs) {
  if (attrs.require_finite) {
    for (const Tensor& t : in) {
      if (!all_finite(t)) {
        throw NumericError(std::string(op_name(kind)) + ": non-finite input of shape " +
                           to_string(t.shape()));
      }
    }
  }
  switch (kind) {
    case OpKind::kAdd: require_arity(in, 2, kind); return add(in[0], in[1]);
    case OpKind::kSub: require_arity(in, 2, kind); return sub(in[0], in[1]);
    case OpKind::kMul: require_arity(in, 2, kind); return mul(in[0], in[1]);
    case OpKind::kDiv: require_arity(in, 2, kind); return div(in[0], in[1]);
    case OpKind::kMatmul: require_arity(in, 2, kind); return matmul(in[0], in[1]);
    case OpKind::kConv2d: require_arity(in, 3, kind); return conv2d(in[0], in[1], in[2]);
    case OpKind::kConv2d1x1: require_arity(in, 3, kind); return conv2d_1x1(in[0], in[1], in[2]);
    case OpKind::kRelu: require_arity(in, 1, kind); return relu(in[0]);
    case OpKind::kTanh: require_arity(in, 1, kind); return tanh(in[0]);
    case OpKind::kSigmoid: require_arity(in, 1, kind); return sigmoid(in[0]);
    case OpKind::kExp: require_arity(in, 1, kind); return exp(in[0]);
    case OpKind::kLog: require_arity(in, 1, kind); return log(in[0]);
    case OpKind::kSoftmax: require_arity(in, 1, kind); return softmax(in[0], attrs.axis);
    case OpKind::kSum: require_arity(in, 1, kind); return sum(in[0], attrs.axis);
    case OpKind::kMean: require_arity(in, 1, kind); return mean(in[0], attrs.axis);
    case OpKind::kConcat: return concat(in, attrs.axis);
    case OpKind::kUpsampleNearest2x: require_arity(in, 1, kind); return upsample_nearest_2x(in[0]);
    case OpKind::kSlice:
      require_arity(in, 1, kind);
      return slice(in[0], attrs.axis, attrs.start, attrs.end);
    case OpKind::kBroadcast: require_arity(in, 1, kind); return broadcast_to(in[0], attrs.shape);
    case OpKind::kLinearInterp1d:
      require_arity(in, 1, kind);
      return linear_interp_1d(in[0], attrs.width);
    case OpKind::kClamp: require_arity(in, 1, kind); return clamp(in[0], attrs.lo, attrs.hi);
    case OpKind::kEmbeddingLookup:
      require_arity(in, 1, kind);
      return embedding_lookup(in[0], attrs.indices);
  }
  throw ContractError("forward_op: unknown op kind");
}

}  // namespace siga
