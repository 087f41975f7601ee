#include "grformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "autograd.hpp"
#include "grformer/errors.hpp"

namespace grf {

using detail::grad_sink;
using detail::make_result;
using detail::Node;

std::size_t normalize_axis(int dim, std::size_t rank) {
  const long r = static_cast<long>(rank);
  const long d = dim < 0 ? dim + r : dim;
  if (d < 0 || d >= r) {
    throw DimensionError("axis " + std::to_string(dim) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(d);
}

namespace {

struct Broadcast {
  Shape out;
  // Flat source offsets per output element; empty means identity.
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Source offsets of `in` when expanded to `out` (right-aligned).
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t lead = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > lead;) {
    const std::size_t d = in[i - lead];
    stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < n; ++k) {
    index[k] = offset;
    for (std::size_t i = rank; i-- > 0;) {
      ++counter[i];
      offset += stride[i];
      if (counter[i] < out[i]) break;
      offset -= stride[i] * counter[i];
      counter[i] = 0;
    }
  }
  return index;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast plan;
  plan.out = broadcast_shape(a, b, op);
  if (a != plan.out) plan.a_index = broadcast_index(a, plan.out);
  if (b != plan.out) plan.b_index = broadcast_index(b, plan.out);
  return plan;
}

// out = f(a, b); da/db give partial derivatives of f at (a, b).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  Broadcast plan = plan_broadcast(a.shape(), b.shape(), op);
  const std::size_t n = shape_numel(plan.out);
  const auto& av = a.data();
  const auto& bv = b.data();
  const auto ai = [&plan](std::size_t k) { return plan.a_index.empty() ? k : plan.a_index[k]; };
  const auto bi = [&plan](std::size_t k) { return plan.b_index.empty() ? k : plan.b_index[k]; };
  std::vector<T> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = f(av[ai(k)], bv[bi(k)]);
  Shape shape = plan.out;
  return make_result<T>(
      op, std::move(shape), std::move(out), {&a, &b},
      [plan = std::move(plan), da, db](Node<T>& self) {
        const auto& ad = self.parents[0]->data;
        const auto& bd = self.parents[1]->data;
        std::vector<T>* ga = grad_sink(self, 0);
        std::vector<T>* gb = grad_sink(self, 1);
        for (std::size_t k = 0; k < self.grad.size(); ++k) {
          const std::size_t i = plan.a_index.empty() ? k : plan.a_index[k];
          const std::size_t j = plan.b_index.empty() ? k : plan.b_index[k];
          const T g = self.grad[k];
          if (ga) (*ga)[i] += g * da(ad[i], bd[j]);
          if (gb) (*gb)[j] += g * db(ad[i], bd[j]);
        }
      });
}

// y = f(x); df(x, y) is the derivative.
template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df) {
  const auto& xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t k = 0; k < xv.size(); ++k) out[k] = f(xv[k]);
  return make_result<T>(op, x.shape(), std::move(out), {&x}, [df](Node<T>& self) {
    std::vector<T>* gx = grad_sink(self, 0);
    if (!gx) return;
    const auto& xd = self.parents[0]->data;
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      (*gx)[k] += self.grad[k] * df(xd[k], self.data[k]);
    }
  });
}

template <typename T>
T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

// Splits shape around `axis` into (outer, length, inner) loop extents.
struct AxisLoops {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisLoops axis_loops(const Shape& shape, std::size_t axis) {
  AxisLoops l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary<T>(
      "add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary<T>("neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>("abs", x, [](T v) { return std::abs(v); }, [](T v, T) { return sign_of(v); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary<T>(
      "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

template <typename T>
Tensor<T> sign(const Tensor<T>& x) {
  return unary<T>("sign", x, [](T v) { return sign_of(v); }, [](T, T) { return T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return make_result<T>("sum", {}, {total}, {&x}, [](Node<T>& self) {
    std::vector<T>* gx = grad_sink(self, 0);
    if (!gx) return;
    for (T& g : *gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t k2 = b.dim(b.rank() - 2);
  const std::size_t n = b.dim(b.rank() - 1);
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Broadcast plan = plan_broadcast(a_batch, b_batch, "matmul");
  const std::size_t batches = shape_numel(plan.out);
  std::vector<std::size_t> a_off(batches), b_off(batches);
  for (std::size_t i = 0; i < batches; ++i) {
    a_off[i] = (plan.a_index.empty() ? i : plan.a_index[i]) * m * k;
    b_off[i] = (plan.b_index.empty() ? i : plan.b_index[i]) * k * n;
  }
  std::vector<T> out(batches * m * n, T(0));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t bt = 0; bt < batches; ++bt) {
    const T* A = ad + a_off[bt];
    const T* B = bd + b_off[bt];
    T* C = out.data() + bt * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = A[i * k + p];
        const T* Brow = B + p * n;
        T* Crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Crow[j] += aip * Brow[j];
      }
    }
  }
  Shape shape = plan.out;
  shape.push_back(m);
  shape.push_back(n);
  return make_result<T>(
      "matmul", std::move(shape), std::move(out), {&a, &b},
      [a_off = std::move(a_off), b_off = std::move(b_off), m, k, n](Node<T>& self) {
        std::vector<T>* ga = grad_sink(self, 0);
        std::vector<T>* gb = grad_sink(self, 1);
        const T* ad = self.parents[0]->data.data();
        const T* bd = self.parents[1]->data.data();
        for (std::size_t bt = 0; bt < a_off.size(); ++bt) {
          const T* G = self.grad.data() + bt * m * n;
          const T* A = ad + a_off[bt];
          const T* B = bd + b_off[bt];
          if (ga) {
            T* GA = ga->data() + a_off[bt];
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                T acc = T(0);
                for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
                GA[i * k + p] += acc;
              }
            }
          }
          if (gb) {
            T* GB = gb->data() + b_off[bt];
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                const T aip = A[i * k + p];
                for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += aip * G[i * n + j];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::vector<std::size_t> index, Shape out_shape) {
  if (shape_numel(out_shape) != index.size()) {
    throw DimensionError("gather: index count " + std::to_string(index.size()) +
                         " does not match shape " + shape_str(out_shape));
  }
  const auto& xv = x.data();
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.size()) throw DimensionError("gather: index out of range");
    out[i] = xv[index[i]];
  }
  return make_result<T>("gather", std::move(out_shape), std::move(out), {&x},
                        [index = std::move(index)](Node<T>& self) {
                          std::vector<T>* gx = grad_sink(self, 0);
                          if (!gx) return;
                          for (std::size_t i = 0; i < index.size(); ++i) {
                            (*gx)[index[i]] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t rank = x.rank();
  if (order.size() != rank) throw DimensionError("permute: order length != rank");
  std::vector<bool> seen(rank, false);
  for (std::size_t a : order) {
    if (a >= rank || seen[a]) throw DimensionError("permute: invalid axis order");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.dim(order[i]);
    stride[i] = in_stride[order[i]];
  }
  const std::size_t n = x.numel();
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < n; ++k) {
    index[k] = offset;
    for (std::size_t i = rank; i-- > 0;) {
      ++counter[i];
      offset += stride[i];
      if (counter[i] < out_shape[i]) break;
      offset -= stride[i] * counter[i];
      counter[i] = 0;
    }
  }
  return gather(x, std::move(index), std::move(out_shape));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank must be >= 2");
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[x.rank() - 1], order[x.rank() - 2]);
  return permute(x, order);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {&x}, [](Node<T>& self) {
    std::vector<T>* gx = grad_sink(self, 0);
    if (!gx) return;
    for (std::size_t k = 0; k < self.grad.size(); ++k) (*gx)[k] += self.grad[k];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int dim) {
  const std::size_t axis = normalize_axis(dim, x.rank());
  const AxisLoops l = axis_loops(x.shape(), axis);
  const auto& xv = x.data();
  detail::check_finite(std::vector<T>(xv.begin(), xv.end()), "softmax input");
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.length * l.inner + in;
      T mx = xv[base];
      for (std::size_t i = 1; i < l.length; ++i) mx = std::max(mx, xv[base + i * l.inner]);
      T total = T(0);
      for (std::size_t i = 0; i < l.length; ++i) {
        const T e = std::exp(xv[base + i * l.inner] - mx);
        out[base + i * l.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < l.length; ++i) out[base + i * l.inner] /= total;
    }
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {&x}, [l](Node<T>& self) {
    std::vector<T>* gx = grad_sink(self, 0);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.length * l.inner + in;
        T dot = T(0);
        for (std::size_t i = 0; i < l.length; ++i) {
          dot += g[base + i * l.inner] * y[base + i * l.inner];
        }
        for (std::size_t i = 0; i < l.length; ++i) {
          const std::size_t p = base + i * l.inner;
          (*gx)[p] += y[p] * (g[p] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, int dim, T eps) {
  if (!(eps > T(0))) throw ContractError("l2_normalize: eps must be positive");
  const std::size_t axis = normalize_axis(dim, x.rank());
  const AxisLoops l = axis_loops(x.shape(), axis);
  const auto& xv = x.data();
  std::vector<T> out(xv.size());
  std::vector<T> denom(l.outer * l.inner);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.length * l.inner + in;
      T sq = T(0);
      for (std::size_t i = 0; i < l.length; ++i) {
        const T v = xv[base + i * l.inner];
        sq += v * v;
      }
      const T d = std::max(std::sqrt(sq), eps);
      denom[o * l.inner + in] = d;
      for (std::size_t i = 0; i < l.length; ++i) {
        out[base + i * l.inner] = xv[base + i * l.inner] / d;
      }
    }
  }
  return make_result<T>(
      "l2_normalize", x.shape(), std::move(out), {&x},
      [l, eps, denom = std::move(denom)](Node<T>& self) {
        std::vector<T>* gx = grad_sink(self, 0);
        if (!gx) return;
        const auto& y = self.data;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < l.outer; ++o) {
          for (std::size_t in = 0; in < l.inner; ++in) {
            const std::size_t base = o * l.length * l.inner + in;
            const T d = denom[o * l.inner + in];
            // Clamped branch: y = x / eps is linear in x.
            const bool clamped = !(d > eps);
            T dot = T(0);
            if (!clamped) {
              for (std::size_t i = 0; i < l.length; ++i) {
                dot += g[base + i * l.inner] * y[base + i * l.inner];
              }
            }
            for (std::size_t i = 0; i < l.length; ++i) {
              const std::size_t p = base + i * l.inner;
              (*gx)[p] += (g[p] - y[p] * dot) / d;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank must be >= 1");
  const std::size_t c = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) + ", " +
                         shape_str(beta.shape()) + " do not match channels " +
                         std::to_string(c));
  }
  const std::size_t rows = x.numel() / c;
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * c;
    T mu = T(0);
    for (std::size_t i = 0; i < c; ++i) mu += row[i];
    mu /= static_cast<T>(c);
    T var = T(0);
    for (std::size_t i = 0; i < c; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < c; ++i) {
      const T h = (row[i] - mu) * is;
      xhat[r * c + i] = h;
      out[r * c + i] = h * gv[i] + bv[i];
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        std::vector<T>* gx = grad_sink(self, 0);
        std::vector<T>* gg = grad_sink(self, 1);
        std::vector<T>* gb = grad_sink(self, 2);
        const auto& gamma = self.parents[1]->data;
        const auto& g = self.grad;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * c;
          const T* hr = xhat.data() + r * c;
          if (gg || gb) {
            for (std::size_t i = 0; i < c; ++i) {
              if (gg) (*gg)[i] += gr[i] * hr[i];
              if (gb) (*gb)[i] += gr[i];
            }
          }
          if (gx) {
            T mean_dh = T(0), mean_dh_h = T(0);
            for (std::size_t i = 0; i < c; ++i) {
              const T dh = gr[i] * gamma[i];
              mean_dh += dh;
              mean_dh_h += dh * hr[i];
            }
            mean_dh /= static_cast<T>(c);
            mean_dh_h /= static_cast<T>(c);
            for (std::size_t i = 0; i < c; ++i) {
              const T dh = gr[i] * gamma[i];
              (*gx)[r * c + i] += inv_std[r] * (dh - mean_dh - hr[i] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d_3x3(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 3) throw DimensionError("conv2d_3x3: input must be [C,H,W], got " + shape_str(x.shape()));
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  if (w.rank() != 4 || w.dim(1) != cin || w.dim(2) != 3 || w.dim(3) != 3) {
    throw DimensionError("conv2d_3x3: weight " + shape_str(w.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  const std::size_t cout = w.dim(0);
  if (b.shape() != Shape{cout}) {
    throw DimensionError("conv2d_3x3: bias " + shape_str(b.shape()) + " must be [" +
                         std::to_string(cout) + "]");
  }
  const std::size_t plane = h * wd;
  const T* xd = x.data().data();
  const T* wv = w.data().data();
  std::vector<T> out(cout * plane);
  for (std::size_t co = 0; co < cout; ++co) {
    T* op = out.data() + co * plane;
    std::fill(op, op + plane, b.data()[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* ip = xd + ci * plane;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const T wk = wv[((co * cin + ci) * 3 + ky) * 3 + kx];
          for (std::size_t y = 0; y < h; ++y) {
            const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            const std::size_t x0 = kx == 0 ? 1 : 0;
            const std::size_t x1 = kx == 2 ? wd - 1 : wd;
            const T* src = ip + static_cast<std::size_t>(sy) * wd + kx - 1;
            T* dst = op + y * wd;
            for (std::size_t xx = x0; xx < x1; ++xx) dst[xx] += wk * src[xx];
          }
        }
      }
    }
  }
  return make_result<T>(
      "conv2d_3x3", Shape{cout, h, wd}, std::move(out), {&x, &w, &b},
      [cin, cout, h, wd](Node<T>& self) {
        std::vector<T>* gx = grad_sink(self, 0);
        std::vector<T>* gw = grad_sink(self, 1);
        std::vector<T>* gb = grad_sink(self, 2);
        const std::size_t plane = h * wd;
        const T* xd = self.parents[0]->data.data();
        const T* wv = self.parents[1]->data.data();
        for (std::size_t co = 0; co < cout; ++co) {
          const T* gp = self.grad.data() + co * plane;
          if (gb) {
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
            (*gb)[co] += acc;
          }
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const std::size_t widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                const T wk = wv[widx];
                T wacc = T(0);
                for (std::size_t y = 0; y < h; ++y) {
                  const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
                  if (sy < 0 || sy >= static_cast<long>(h)) continue;
                  const std::size_t x0 = kx == 0 ? 1 : 0;
                  const std::size_t x1 = kx == 2 ? wd - 1 : wd;
                  const std::size_t soff = ci * plane + static_cast<std::size_t>(sy) * wd + kx - 1;
                  const T* g = gp + y * wd;
                  for (std::size_t xx = x0; xx < x1; ++xx) {
                    if (gw) wacc += g[xx] * xd[soff + xx];
                    if (gx) (*gx)[soff + xx] += wk * g[xx];
                  }
                }
                if (gw) (*gw)[widx] += wacc;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add(matmul(x, w), b);
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int dim, std::size_t start, std::size_t length) {
  const std::size_t axis = normalize_axis(dim, x.rank());
  if (start + length > x.dim(axis)) {
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds axis of size " +
                         std::to_string(x.dim(axis)));
  }
  const AxisLoops l = axis_loops(x.shape(), axis);
  std::vector<std::size_t> index;
  index.reserve(l.outer * length * l.inner);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = start; i < start + length; ++i) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        index.push_back((o * l.length + i) * l.inner + in);
      }
    }
  }
  Shape shape = x.shape();
  shape[axis] = length;
  return gather(x, std::move(index), std::move(shape));
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int dim, std::size_t parts) {
  const std::size_t axis = normalize_axis(dim, x.rank());
  if (parts == 0 || x.dim(axis) % parts != 0) {
    throw DimensionError("split: axis of size " + std::to_string(x.dim(axis)) +
                         " is not divisible into " + std::to_string(parts) + " parts");
  }
  const std::size_t len = x.dim(axis) / parts;
  std::vector<Tensor<T>> out;
  out.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) out.push_back(narrow(x, dim, p * len, len));
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_half(const Tensor<T>& x, int dim) {
  auto halves = split(x, dim, 2);
  return {halves[0], halves[1]};
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int dim) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t axis = normalize_axis(dim, parts[0].rank());
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw DimensionError("concat: rank mismatch");
    s[axis] = shape[axis];
    if (s != shape) {
      throw DimensionError("concat: incompatible shapes " + shape_str(parts[0].shape()) + " and " +
                           shape_str(p.shape()));
    }
    total += p.dim(axis);
  }
  shape[axis] = total;
  const AxisLoops l = axis_loops(shape, axis);
  std::vector<T> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t block = p.dim(axis) * l.inner;
    for (std::size_t o = 0; o < l.outer; ++o) {
      std::copy_n(p.data().data() + o * block, block,
                  out.data() + o * l.length * l.inner + off * l.inner);
    }
    off += p.dim(axis);
  }
  std::vector<std::size_t> lengths;
  for (const auto& p : parts) lengths.push_back(p.dim(axis));
  return make_result<T>(
      "concat", std::move(shape), std::move(out), parts,
      [l, offsets = std::move(offsets), lengths = std::move(lengths)](Node<T>& self) {
        for (std::size_t p = 0; p < lengths.size(); ++p) {
          std::vector<T>* gp = grad_sink(self, p);
          if (!gp) continue;
          const std::size_t block = lengths[p] * l.inner;
          for (std::size_t o = 0; o < l.outer; ++o) {
            const T* src = self.grad.data() + o * l.length * l.inner + offsets[p] * l.inner;
            T* dst = gp->data() + o * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
      });
}

#define GRF_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> neg(const Tensor<T>&);                                                    \
  template Tensor<T> exp(const Tensor<T>&);                                                    \
  template Tensor<T> abs(const Tensor<T>&);                                                    \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> sign(const Tensor<T>&);                                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> softmax(const Tensor<T>&, int);                                           \
  template Tensor<T> l2_normalize(const Tensor<T>&, int, T);                                   \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template Tensor<T> conv2d_3x3(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> narrow(const Tensor<T>&, int, std::size_t, std::size_t);                  \
  template std::vector<Tensor<T>> split(const Tensor<T>&, int, std::size_t);                   \
  template std::pair<Tensor<T>, Tensor<T>> split_half(const Tensor<T>&, int);                  \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                               \
  template Tensor<T> gather(const Tensor<T>&, std::vector<std::size_t>, Shape);

GRF_INSTANTIATE_OPS(float)
GRF_INSTANTIATE_OPS(double)

}  // namespace grf
