#include "dct/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kernels.hpp"

namespace dct {
namespace {

using std::size_t;

template <typename T>
Graph<T>& same_graph(const Var<T>& a, const Var<T>& b) {
  if (&a.graph() != &b.graph()) {
    throw std::invalid_argument("operands belong to different graphs");
  }
  return a.graph();
}

Shape leading(const Shape& s, size_t drop) {
  return Shape(s.begin(), s.end() - static_cast<std::ptrdiff_t>(drop));
}

// Maps every flat index of `out` to the flat index of `b` broadcast into it.
std::vector<size_t> broadcast_map(const Shape& out, const Shape& b) {
  if (b.size() > out.size()) {
    throw ShapeError("cannot broadcast " + shape_string(b) + " to " + shape_string(out));
  }
  const size_t offset = out.size() - b.size();
  std::vector<size_t> stride(out.size(), 0);
  size_t s = 1;
  for (size_t i = b.size(); i-- > 0;) {
    const size_t axis = i + offset;
    if (b[i] == out[axis]) {
      stride[axis] = s;
    } else if (b[i] != 1) {
      throw ShapeError("cannot broadcast " + shape_string(b) + " to " + shape_string(out));
    }
    s *= b[i];
  }
  const size_t n = numel_of(out);
  std::vector<size_t> map(n);
  std::vector<size_t> idx(out.size(), 0);
  size_t bi = 0;
  for (size_t flat = 0; flat < n; ++flat) {
    map[flat] = bi;
    for (size_t axis = out.size(); axis-- > 0;) {
      ++idx[axis];
      bi += stride[axis];
      if (idx[axis] < out[axis]) break;
      bi -= stride[axis] * out[axis];
      idx[axis] = 0;
    }
  }
  return map;
}

enum class Broadcast { Same, Suffix, General };

Broadcast classify(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::Same;
  if (b.size() <= a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
    return Broadcast::Suffix;
  }
  return Broadcast::General;
}

// Adds g (indexed like the broadcast output) into gb, reducing in double.
template <typename T, typename F>
void reduce_into(BasicTensor<T>& gb, size_t n, Broadcast kind, const std::vector<size_t>& map,
                 F&& term) {
  std::vector<double> acc(gb.numel(), 0.0);
  if (kind == Broadcast::Same) {
    for (size_t i = 0; i < n; ++i) acc[i] += term(i);
  } else if (kind == Broadcast::Suffix) {
    const size_t nb = gb.numel();
    for (size_t i = 0; i < n; ++i) acc[i % nb] += term(i);
  } else {
    for (size_t i = 0; i < n; ++i) acc[map[i]] += term(i);
  }
  for (size_t j = 0; j < gb.numel(); ++j) {
    gb[j] = static_cast<T>(static_cast<double>(gb[j]) + acc[j]);
  }
}

template <typename T>
void accumulate(BasicTensor<T>* dst, const BasicTensor<T>& src) {
  if (!dst) return;
  for (size_t i = 0; i < src.numel(); ++i) (*dst)[i] += src[i];
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Graph<T>& g = same_graph(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() < 2) throw ShapeError("matmul: left operand must have rank >= 2");

  const bool shared = bv.rank() == 2;
  if (!shared) {
    if (bv.rank() != av.rank() ||
        leading(av.shape(), 2) != leading(bv.shape(), 2)) {
      throw ShapeError("matmul: batched operands " + shape_string(av.shape()) + " and " +
                       shape_string(bv.shape()) + " disagree on leading axes");
    }
  }
  const size_t m = av.dim(av.rank() - 2);
  const size_t k = av.cols();
  const size_t kb = bv.dim(bv.rank() - 2);
  const size_t n = bv.cols();
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  }
  Shape out_shape = av.shape();
  out_shape.back() = n;
  BasicTensor<T> out(out_shape);
  const size_t batches = av.numel() / (m * k);

  if (shared) {
    detail::gemm(false, false, batches * m, n, k, av.ptr(), bv.ptr(), out.ptr(), false);
  } else {
    for (size_t t = 0; t < batches; ++t) {
      detail::gemm(false, false, m, n, k, av.ptr() + t * m * k, bv.ptr() + t * k * n,
                   out.ptr() + t * m * n, false);
    }
  }

  return g.record("matmul", std::move(out), {a, b},
                  [=](const BackwardArgs<T>& args) {
                    const auto& A = *args.inputs[0];
                    const auto& B = *args.inputs[1];
                    const auto& G = args.grad;
                    if (shared) {
                      if (auto* ga = args.input_grads[0])
                        detail::gemm(false, true, batches * m, k, n, G.ptr(), B.ptr(), ga->ptr(), true);
                      if (auto* gb = args.input_grads[1])
                        detail::gemm(true, false, k, n, batches * m, A.ptr(), G.ptr(), gb->ptr(), true);
                      return;
                    }
                    for (size_t t = 0; t < batches; ++t) {
                      const T* gt = G.ptr() + t * m * n;
                      if (auto* ga = args.input_grads[0])
                        detail::gemm(false, true, m, k, n, gt, B.ptr() + t * k * n,
                                     ga->ptr() + t * m * k, true);
                      if (auto* gb = args.input_grads[1])
                        detail::gemm(true, false, k, n, m, A.ptr() + t * m * k, gt,
                                     gb->ptr() + t * k * n, true);
                    }
                  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Graph<T>& g = same_graph(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const Broadcast kind = classify(av.shape(), bv.shape());
  std::vector<size_t> map;
  if (kind == Broadcast::General) map = broadcast_map(av.shape(), bv.shape());

  BasicTensor<T> out(av.shape());
  const size_t n = av.numel();
  const size_t nb = bv.numel();
  for (size_t i = 0; i < n; ++i) {
    const size_t j = kind == Broadcast::Same ? i : kind == Broadcast::Suffix ? i % nb : map[i];
    out[i] = av[i] + bv[j];
  }
  return g.record("add", std::move(out), {a, b},
                  [kind, map = std::move(map)](const BackwardArgs<T>& args) {
                    const auto& G = args.grad;
                    accumulate(args.input_grads[0], G);
                    if (auto* gb = args.input_grads[1]) {
                      reduce_into(*gb, G.numel(), kind, map,
                                  [&](size_t i) { return static_cast<double>(G[i]); });
                    }
                  });
}

template <typename T>
Var<T> multiply(const Var<T>& a, const Var<T>& b) {
  Graph<T>& g = same_graph(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const Broadcast kind = classify(av.shape(), bv.shape());
  std::vector<size_t> map;
  if (kind == Broadcast::General) map = broadcast_map(av.shape(), bv.shape());

  auto index = [kind, nb = bv.numel()](const std::vector<size_t>& m, size_t i) {
    return kind == Broadcast::Same ? i : kind == Broadcast::Suffix ? i % nb : m[i];
  };
  BasicTensor<T> out(av.shape());
  for (size_t i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[index(map, i)];

  return g.record("multiply", std::move(out), {a, b},
                  [kind, index, map = std::move(map)](const BackwardArgs<T>& args) {
                    const auto& A = *args.inputs[0];
                    const auto& B = *args.inputs[1];
                    const auto& G = args.grad;
                    if (auto* ga = args.input_grads[0]) {
                      for (size_t i = 0; i < G.numel(); ++i) (*ga)[i] += G[i] * B[index(map, i)];
                    }
                    if (auto* gb = args.input_grads[1]) {
                      reduce_into(*gb, G.numel(), kind, map, [&](size_t i) {
                        return static_cast<double>(G[i]) * static_cast<double>(A[i]);
                      });
                    }
                  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double factor) {
  const auto& av = a.value();
  BasicTensor<T> out(av.shape());
  const T f = static_cast<T>(factor);
  for (size_t i = 0; i < av.numel(); ++i) out[i] = av[i] * f;
  return a.graph().record("scale", std::move(out), {a}, [f](const BackwardArgs<T>& args) {
    auto* ga = args.input_grads[0];
    for (size_t i = 0; i < args.grad.numel(); ++i) (*ga)[i] += args.grad[i] * f;
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a, bool mask_last_column) {
  const auto& av = a.value();
  const size_t cols = av.cols();
  const size_t rows = av.rows();
  const size_t live = mask_last_column ? cols - 1 : cols;
  if (live == 0) throw ShapeError("softmax_rows: no unmasked columns");

  BasicTensor<T> out(av.shape());
  std::vector<double> e(cols);
  for (size_t r = 0; r < rows; ++r) {
    const T* x = av.ptr() + r * cols;
    T* y = out.ptr() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < live; ++c) mx = std::max(mx, static_cast<double>(x[c]));
    double total = 0.0;
    for (size_t c = 0; c < live; ++c) {
      e[c] = std::exp(static_cast<double>(x[c]) - mx);
      total += e[c];
    }
    for (size_t c = 0; c < live; ++c) y[c] = static_cast<T>(e[c] / total);
    if (mask_last_column) y[cols - 1] = T(0);
  }
  return a.graph().record("softmax_rows", std::move(out), {a},
                          [rows, cols](const BackwardArgs<T>& args) {
                            auto* ga = args.input_grads[0];
                            const auto& Y = args.output;
                            const auto& G = args.grad;
                            for (size_t r = 0; r < rows; ++r) {
                              const T* y = Y.ptr() + r * cols;
                              const T* g = G.ptr() + r * cols;
                              T* dx = ga->ptr() + r * cols;
                              const double inner = detail::dot(g, y, cols);
                              for (size_t c = 0; c < cols; ++c) {
                                dx[c] += static_cast<T>(static_cast<double>(y[c]) *
                                                        (static_cast<double>(g[c]) - inner));
                              }
                            }
                          });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  Graph<T>& g = same_graph(x, gamma);
  same_graph(x, beta);
  const auto& xv = x.value();
  const size_t d = xv.cols();
  if (gamma.value().shape() != Shape{d} || beta.value().shape() != Shape{d}) {
    throw ShapeError("layer_norm: gamma/beta must have shape [" + std::to_string(d) + "], got " +
                     shape_string(gamma.value().shape()) + " and " +
                     shape_string(beta.value().shape()));
  }
  const size_t rows = xv.rows();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();

  auto stats = [d, eps](const T* row) {
    double mu = 0.0;
    for (size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    return std::pair<double, double>{mu, 1.0 / std::sqrt(var + eps)};
  };

  BasicTensor<T> out(xv.shape());
  for (size_t r = 0; r < rows; ++r) {
    const T* row = xv.ptr() + r * d;
    const auto [mu, rstd] = stats(row);
    T* y = out.ptr() + r * d;
    for (size_t j = 0; j < d; ++j) {
      y[j] = static_cast<T>((row[j] - mu) * rstd * gv[j] + bv[j]);
    }
  }

  return g.record("layer_norm", std::move(out), {x, gamma, beta},
                  [rows, d, stats](const BackwardArgs<T>& args) {
                    const auto& X = *args.inputs[0];
                    const auto& Gm = *args.inputs[1];
                    const auto& G = args.grad;
                    auto* gx = args.input_grads[0];
                    auto* ggamma = args.input_grads[1];
                    auto* gbeta = args.input_grads[2];
                    std::vector<double> acc_gamma(d, 0.0), acc_beta(d, 0.0);
                    std::vector<double> xhat(d), gy(d);
                    for (size_t r = 0; r < rows; ++r) {
                      const T* row = X.ptr() + r * d;
                      const T* grow = G.ptr() + r * d;
                      const auto [mu, rstd] = stats(row);
                      double mean_gy = 0.0, mean_gy_xhat = 0.0;
                      for (size_t j = 0; j < d; ++j) {
                        xhat[j] = (row[j] - mu) * rstd;
                        acc_gamma[j] += static_cast<double>(grow[j]) * xhat[j];
                        acc_beta[j] += grow[j];
                        gy[j] = static_cast<double>(grow[j]) * Gm[j];
                        mean_gy += gy[j];
                        mean_gy_xhat += gy[j] * xhat[j];
                      }
                      if (!gx) continue;
                      mean_gy /= static_cast<double>(d);
                      mean_gy_xhat /= static_cast<double>(d);
                      T* dx = gx->ptr() + r * d;
                      for (size_t j = 0; j < d; ++j) {
                        dx[j] += static_cast<T>(rstd * (gy[j] - mean_gy - xhat[j] * mean_gy_xhat));
                      }
                    }
                    for (size_t j = 0; j < d; ++j) {
                      if (ggamma) (*ggamma)[j] += static_cast<T>(acc_gamma[j]);
                      if (gbeta) (*gbeta)[j] += static_cast<T>(acc_beta[j]);
                    }
                  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto& xv = x.value();
  BasicTensor<T> out(xv.shape());
  for (size_t i = 0; i < xv.numel(); ++i) {
    const double v = xv[i];
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))));
  }
  return x.graph().record("gelu", std::move(out), {x}, [](const BackwardArgs<T>& args) {
    const auto& X = *args.inputs[0];
    auto* gx = args.input_grads[0];
    for (size_t i = 0; i < X.numel(); ++i) {
      const double v = X[i];
      const double t = std::tanh(kC * (v + kA * v * v * v));
      const double dy = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      (*gx)[i] += static_cast<T>(args.grad[i] * dy);
    }
  });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  const auto& xv = x.value();
  BasicTensor<T> out(xv.shape());
  for (size_t i = 0; i < xv.numel(); ++i) out[i] = static_cast<T>(std::exp(static_cast<double>(xv[i])));
  return x.graph().record("exp", std::move(out), {x}, [](const BackwardArgs<T>& args) {
    auto* gx = args.input_grads[0];
    for (size_t i = 0; i < args.grad.numel(); ++i) (*gx)[i] += args.grad[i] * args.output[i];
  });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  const auto& xv = x.value();
  BasicTensor<T> out(xv.shape());
  for (size_t i = 0; i < xv.numel(); ++i) {
    if (!(xv[i] > T(0))) throw NumericError("log of non-positive value");
    out[i] = static_cast<T>(std::log(static_cast<double>(xv[i])));
  }
  return x.graph().record("log", std::move(out), {x}, [](const BackwardArgs<T>& args) {
    const auto& X = *args.inputs[0];
    auto* gx = args.input_grads[0];
    for (size_t i = 0; i < X.numel(); ++i) (*gx)[i] += args.grad[i] / X[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  const auto& xv = x.value();
  double total = 0.0;
  for (size_t i = 0; i < xv.numel(); ++i) total += xv[i];
  return x.graph().record("sum", BasicTensor<T>::scalar(static_cast<T>(total)), {x},
                          [](const BackwardArgs<T>& args) {
                            auto* gx = args.input_grads[0];
                            const T g = args.grad[0];
                            for (size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += g;
                          });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const auto& xv = x.value();
  const double n = static_cast<double>(xv.numel());
  double total = 0.0;
  for (size_t i = 0; i < xv.numel(); ++i) total += xv[i];
  return x.graph().record("mean", BasicTensor<T>::scalar(static_cast<T>(total / n)), {x},
                          [n](const BackwardArgs<T>& args) {
                            auto* gx = args.input_grads[0];
                            const T g = static_cast<T>(args.grad[0] / n);
                            for (size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += g;
                          });
}

template <typename T>
Var<T> sum_rows(const Var<T>& x) {
  const auto& xv = x.value();
  const size_t rows = xv.rows();
  const size_t cols = xv.cols();
  Shape shape = xv.shape();
  shape.back() = 1;
  BasicTensor<T> out(shape);
  for (size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (size_t c = 0; c < cols; ++c) total += xv[r * cols + c];
    out[r] = static_cast<T>(total);
  }
  return x.graph().record("sum_rows", std::move(out), {x},
                          [rows, cols](const BackwardArgs<T>& args) {
                            auto* gx = args.input_grads[0];
                            for (size_t r = 0; r < rows; ++r)
                              for (size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += args.grad[r];
                          });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  BasicTensor<T> out = x.value().reshaped(std::move(shape));
  return x.graph().record("reshape", std::move(out), {x}, [](const BackwardArgs<T>& args) {
    auto* gx = args.input_grads[0];
    for (size_t i = 0; i < args.grad.numel(); ++i) (*gx)[i] += args.grad[i];
  });
}

namespace {
template <typename T>
void transpose_into(const T* src, T* dst, size_t batches, size_t r, size_t c, bool add) {
  for (size_t t = 0; t < batches; ++t) {
    const T* s = src + t * r * c;
    T* d = dst + t * r * c;
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j) {
        if (add) d[j * r + i] += s[i * c + j];
        else d[j * r + i] = s[i * c + j];
      }
  }
}
}  // namespace

template <typename T>
Var<T> transpose(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() < 2) throw ShapeError("transpose needs rank >= 2");
  const size_t r = xv.dim(xv.rank() - 2);
  const size_t c = xv.cols();
  const size_t batches = xv.numel() / (r * c);
  Shape shape = xv.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  BasicTensor<T> out(shape);
  transpose_into(xv.ptr(), out.ptr(), batches, r, c, false);
  return x.graph().record("transpose", std::move(out), {x},
                          [batches, r, c](const BackwardArgs<T>& args) {
                            transpose_into(args.grad.ptr(), args.input_grads[0]->ptr(), batches, c, r, true);
                          });
}

template <typename T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
  Graph<T>& g = same_graph(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() < 2 || av.rank() != bv.rank() || av.cols() != bv.cols() ||
      leading(av.shape(), 2) != leading(bv.shape(), 2)) {
    throw ShapeError("concat_rows: incompatible shapes " + shape_string(av.shape()) + " and " +
                     shape_string(bv.shape()));
  }
  const size_t ra = av.dim(av.rank() - 2);
  const size_t rb = bv.dim(bv.rank() - 2);
  const size_t d = av.cols();
  const size_t batches = av.numel() / (ra * d);
  Shape shape = av.shape();
  shape[shape.size() - 2] = ra + rb;
  BasicTensor<T> out(shape);
  for (size_t t = 0; t < batches; ++t) {
    std::copy_n(av.ptr() + t * ra * d, ra * d, out.ptr() + t * (ra + rb) * d);
    std::copy_n(bv.ptr() + t * rb * d, rb * d, out.ptr() + t * (ra + rb) * d + ra * d);
  }
  return g.record("concat_rows", std::move(out), {a, b},
                  [batches, ra, rb, d](const BackwardArgs<T>& args) {
                    const T* gsrc = args.grad.ptr();
                    for (size_t t = 0; t < batches; ++t) {
                      const T* row = gsrc + t * (ra + rb) * d;
                      if (auto* ga = args.input_grads[0]) {
                        T* dst = ga->ptr() + t * ra * d;
                        for (size_t i = 0; i < ra * d; ++i) dst[i] += row[i];
                      }
                      if (auto* gb = args.input_grads[1]) {
                        T* dst = gb->ptr() + t * rb * d;
                        for (size_t i = 0; i < rb * d; ++i) dst[i] += row[ra * d + i];
                      }
                    }
                  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, size_t begin, size_t end) {
  const auto& xv = x.value();
  if (xv.rank() < 2) throw ShapeError("slice_rows needs rank >= 2");
  const size_t r = xv.dim(xv.rank() - 2);
  if (begin >= end || end > r) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + std::to_string(r) + " rows");
  }
  const size_t d = xv.cols();
  const size_t batches = xv.numel() / (r * d);
  const size_t len = end - begin;
  Shape shape = xv.shape();
  shape[shape.size() - 2] = len;
  BasicTensor<T> out(shape);
  for (size_t t = 0; t < batches; ++t) {
    std::copy_n(xv.ptr() + (t * r + begin) * d, len * d, out.ptr() + t * len * d);
  }
  return x.graph().record("slice_rows", std::move(out), {x},
                          [batches, r, d, begin, len](const BackwardArgs<T>& args) {
                            auto* gx = args.input_grads[0];
                            for (size_t t = 0; t < batches; ++t) {
                              T* dst = gx->ptr() + (t * r + begin) * d;
                              const T* src = args.grad.ptr() + t * len * d;
                              for (size_t i = 0; i < len * d; ++i) dst[i] += src[i];
                            }
                          });
}

namespace {
// [b, n, h*dh] <-> [b, h, n, dh]
template <typename T>
void heads_permute(const T* src, T* dst, size_t b, size_t n, size_t h, size_t dh, bool split,
                   bool add) {
  for (size_t s = 0; s < b; ++s)
    for (size_t i = 0; i < n; ++i)
      for (size_t k = 0; k < h; ++k)
        for (size_t j = 0; j < dh; ++j) {
          const size_t merged = ((s * n + i) * h + k) * dh + j;
          const size_t headed = ((s * h + k) * n + i) * dh + j;
          const size_t from = split ? merged : headed;
          const size_t to = split ? headed : merged;
          if (add) dst[to] += src[from];
          else dst[to] = src[from];
        }
}
}  // namespace

template <typename T>
Var<T> split_heads(const Var<T>& x, size_t heads) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || heads == 0 || xv.cols() % heads != 0) {
    throw ShapeError("split_heads: cannot split " + shape_string(xv.shape()) + " into " +
                     std::to_string(heads) + " heads");
  }
  const size_t b = xv.dim(0), n = xv.dim(1), dh = xv.cols() / heads;
  BasicTensor<T> out(Shape{b, heads, n, dh});
  heads_permute(xv.ptr(), out.ptr(), b, n, heads, dh, true, false);
  return x.graph().record("split_heads", std::move(out), {x},
                          [b, n, heads, dh](const BackwardArgs<T>& args) {
                            heads_permute(args.grad.ptr(), args.input_grads[0]->ptr(), b, n, heads,
                                          dh, false, true);
                          });
}

template <typename T>
Var<T> merge_heads(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("merge_heads expects [b, heads, n, dh]");
  const size_t b = xv.dim(0), h = xv.dim(1), n = xv.dim(2), dh = xv.dim(3);
  BasicTensor<T> out(Shape{b, n, h * dh});
  heads_permute(xv.ptr(), out.ptr(), b, n, h, dh, false, false);
  return x.graph().record("merge_heads", std::move(out), {x},
                          [b, n, h, dh](const BackwardArgs<T>& args) {
                            heads_permute(args.grad.ptr(), args.input_grads[0]->ptr(), b, n, h, dh,
                                          true, true);
                          });
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& x) {
  const auto& xv = x.value();
  Shape shift_shape = xv.shape();
  shift_shape.back() = 1;
  BasicTensor<T> neg_max(shift_shape);
  for (size_t r = 0; r < xv.rows(); ++r) {
    const T* row = xv.ptr() + r * xv.cols();
    neg_max[r] = -*std::max_element(row, row + xv.cols());
  }
  auto shifted = add(x, x.graph().constant(std::move(neg_max)));
  auto lse = log(sum_rows(exp(shifted)));
  return add(shifted, scale(lse, -1.0));
}

#define DCT_INSTANTIATE_OPS(T)                                                   \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                             \
  template Var<T> multiply(const Var<T>&, const Var<T>&);                        \
  template Var<T> scale(const Var<T>&, double);                                  \
  template Var<T> softmax_rows(const Var<T>&, bool);                             \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, double); \
  template Var<T> gelu(const Var<T>&);                                           \
  template Var<T> exp(const Var<T>&);                                            \
  template Var<T> log(const Var<T>&);                                            \
  template Var<T> sum(const Var<T>&);                                            \
  template Var<T> mean(const Var<T>&);                                           \
  template Var<T> sum_rows(const Var<T>&);                                       \
  template Var<T> reshape(const Var<T>&, Shape);                                 \
  template Var<T> transpose(const Var<T>&);                                      \
  template Var<T> concat_rows(const Var<T>&, const Var<T>&);                     \
  template Var<T> slice_rows(const Var<T>&, size_t, size_t);                     \
  template Var<T> split_heads(const Var<T>&, size_t);                            \
  template Var<T> merge_heads(const Var<T>&);                                    \
  template Var<T> log_softmax_rows(const Var<T>&);

DCT_INSTANTIATE_OPS(float)
DCT_INSTANTIATE_OPS(double)

}  // namespace dct
