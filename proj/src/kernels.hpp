#pragma once

#include <cstddef>
#include <vector>

namespace dct::detail {

/// Dot product with 64-bit accumulation. Four independent partial sums keep
/// the summation order fixed while letting the loop pipeline.
template <typename T>
inline double dot(const T* a, const T* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    s1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    s2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    s3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return (s0 + s1) + (s2 + s3);
}

/// c[m x n] (+)= op(a) * op(b) where op(a) is m x k and op(b) is k x n.
/// A transposed operand is stored in its untransposed layout.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  thread_local std::vector<T> a_buf;
  thread_local std::vector<T> b_buf;

  const T* a_rows = a;  // m x k
  if (trans_a) {
    a_buf.resize(m * k);
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t i = 0; i < m; ++i) a_buf[i * k + l] = a[l * m + i];
    a_rows = a_buf.data();
  }
  const T* b_rows = b;  // n x k
  if (!trans_b) {
    b_buf.resize(n * k);
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t j = 0; j < n; ++j) b_buf[j * k + l] = b[l * n + j];
    b_rows = b_buf.data();
  }

  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a_rows + i * k;
    T* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      double s = dot(ai, b_rows + j * k, k);
      ci[j] = accumulate ? static_cast<T>(static_cast<double>(ci[j]) + s)
                         : static_cast<T>(s);
    }
  }
}

}  // namespace dct::detail
