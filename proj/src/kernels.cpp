#include "selectfusion/kernels.hpp"

#include <omp.h>

#include <cassert>
#include <cmath>
#include <cstdlib>
#include <string>

namespace selectfusion::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1u << 15;

int g_threads = 1;

inline double apply(Unary op, double x) {
  switch (op) {
    case Unary::Sigmoid:
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case Unary::Tanh:
      return std::tanh(x);
    case Unary::Relu:
      return x > 0.0 ? x : 0.0;
    case Unary::Exp:
      return std::exp(x);
    case Unary::Log:
      return std::log(x);
    case Unary::Sqrt:
      return std::sqrt(x);
    case Unary::Abs:
      return std::abs(x);
    case Unary::Square:
      return x * x;
  }
  return x;
}

inline double gumbel(double u) { return -std::log(-std::log(u)); }

// Element accessors for the (possibly transposed) row-major operands.
inline double at_a(std::span<const double> a, std::size_t i, std::size_t p, std::size_t m,
                   std::size_t k, Trans ta) {
  return ta == Trans::No ? a[i * k + p] : a[p * m + i];
}
inline double at_b(std::span<const double> b, std::size_t p, std::size_t j, std::size_t k,
                   std::size_t n, Trans tb) {
  return tb == Trans::No ? b[p * n + j] : b[j * k + p];
}

}  // namespace

void set_threads(int n) { g_threads = n < 1 ? 1 : n; }
int threads() { return g_threads; }

int configure_threads_from_env() {
  if (const char* env = std::getenv("SELECTFUSION_THREADS"); env != nullptr) {
    try {
      set_threads(std::stoi(env));
    } catch (const std::exception&) {
      set_threads(1);
    }
  } else {
    set_threads(1);
  }
  return g_threads;
}

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, Trans ta, Trans tb, bool accumulate) {
  assert(a.size() >= m * k && b.size() >= k * n && c.size() >= m * n);
  const bool par = g_threads > 1 && m > 1 && m * n * k >= kParallelWork;
  const auto rows = static_cast<std::ptrdiff_t>(m);

  if (tb == Trans::Yes) {
    // Row-of-A dot row-of-B; contiguous when A is untransposed.
#pragma omp parallel for schedule(static) num_threads(g_threads) if (par)
    for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      for (std::size_t j = 0; j < n; ++j) {
        double acc = accumulate ? c[i * n + j] : 0.0;
        const double* brow = b.data() + j * k;
        if (ta == Trans::No) {
          const double* arow = a.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        } else {
          for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * brow[p];
        }
        c[i * n + j] = acc;
      }
    }
    return;
  }

  // i-p-j order: each c(i, j) still accumulates p = 0..k-1 in sequence.
#pragma omp parallel for schedule(static) num_threads(g_threads) if (par)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c.data() + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ta == Trans::No ? a[i * k + p] : a[p * m + i];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gumbel_from_uniform(std::span<const double> u, std::span<double> out) {
  assert(out.size() >= u.size());
  const auto n = static_cast<std::ptrdiff_t>(u.size());
  const bool par = g_threads > 1 && u.size() >= kParallelWork / 8;
#pragma omp parallel for schedule(static) num_threads(g_threads) if (par)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = gumbel(u[static_cast<std::size_t>(i)]);
}

void map_unary(Unary op, std::span<const double> in, std::span<double> out) {
  assert(out.size() >= in.size());
  const auto n = static_cast<std::ptrdiff_t>(in.size());
  const bool par = g_threads > 1 && in.size() >= kParallelWork / 4;
#pragma omp parallel for schedule(static) num_threads(g_threads) if (par)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out[idx] = apply(op, in[idx]);
  }
}

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, Trans ta, Trans tb, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += at_a(a, i, p, m, k, ta) * at_b(b, p, j, k, n, tb);
      c[i * n + j] = acc;
    }
  }
}

void gumbel_from_uniform(std::span<const double> u, std::span<double> out) {
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = gumbel(u[i]);
}

void map_unary(Unary op, std::span<const double> in, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = apply(op, in[i]);
}

}  // namespace serial

}  // namespace selectfusion::kernels
