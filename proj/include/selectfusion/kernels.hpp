#pragma once

// Data-parallel numeric kernels. Each kernel has an OpenMP implementation
// (the one the library calls) and a serial reference in `kernels::serial`
// kept for equivalence tests and the benchmark.
//
// Determinism contract: every output element is produced by exactly one
// thread and accumulates its terms in the same order as the serial
// reference, so results are bitwise identical for any thread count.

#include <cstddef>
#include <span>

namespace selectfusion::kernels {

enum class Trans { No, Yes };

/// C (m x n) = op(A) * op(B), or C += ... when `accumulate` is set.
/// op(A) is m x k and op(B) is k x n; storage is row-major for the
/// untransposed operand shapes.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, Trans ta, Trans tb, bool accumulate);

/// out[i] = -log(-log(u[i])).
void gumbel_from_uniform(std::span<const double> u, std::span<double> out);

enum class Unary { Sigmoid, Tanh, Relu, Exp, Log, Sqrt, Abs, Square };

void map_unary(Unary op, std::span<const double> in, std::span<double> out);

/// Worker thread cap (SELECTFUSION_THREADS); defaults to 1.
void set_threads(int n);
int threads();
/// Reads SELECTFUSION_THREADS and applies it; returns the resulting cap.
int configure_threads_from_env();

namespace serial {
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, Trans ta, Trans tb, bool accumulate);
void gumbel_from_uniform(std::span<const double> u, std::span<double> out);
void map_unary(Unary op, std::span<const double> in, std::span<double> out);
}  // namespace serial

}  // namespace selectfusion::kernels
