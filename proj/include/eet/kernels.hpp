#pragma once

// Data-parallel inner loops. Each kernel has a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::omp`. The OpenMP
// versions partition output rows only, so every output element is produced
// by one thread with the same accumulation order as the serial loop: results
// are bitwise identical regardless of thread count.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "eet/numerics.hpp"

namespace eet {

using Face = std::array<std::uint32_t, 3>;

namespace kernels {

// Below this many multiply-adds the OpenMP kernels stay on one thread.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b);
/// A·Bᵀ
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// Aᵀ·B
Matrix matmul_at(const Matrix& a, const Matrix& b);

/// Area-weighted vertex normals for each row of `frames` (T × 3V, xyz
/// interleaved). `degenerate` (if non-null) receives one flag per T×V vertex.
Matrix vertex_normals(const Matrix& frames, std::span<const Face> faces,
                      std::vector<std::uint8_t>* degenerate = nullptr);

/// Per-frame, per-vertex Euclidean distance between two T × 3V sequences.
Matrix vertex_distances(const Matrix& a, const Matrix& b);

}  // namespace serial

namespace omp {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_bt(const Matrix& a, const Matrix& b);
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix vertex_normals(const Matrix& frames, std::span<const Face> faces,
                      std::vector<std::uint8_t>* degenerate = nullptr);
Matrix vertex_distances(const Matrix& a, const Matrix& b);

}  // namespace omp

int max_threads();

}  // namespace kernels
}  // namespace eet
