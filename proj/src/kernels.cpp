#include "eet/kernels.hpp"

#include <cmath>

#include <omp.h>

namespace eet::kernels {

namespace {

void check_matmul(std::size_t a_inner, std::size_t b_inner, const char* what) {
  if (a_inner != b_inner) {
    throw Error(std::string(what) + ": inner dimensions differ (" + std::to_string(a_inner) +
                " vs " + std::to_string(b_inner) + ")");
  }
}

// Row kernels shared by both variants so the accumulation order is identical.
inline void matmul_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  auto out = c.row_span(i);
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double aik = a(i, k);
    auto brow = b.row_span(k);
    for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
  }
}

inline void matmul_bt_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  auto arow = a.row_span(i);
  for (std::size_t j = 0; j < b.rows(); ++j) {
    auto brow = b.row_span(j);
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
    c(i, j) = s;
  }
}

// Row i of Aᵀ·B is Σ_k A(k,i)·B(k,:).
inline void matmul_at_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  auto out = c.row_span(i);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double aki = a(k, i);
    auto brow = b.row_span(k);
    for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aki * brow[j];
  }
}

inline void normals_row(const Matrix& frames, std::span<const Face> faces, Matrix& out,
                        std::size_t t, std::vector<std::uint8_t>* degenerate) {
  const std::size_t v_count = frames.cols() / 3;
  auto p = frames.row_span(t);
  auto n = out.row_span(t);
  for (const Face& f : faces) {
    const double* p0 = &p[3 * f[0]];
    const double* p1 = &p[3 * f[1]];
    const double* p2 = &p[3 * f[2]];
    const double e1[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
    const double e2[3] = {p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
    const double c[3] = {e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2],
                         e1[0] * e2[1] - e1[1] * e2[0]};
    for (std::uint32_t vi : f)
      for (int k = 0; k < 3; ++k) n[3 * vi + k] += c[k];
  }
  for (std::size_t v = 0; v < v_count; ++v) {
    double* a = &n[3 * v];
    const double len = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    if (len < 1e-12) {
      a[0] = 0.0;
      a[1] = 0.0;
      a[2] = 1.0;
      if (degenerate) (*degenerate)[t * v_count + v] = 1;
    } else {
      a[0] /= len;
      a[1] /= len;
      a[2] /= len;
    }
  }
}

inline void distances_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t t) {
  auto pa = a.row_span(t);
  auto pb = b.row_span(t);
  for (std::size_t v = 0; v < out.cols(); ++v) {
    const double dx = pa[3 * v] - pb[3 * v];
    const double dy = pa[3 * v + 1] - pb[3 * v + 1];
    const double dz = pa[3 * v + 2] - pb[3 * v + 2];
    out(t, v) = std::sqrt(dx * dx + dy * dy + dz * dz);
  }
}

void check_faces(const Matrix& frames, std::span<const Face> faces) {
  if (faces.empty()) throw Error("degenerate face list: no faces");
  if (frames.cols() % 3 != 0) throw Error("mesh frame width is not a multiple of 3");
  const std::size_t v_count = frames.cols() / 3;
  for (const Face& f : faces)
    for (auto vi : f)
      if (vi >= v_count) throw Error("face index out of range");
}

void check_same(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b) || a.cols() % 3 != 0) throw Error("mesh sequence shape mismatch");
}

}  // namespace

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_matmul(a.cols(), b.rows(), "matmul");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, c, i);
  return c;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  check_matmul(a.cols(), b.cols(), "matmul_bt");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_bt_row(a, b, c, i);
  return c;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  check_matmul(a.rows(), b.rows(), "matmul_at");
  Matrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) matmul_at_row(a, b, c, i);
  return c;
}

Matrix vertex_normals(const Matrix& frames, std::span<const Face> faces,
                      std::vector<std::uint8_t>* degenerate) {
  check_faces(frames, faces);
  Matrix out(frames.rows(), frames.cols());
  if (degenerate) degenerate->assign(frames.rows() * (frames.cols() / 3), 0);
  for (std::size_t t = 0; t < frames.rows(); ++t) normals_row(frames, faces, out, t, degenerate);
  return out;
}

Matrix vertex_distances(const Matrix& a, const Matrix& b) {
  check_same(a, b);
  Matrix out(a.rows(), a.cols() / 3);
  for (std::size_t t = 0; t < a.rows(); ++t) distances_row(a, b, out, t);
  return out;
}

}  // namespace serial

namespace omp {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_matmul(a.cols(), b.rows(), "matmul");
  Matrix c(a.rows(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
  const bool par = a.rows() * a.cols() * b.cols() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_row(a, b, c, static_cast<std::size_t>(i));
  return c;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  check_matmul(a.cols(), b.cols(), "matmul_bt");
  Matrix c(a.rows(), b.rows());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
  const bool par = a.rows() * a.cols() * b.rows() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_bt_row(a, b, c, static_cast<std::size_t>(i));
  return c;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  check_matmul(a.rows(), b.rows(), "matmul_at");
  Matrix c(a.cols(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.cols());
  const bool par = a.rows() * a.cols() * b.cols() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_at_row(a, b, c, static_cast<std::size_t>(i));
  return c;
}

Matrix vertex_normals(const Matrix& frames, std::span<const Face> faces,
                      std::vector<std::uint8_t>* degenerate) {
  check_faces(frames, faces);
  Matrix out(frames.rows(), frames.cols());
  if (degenerate) degenerate->assign(frames.rows() * (frames.cols() / 3), 0);
  const auto rows = static_cast<std::ptrdiff_t>(frames.rows());
  const bool par = frames.rows() * faces.size() * 9 >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t t = 0; t < rows; ++t)
    normals_row(frames, faces, out, static_cast<std::size_t>(t), degenerate);
  return out;
}

Matrix vertex_distances(const Matrix& a, const Matrix& b) {
  check_same(a, b);
  Matrix out(a.rows(), a.cols() / 3);
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
  const bool par = a.size() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t t = 0; t < rows; ++t) distances_row(a, b, out, static_cast<std::size_t>(t));
  return out;
}

}  // namespace omp

int max_threads() { return omp_get_max_threads(); }

}  // namespace eet::kernels
