#include "eet/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "eet/kernels.hpp"

namespace eet {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error("matrix data length " + std::to_string(data_.size()) + " does not match " +
                std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix Matrix::row(std::span<const double> v) {
  return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

Matrix Matrix::column(std::span<const double> v) {
  return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

std::vector<double> Matrix::row_vector(std::size_t r) const {
  auto s = row_span(r);
  return {s.begin(), s.end()};
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix& Matrix::operator+=(const Matrix& o) {
  if (!same_shape(o)) throw Error("shape mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
  if (!same_shape(o)) throw Error("shape mismatch in -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (auto& x : data_) x *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) { return kernels::omp::matmul(a, b); }

double frobenius_sq(const Matrix& m) {
  double s = 0.0;
  for (double x : m.data()) s += x * x;
  return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw Error("shape mismatch in max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (auto& x : m.data()) x = n(rng);
  return m;
}

std::size_t ParamStore::add(std::string name, Matrix value) {
  if (index_.contains(name)) throw Error("duplicate parameter name: " + name);
  if (!value.all_finite()) throw Error("non-finite initial value for " + name);
  Matrix grad(value.rows(), value.cols());
  const std::size_t i = entries_.size();
  index_.emplace(name, i);
  entries_.push_back({std::move(name), std::move(value), std::move(grad)});
  return i;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

namespace {
constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

double gelu(double x) {
  const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
  const double th = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

Matrix gelu(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = gelu(m[i]);
  return out;
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw Error("empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) {
    throw Error("label " + std::to_string(label) + " out of range for " +
                std::to_string(probs.size()) + " classes");
  }
  return -std::log(std::max(probs[label], 1e-15));
}

double grad_check(const GradObjective& f, ParamStore& params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw Error("grad_check eps must lie in (0, 1e-2]");

  params.zero_grad();
  const double base = f(params);
  if (!std::isfinite(base)) throw Error("grad_check: objective is not finite");
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const auto& e : params.entries()) analytic.push_back(e.grad);

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params.entry(p).value.size(); ++i) {
      double& w = params.entry(p).value[i];
      const double saved = w;
      w = saved + eps;
      params.zero_grad();
      const double up = f(params);
      w = saved - eps;
      params.zero_grad();
      const double down = f(params);
      w = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw Error("grad_check: objective is not finite near " + params.entry(p).name);
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  params.zero_grad();
  for (std::size_t p = 0; p < params.size(); ++p) params.entry(p).grad = analytic[p];
  return worst;
}

}  // namespace eet
