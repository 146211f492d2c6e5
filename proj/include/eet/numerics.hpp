#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace eet {

/// Thrown for every contract violation in the library. Carries a short,
/// human readable message; callers at the CLI/HTTP boundary map it to exit
/// codes or error payloads.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix row(std::span<const double> v);
  static Matrix column(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double> row_vector(std::size_t r) const;

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const;
  void fill(double v);

  Matrix transpose() const;
  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

/// C = A·B. Uses the OpenMP kernel; see kernels.hpp for the serial reference.
Matrix matmul(const Matrix& a, const Matrix& b);

double frobenius_sq(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

/// Named trainable tensors with gradients of identical shape.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Matrix value;
    Matrix grad;
  };

  /// Adds a new entry; throws on a duplicate name.
  std::size_t add(std::string name, Matrix value);

  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t index_of(const std::string& name) const;

  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  Entry& operator[](const std::string& name) { return entries_[index_of(name)]; }
  const Entry& operator[](const std::string& name) const { return entries_[index_of(name)]; }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

double gelu(double x);
/// d gelu / dx for the tanh approximation.
double gelu_grad(double x);
Matrix gelu(const Matrix& m);

std::vector<double> softmax(std::span<const double> v);
double cross_entropy(std::span<const double> probs, std::size_t label);

/// Scalar objective that writes its analytic gradient into the store's grads.
using GradObjective = std::function<double(ParamStore&)>;

/// Compares analytic gradients against central finite differences for
/// every scalar of every entry. Returns max |a-n| / max(|a|, |n|, 1e-8).
double grad_check(const GradObjective& f, ParamStore& params, double eps);

}  // namespace eet
