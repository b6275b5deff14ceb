#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fedquant {

// Dense row-major tensor of doubles, rank 1 or 2.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  // Rank-2 tensor from nested rows; all rows must have the same length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string shape_str(const Tensor::Shape& shape);

// All ops below are pure and throw NumericError if they would produce a
// non-finite element.
Tensor matmul(const Tensor& a, const Tensor& b);     // a[m,k] * b[k,n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a[k,m]^T * b[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a[m,k] * b[n,k]^T
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// Adds the row vector `bias` (length n) to every row of a[m,n].
Tensor add_row(const Tensor& a, const Tensor& bias);
// Column sums of a[m,n] as a length-n vector.
Tensor sum_rows(const Tensor& a);

double sum(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& a);
double max_abs(const Tensor& a);

void ensure_finite(const Tensor& t, const char* where);

}  // namespace fedquant
