#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace paratool {

// Dense row-major tensor of doubles, rank 1 or 2 in practice.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-d views; a rank-1 tensor counts as a single row
  int rows() const { return rank() == 2 ? shape_[0] : 1; }
  int cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }
  double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

  // value of a one-element tensor
  double item() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

// Multiply-add counter. Kernels below add m*n*k per matrix product; the flops
// module checks its analytic formulas against these counts.
uint64_t mac_count();
void reset_mac_count();
void add_macs(uint64_t n);

// out = a * b with optional transposes; shapes are the logical (post-transpose)
// operands. accumulate=true adds into out instead of overwriting.
void matmul_into(const Tensor& a, const Tensor& b, Tensor& out, bool transpose_a,
                 bool transpose_b, bool accumulate);

}  // namespace paratool
