#include "paratool/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace paratool {

namespace {

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (const int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

thread_local uint64_t g_macs = 0;

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw std::invalid_argument("tensor data length does not match shape");
  }
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::invalid_argument("item() requires a one-element tensor");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (const double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

uint64_t mac_count() { return g_macs; }
void reset_mac_count() { g_macs = 0; }
void add_macs(uint64_t n) { g_macs += n; }

void matmul_into(const Tensor& a, const Tensor& b, Tensor& out, bool transpose_a,
                 bool transpose_b, bool accumulate) {
  const int m = transpose_a ? a.cols() : a.rows();
  const int k = transpose_a ? a.rows() : a.cols();
  const int kb = transpose_b ? b.cols() : b.rows();
  const int n = transpose_b ? b.rows() : b.cols();
  if (k != kb) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  if (out.rows() != m || out.cols() != n) {
    throw std::invalid_argument("matmul: bad output shape");
  }

  double* o = out.data();
  if (!accumulate) {
    for (size_t i = 0; i < out.size(); ++i) o[i] = 0.0;
  }

  const double* pa = a.data();
  const double* pb = b.data();
  const int lda = a.cols();
  const int ldb = b.cols();

  if (!transpose_a && !transpose_b) {
    // C[i,j] += A[i,l] B[l,j]; ikj order keeps B row-contiguous
    for (int i = 0; i < m; ++i) {
      double* orow = o + static_cast<size_t>(i) * n;
      const double* arow = pa + static_cast<size_t>(i) * lda;
      for (int l = 0; l < k; ++l) {
        const double av = arow[l];
        const double* brow = pb + static_cast<size_t>(l) * ldb;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else if (!transpose_a && transpose_b) {
    // C[i,j] += A[i,l] B[j,l]; both operands row-contiguous
    for (int i = 0; i < m; ++i) {
      const double* arow = pa + static_cast<size_t>(i) * lda;
      double* orow = o + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = pb + static_cast<size_t>(j) * ldb;
        double acc = 0.0;
        for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
        orow[j] += acc;
      }
    }
  } else if (transpose_a && !transpose_b) {
    // C[i,j] += A[l,i] B[l,j]
    for (int l = 0; l < k; ++l) {
      const double* arow = pa + static_cast<size_t>(l) * lda;
      const double* brow = pb + static_cast<size_t>(l) * ldb;
      for (int i = 0; i < m; ++i) {
        const double av = arow[i];
        double* orow = o + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else {
    // C[i,j] += A[l,i] B[j,l]
    for (int i = 0; i < m; ++i) {
      double* orow = o + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = pb + static_cast<size_t>(j) * ldb;
        double acc = 0.0;
        for (int l = 0; l < k; ++l) acc += pa[static_cast<size_t>(l) * lda + i] * brow[l];
        orow[j] += acc;
      }
    }
  }

  g_macs += static_cast<uint64_t>(m) * static_cast<uint64_t>(n) * static_cast<uint64_t>(k);
}

}  // namespace paratool
