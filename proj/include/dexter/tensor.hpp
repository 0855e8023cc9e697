#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dexter {

// All dense math in the library runs on row-major doubles so that a
// Tensor's backing array is directly the row-major flat layout used by
// the binary file formats.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Shape-carrying value. Rank 1 maps to a 1 x d0 matrix, rank 2 to d0 x d1,
// rank >= 3 to d0 x (d1*d2*...). Gradients, when present, mirror the shape.
struct Tensor {
  std::vector<int> shape;
  Mat values;
  std::optional<Mat> grad;

  Tensor() = default;

  static std::pair<int64_t, int64_t> matrix_dims(const std::vector<int>& shape) {
    if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
    for (int d : shape)
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
    if (shape.size() == 1) return {1, shape[0]};
    int64_t cols = 1;
    for (size_t i = 1; i < shape.size(); ++i) cols *= shape[i];
    return {shape[0], cols};
  }

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    auto [r, c] = matrix_dims(shape);
    t.shape = std::move(shape);
    t.values = Mat::Zero(r, c);
    return t;
  }

  int64_t size() const {
    return std::accumulate(shape.begin(), shape.end(), int64_t{1},
                           [](int64_t a, int b) { return a * b; });
  }

  bool all_finite() const {
    const double* p = values.data();
    for (int64_t i = 0; i < values.size(); ++i)
      if (!std::isfinite(p[i])) return false;
    return true;
  }

  void ensure_grad() {
    if (!grad) grad = Mat::Zero(values.rows(), values.cols());
  }
};

inline bool mat_all_finite(const Mat& m) {
  const double* p = m.data();
  for (int64_t i = 0; i < m.size(); ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

}  // namespace dexter
