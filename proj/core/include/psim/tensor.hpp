#pragma once

#include <cstddef>
#include <string>

#include <Eigen/Core>

namespace psim {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Dense affine map y = W x + b with W stored out x in.
template <typename T>
struct Linear {
  Mat<T> w;
  Vec<T> b;

  int in_dim() const { return static_cast<int>(w.cols()); }
  int out_dim() const { return static_cast<int>(w.rows()); }
};

/// Named flat view over a parameter tensor; rows x cols, row-major.
template <typename T>
struct TensorRef {
  std::string name;
  T* data = nullptr;
  int rows = 0;
  int cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

template <typename T>
TensorRef<T> tensor_ref(std::string name, Mat<T>& m) {
  return {std::move(name), m.data(), static_cast<int>(m.rows()), static_cast<int>(m.cols())};
}

template <typename T>
TensorRef<T> tensor_ref(std::string name, Vec<T>& v) {
  return {std::move(name), v.data(), 1, static_cast<int>(v.size())};
}

}  // namespace psim
