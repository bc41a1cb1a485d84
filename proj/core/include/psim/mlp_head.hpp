#pragma once

#include <cstdint>
#include <functional>

#include "psim/tensor.hpp"

namespace psim {

/// y = x + W2 gelu(W1 x + b1) + b2.
template <typename T>
struct MlpHeadT {
  Linear<T> fc1;  ///< hidden x dim
  Linear<T> fc2;  ///< dim x hidden

  int dim() const { return fc1.in_dim(); }
  int hidden() const { return fc1.out_dim(); }
  std::size_t parameter_count() const;
  MlpHeadT zeros_like() const;
  void validate() const;

  void for_each_tensor(const std::function<void(TensorRef<T>)>& fn);
  void for_each_tensor(const std::function<void(TensorRef<const T>)>& fn) const;

  template <typename U>
  MlpHeadT<U> cast() const;
};

using MlpHead = MlpHeadT<float>;

inline constexpr int kDefaultHeadWidth = 512;

/// fc1 truncated-normal (sigma 0.02), fc2 and both biases zero, so a fresh
/// head is the identity.
MlpHead init_mlp_head(int dim, int hidden, std::uint64_t seed);

template <typename T>
struct MlpHeadCache {
  Vec<T> input;
  Vec<T> pre;
  Vec<T> act;
};

template <typename T>
Vec<T> mlp_head_forward(const MlpHeadT<T>& head, const Vec<T>& x, MlpHeadCache<T>* cache = nullptr);

/// Returns the gradient wrt the input; accumulates parameter gradients into grad if given.
template <typename T>
Vec<T> mlp_head_backward(const MlpHeadT<T>& head, const MlpHeadCache<T>& cache, const Vec<T>& dy,
                         MlpHeadT<T>* grad);

}  // namespace psim
