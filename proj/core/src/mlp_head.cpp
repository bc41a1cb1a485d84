#include "psim/mlp_head.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "psim/error.hpp"
#include "psim/random.hpp"

namespace psim {

namespace {

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

}  // namespace

template <typename T>
std::size_t MlpHeadT<T>::parameter_count() const {
  return fc1.w.size() + fc1.b.size() + fc2.w.size() + fc2.b.size();
}

template <typename T>
MlpHeadT<T> MlpHeadT<T>::zeros_like() const {
  MlpHeadT out = *this;
  out.fc1.w.setZero();
  out.fc1.b.setZero();
  out.fc2.w.setZero();
  out.fc2.b.setZero();
  return out;
}

template <typename T>
void MlpHeadT<T>::validate() const {
  if (fc1.w.rows() != fc1.b.size() || fc2.w.rows() != fc2.b.size() ||
      fc2.w.cols() != fc1.w.rows() || fc2.w.rows() != fc1.w.cols()) {
    throw ValidationError("MLP head shapes are inconsistent (residual needs out dim == in dim)");
  }
}

template <typename T>
void MlpHeadT<T>::for_each_tensor(const std::function<void(TensorRef<T>)>& fn) {
  fn(tensor_ref("head.fc1.w", fc1.w));
  fn(tensor_ref("head.fc1.b", fc1.b));
  fn(tensor_ref("head.fc2.w", fc2.w));
  fn(tensor_ref("head.fc2.b", fc2.b));
}

template <typename T>
void MlpHeadT<T>::for_each_tensor(const std::function<void(TensorRef<const T>)>& fn) const {
  const_cast<MlpHeadT*>(this)->for_each_tensor(
      [&](TensorRef<T> t) { fn({t.name, t.data, t.rows, t.cols}); });
}

template <typename T>
template <typename U>
MlpHeadT<U> MlpHeadT<T>::cast() const {
  return {{fc1.w.template cast<U>(), fc1.b.template cast<U>()},
          {fc2.w.template cast<U>(), fc2.b.template cast<U>()}};
}

MlpHead init_mlp_head(int dim, int hidden, std::uint64_t seed) {
  if (dim < 1 || hidden < 1) throw ValidationError("MLP head dims must be positive");
  Rng rng(seed);
  MlpHead head;
  head.fc1.w.resize(hidden, dim);
  for (Eigen::Index i = 0; i < head.fc1.w.size(); ++i) {
    head.fc1.w.data()[i] = static_cast<float>(rng.truncated_normal(0.02));
  }
  head.fc1.b = Vec<float>::Zero(hidden);
  head.fc2.w = Mat<float>::Zero(dim, hidden);
  head.fc2.b = Vec<float>::Zero(dim);
  return head;
}

template <typename T>
Vec<T> mlp_head_forward(const MlpHeadT<T>& head, const Vec<T>& x, MlpHeadCache<T>* cache) {
  if (x.size() != head.dim()) {
    throw ValidationError("MLP head expects length " + std::to_string(head.dim()) + ", got " +
                          std::to_string(x.size()));
  }
  Vec<T> pre = head.fc1.w * x + head.fc1.b;
  Vec<T> act = pre.unaryExpr([](T v) { return gelu(v); });
  Vec<T> y = x + head.fc2.w * act + head.fc2.b;
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

template <typename T>
Vec<T> mlp_head_backward(const MlpHeadT<T>& head, const MlpHeadCache<T>& cache, const Vec<T>& dy,
                         MlpHeadT<T>* grad) {
  if (grad) {
    grad->fc2.w.noalias() += dy * cache.act.transpose();
    grad->fc2.b += dy;
  }
  Vec<T> dpre = head.fc2.w.transpose() * dy;
  for (Eigen::Index i = 0; i < dpre.size(); ++i) dpre[i] *= gelu_grad(cache.pre[i]);
  if (grad) {
    grad->fc1.w.noalias() += dpre * cache.input.transpose();
    grad->fc1.b += dpre;
  }
  return dy + head.fc1.w.transpose() * dpre;
}

template struct MlpHeadT<float>;
template struct MlpHeadT<double>;
template MlpHeadT<double> MlpHeadT<float>::cast<double>() const;
template MlpHeadT<float> MlpHeadT<double>::cast<float>() const;
template MlpHeadT<float> MlpHeadT<float>::cast<float>() const;
template Vec<float> mlp_head_forward(const MlpHeadT<float>&, const Vec<float>&, MlpHeadCache<float>*);
template Vec<double> mlp_head_forward(const MlpHeadT<double>&, const Vec<double>&,
                                      MlpHeadCache<double>*);
template Vec<float> mlp_head_backward(const MlpHeadT<float>&, const MlpHeadCache<float>&,
                                      const Vec<float>&, MlpHeadT<float>*);
template Vec<double> mlp_head_backward(const MlpHeadT<double>&, const MlpHeadCache<double>&,
                                       const Vec<double>&, MlpHeadT<double>*);

}  // namespace psim
