#include "psim/vit.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "psim/error.hpp"
#include "psim/random.hpp"

namespace psim {

std::string_view to_string(ClsSource source) {
  return source == ClsSource::pre_norm ? "pre_norm" : "post_norm";
}

ClsSource cls_source_from_string(std::string_view name) {
  if (name == "pre_norm") return ClsSource::pre_norm;
  if (name == "post_norm") return ClsSource::post_norm;
  throw ValidationError("cls_source must be pre_norm or post_norm, got '" + std::string(name) + "'");
}

void ViTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("ViTConfig." + msg); };
  if (image_size < 8) fail("image_size must be >= 8");
  if (patch_size < 1) fail("patch_size must be >= 1");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (embed_dim < 1 || heads < 1) fail("embed_dim and heads must be positive");
  if (embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
  if (depth < 1) fail("depth must be >= 1");
  if (!(mlp_ratio > 0.0) || mlp_dim() < 1) fail("mlp_ratio must give a positive hidden width");
}

void to_json(nlohmann::json& j, const ViTConfig& c) {
  j = {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
       {"depth", c.depth},           {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio},
       {"cls_source", to_string(c.cls_source)}};
}

void from_json(const nlohmann::json& j, ViTConfig& c) {
  ViTConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.depth = j.value("depth", d.depth);
  c.heads = j.value("heads", d.heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.cls_source = cls_source_from_string(j.value("cls_source", std::string(to_string(d.cls_source))));
}

template <typename T>
Linear<T>& Block<T>::linear(LoraTarget target) {
  switch (target) {
    case LoraTarget::q: return q;
    case LoraTarget::k: return k;
    case LoraTarget::v: return v;
    case LoraTarget::o: return o;
    case LoraTarget::fc1: return fc1;
    case LoraTarget::fc2: return fc2;
  }
  return q;
}

template <typename T>
const Linear<T>& Block<T>::linear(LoraTarget target) const {
  return const_cast<Block*>(this)->linear(target);
}

namespace {

template <typename T, typename Fn>
void visit_tensors(ViTWeightsT<T>& w, Fn&& fn) {
  fn("patch.w", w.patch.w);
  fn("patch.b", w.patch.b);
  fn("positional", w.positional);
  fn("cls", w.cls);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    auto& b = w.blocks[i];
    const std::string p = "block" + std::to_string(i) + ".";
    fn(p + "ln1.scale", b.ln1_scale);
    fn(p + "ln1.offset", b.ln1_offset);
    for (int t = 0; t < kLoraTargetCount; ++t) {
      const auto target = static_cast<LoraTarget>(t);
      if (target == LoraTarget::fc1) {
        fn(p + "ln2.scale", b.ln2_scale);
        fn(p + "ln2.offset", b.ln2_offset);
      }
      auto& lin = b.linear(target);
      const std::string name = p + std::string(to_string(target));
      fn(name + ".w", lin.w);
      fn(name + ".b", lin.b);
    }
  }
  fn("final.scale", w.final_scale);
  fn("final.offset", w.final_offset);
}

}  // namespace

template <typename T>
void ViTWeightsT<T>::for_each_tensor(const std::function<void(TensorRef<T>)>& fn) {
  visit_tensors(*this, [&](std::string name, auto& t) { fn(tensor_ref(std::move(name), t)); });
}

template <typename T>
void ViTWeightsT<T>::for_each_tensor(const std::function<void(TensorRef<const T>)>& fn) const {
  visit_tensors(const_cast<ViTWeightsT&>(*this), [&](std::string name, auto& t) {
    const bool is_vec = t.cols() == 1;
    fn({std::move(name), t.data(), is_vec ? 1 : static_cast<int>(t.rows()),
        is_vec ? static_cast<int>(t.size()) : static_cast<int>(t.cols())});
  });
}

template <typename T>
std::size_t ViTWeightsT<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](TensorRef<const T> t) { n += t.size(); });
  return n;
}

template <typename T>
ViTWeightsT<T> ViTWeightsT<T>::zeros_like() const {
  ViTWeightsT out = *this;
  out.for_each_tensor([](TensorRef<T> t) { std::fill(t.data, t.data + t.size(), T(0)); });
  return out;
}

template <typename T>
template <typename U>
ViTWeightsT<U> ViTWeightsT<T>::cast() const {
  ViTWeightsT<U> out;
  out.config = config;
  out.init_seed = init_seed;
  auto lin = [](const Linear<T>& l) { return Linear<U>{l.w.template cast<U>(), l.b.template cast<U>()}; };
  out.patch = lin(patch);
  out.positional = positional.template cast<U>();
  out.cls = cls.template cast<U>();
  for (const auto& b : blocks) {
    Block<U> nb;
    nb.ln1_scale = b.ln1_scale.template cast<U>();
    nb.ln1_offset = b.ln1_offset.template cast<U>();
    nb.q = lin(b.q);
    nb.k = lin(b.k);
    nb.v = lin(b.v);
    nb.o = lin(b.o);
    nb.ln2_scale = b.ln2_scale.template cast<U>();
    nb.ln2_offset = b.ln2_offset.template cast<U>();
    nb.fc1 = lin(b.fc1);
    nb.fc2 = lin(b.fc2);
    out.blocks.push_back(std::move(nb));
  }
  out.final_scale = final_scale.template cast<U>();
  out.final_offset = final_offset.template cast<U>();
  return out;
}

std::size_t vit_parameter_count(const ViTConfig& c) {
  const std::size_t d = c.embed_dim;
  const std::size_t m = c.mlp_dim();
  const std::size_t per_block = 2 * d + 4 * (d * d + d) + 2 * d + (d * m + m) + (m * d + d);
  return d * c.patch_dim() + d + c.tokens() * d + d + c.depth * per_block + 2 * d;
}

ViTWeights init_weights(const ViTConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  constexpr double kSigma = 0.02;
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.truncated_normal(kSigma));
  };
  auto linear = [&](int out, int in) {
    Linear<float> l{Mat<float>(out, in), Vec<float>::Zero(out)};
    fill(l.w);
    return l;
  };
  const int d = config.embed_dim;
  ViTWeights w;
  w.config = config;
  w.init_seed = seed;
  w.patch = linear(d, config.patch_dim());
  w.positional.resize(config.tokens(), d);
  fill(w.positional);
  w.cls.resize(d);
  fill(w.cls);
  for (int i = 0; i < config.depth; ++i) {
    Block<float> b;
    b.ln1_scale = Vec<float>::Ones(d);
    b.ln1_offset = Vec<float>::Zero(d);
    b.q = linear(d, d);
    b.k = linear(d, d);
    b.v = linear(d, d);
    b.o = linear(d, d);
    b.ln2_scale = Vec<float>::Ones(d);
    b.ln2_offset = Vec<float>::Zero(d);
    b.fc1 = linear(config.mlp_dim(), d);
    b.fc2 = linear(d, config.mlp_dim());
    w.blocks.push_back(std::move(b));
  }
  w.final_scale = Vec<float>::Ones(d);
  w.final_offset = Vec<float>::Zero(d);
  return w;
}

template <typename T>
void validate_weights(const ViTWeightsT<T>& w) {
  const ViTConfig& c = w.config;
  c.validate();
  auto expect = [](const std::string& name, Eigen::Index rows, Eigen::Index cols, Eigen::Index er,
                   Eigen::Index ec) {
    if (rows != er || cols != ec) {
      throw ValidationError("tensor " + name + " has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", expected " + std::to_string(er) + "x" +
                            std::to_string(ec));
    }
  };
  const int d = c.embed_dim, m = c.mlp_dim();
  if (static_cast<int>(w.blocks.size()) != c.depth) throw ValidationError("block count != depth");
  expect("patch.w", w.patch.w.rows(), w.patch.w.cols(), d, c.patch_dim());
  expect("positional", w.positional.rows(), w.positional.cols(), c.tokens(), d);
  expect("cls", w.cls.size(), 1, d, 1);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    const auto& b = w.blocks[i];
    const std::string p = "block" + std::to_string(i) + ".";
    for (auto t : {LoraTarget::q, LoraTarget::k, LoraTarget::v, LoraTarget::o}) {
      expect(p + std::string(to_string(t)), b.linear(t).w.rows(), b.linear(t).w.cols(), d, d);
    }
    expect(p + "fc1", b.fc1.w.rows(), b.fc1.w.cols(), m, d);
    expect(p + "fc2", b.fc2.w.rows(), b.fc2.w.cols(), d, m);
  }
  w.for_each_tensor([](TensorRef<const T> t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(static_cast<double>(t.data[i]))) {
        throw ValidationError("tensor " + t.name + " has a non-finite entry at " + std::to_string(i));
      }
    }
  });
}

namespace {

template <typename T>
Mat<T> affine(const Linear<T>& l, const Mat<T>& x) {
  Mat<T> y = x * l.w.transpose();
  y.rowwise() += l.b.transpose();
  return y;
}

template <typename T>
void layer_norm(const Mat<T>& x, const Vec<T>& scale, const Vec<T>& offset, Mat<T>& hat,
                Vec<T>& rstd, Mat<T>& out) {
  const Eigen::Index n = x.rows(), d = x.cols();
  hat.resize(n, d);
  rstd.resize(n);
  out.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    const T r = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd[i] = r;
    hat.row(i) = (x.row(i).array() - mean) * r;
    out.row(i) = hat.row(i).cwiseProduct(scale.transpose()) + offset.transpose();
  }
}

// Gradient through y = hat * scale + offset back to x.
template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& hat, const Vec<T>& rstd,
                           const Vec<T>& scale, Vec<T>* dscale, Vec<T>* doffset) {
  if (dscale) *dscale += (dy.cwiseProduct(hat)).colwise().sum().transpose();
  if (doffset) *doffset += dy.colwise().sum().transpose();
  Mat<T> dhat = dy.array().rowwise() * scale.transpose().array();
  const T inv_d = T(1) / static_cast<T>(dy.cols());
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T mean_dhat = dhat.row(i).sum() * inv_d;
    const T mean_dhat_hat = dhat.row(i).dot(hat.row(i)) * inv_d;
    dx.row(i) = rstd[i] * (dhat.row(i).array() - mean_dhat - hat.row(i).array() * mean_dhat_hat);
  }
  return dx;
}

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

// Base affine map plus the optional low-rank update.
template <typename T>
Mat<T> adapted(const Linear<T>& l, const LoraLayerT<T>* lora, const Mat<T>& x,
               const ForwardOptions& options, int block,
               typename ForwardCache<T>::LoraCache* cache) {
  Mat<T> y = affine(l, x);
  if (!lora) return y;
  Mat<T> dropped;
  Mat<T> keep;
  if (options.training && lora->dropout > T(0)) {
    const std::uint64_t key = lora_layer_key(options.dropout_key, block, lora->target);
    keep.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < keep.size(); ++i) {
      keep.data()[i] = static_cast<T>(
          dropout_keep_scale(key, static_cast<std::uint64_t>(i), static_cast<double>(lora->dropout)));
    }
    dropped = x.cwiseProduct(keep);
  } else {
    dropped = x;
  }
  Mat<T> down = dropped * lora->a.transpose();
  y.noalias() += lora->scaling * (down * lora->b.transpose());
  if (cache) {
    cache->dropped = std::move(dropped);
    cache->keep_scale = std::move(keep);
    cache->down = std::move(down);
  }
  return y;
}

template <typename T>
Mat<T> adapted_backward(const Linear<T>& l, const LoraLayerT<T>* lora,
                        const typename ForwardCache<T>::LoraCache& cache, const Mat<T>& x,
                        const Mat<T>& dy, Linear<T>* dl, LoraLayerT<T>* dlora) {
  if (dl) {
    dl->w.noalias() += dy.transpose() * x;
    dl->b += dy.colwise().sum().transpose();
  }
  Mat<T> dx = dy * l.w;
  if (lora) {
    if (dlora) dlora->b.noalias() += lora->scaling * (dy.transpose() * cache.down);
    const Mat<T> ddown = lora->scaling * (dy * lora->b);
    if (dlora) dlora->a.noalias() += ddown.transpose() * cache.dropped;
    Mat<T> ddropped = ddown * lora->a;
    if (cache.keep_scale.size() > 0) ddropped = ddropped.cwiseProduct(cache.keep_scale);
    dx += ddropped;
  }
  return dx;
}

template <typename T>
void check_finite(const Mat<T>& m, const char* stage, int block) {
  if (!m.allFinite()) {
    throw NumericError(std::string("non-finite ") + stage + " in layer " + std::to_string(block));
  }
}

template <typename T>
const LoraLayerT<T>* lora_at(const LoraAdaptersT<T>* adapters, int block, LoraTarget t) {
  return adapters ? adapters->find(block, t) : nullptr;
}

}  // namespace

template <typename T>
std::vector<T> image_pixels(const ViTConfig& config, const Image& image) {
  if (image.height() != config.image_size || image.width() != config.image_size) {
    throw ValidationError("backbone expects " + std::to_string(config.image_size) + "x" +
                          std::to_string(config.image_size) + " input, got " +
                          std::to_string(image.height()) + "x" + std::to_string(image.width()));
  }
  const auto data = image.data();
  return std::vector<T>(data.begin(), data.end());
}

template <typename T>
Vec<T> forward_cls(const ViTWeightsT<T>& w, std::span<const T> pixels,
                   const LoraAdaptersT<T>* adapters, const ForwardOptions& options,
                   ForwardCache<T>* cache) {
  const ViTConfig& c = w.config;
  const int s = c.image_size, p = c.patch_size, g = c.grid(), d = c.embed_dim;
  const int tokens = c.tokens(), heads = c.heads, hd = c.head_dim();
  if (pixels.size() != static_cast<std::size_t>(s) * s * 3) {
    throw ValidationError("backbone expects " + std::to_string(s) + "x" + std::to_string(s) +
                          "x3 pixels, got " + std::to_string(pixels.size()) + " values");
  }

  Mat<T> patches(c.patch_count(), c.patch_dim());
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      T* row = patches.row(gy * g + gx).data();
      for (int py = 0; py < p; ++py) {
        const T* src = pixels.data() + ((static_cast<std::size_t>(gy) * p + py) * s + gx * p) * 3;
        for (int i = 0; i < p * 3; ++i) row[py * p * 3 + i] = src[i] - T(0.5);
      }
    }
  }

  Mat<T> x(tokens, d);
  x.row(0) = w.cls.transpose();
  x.bottomRows(tokens - 1) = affine(w.patch, patches);
  x += w.positional;

  if (cache) {
    cache->patches = std::move(patches);
    cache->blocks.assign(w.blocks.size(), {});
  }
  const T att_scale = T(1) / std::sqrt(static_cast<T>(hd));

  for (int bi = 0; bi < static_cast<int>(w.blocks.size()); ++bi) {
    const Block<T>& b = w.blocks[bi];
    typename ForwardCache<T>::BlockCache local;
    auto& bc = cache ? cache->blocks[bi] : local;
    auto lc = [&](LoraTarget t) { return cache ? &bc.lora[static_cast<int>(t)] : nullptr; };

    layer_norm(x, b.ln1_scale, b.ln1_offset, bc.ln1_hat, bc.ln1_rstd, bc.u1);
    bc.q = adapted(b.q, lora_at(adapters, bi, LoraTarget::q), bc.u1, options, bi, lc(LoraTarget::q));
    bc.k = adapted(b.k, lora_at(adapters, bi, LoraTarget::k), bc.u1, options, bi, lc(LoraTarget::k));
    bc.v = adapted(b.v, lora_at(adapters, bi, LoraTarget::v), bc.u1, options, bi, lc(LoraTarget::v));

    bc.z.resize(tokens, d);
    bc.probs.resize(heads);
    for (int h = 0; h < heads; ++h) {
      Mat<T> scores = (bc.q.middleCols(h * hd, hd) * bc.k.middleCols(h * hd, hd).transpose()) * att_scale;
      for (int i = 0; i < tokens; ++i) {
        const T mx = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - mx).exp();
        scores.row(i) /= scores.row(i).sum();
      }
      bc.z.middleCols(h * hd, hd).noalias() = scores * bc.v.middleCols(h * hd, hd);
      bc.probs[h] = std::move(scores);
    }
    x += adapted(b.o, lora_at(adapters, bi, LoraTarget::o), bc.z, options, bi, lc(LoraTarget::o));

    layer_norm(x, b.ln2_scale, b.ln2_offset, bc.ln2_hat, bc.ln2_rstd, bc.u2);
    bc.h_pre = adapted(b.fc1, lora_at(adapters, bi, LoraTarget::fc1), bc.u2, options, bi,
                       lc(LoraTarget::fc1));
    bc.h_act = bc.h_pre.unaryExpr([](T v) { return gelu(v); });
    x += adapted(b.fc2, lora_at(adapters, bi, LoraTarget::fc2), bc.h_act, options, bi,
                 lc(LoraTarget::fc2));
    check_finite(x, "activation", bi);
  }

  RowVec<T> cls_row = x.row(0);
  Vec<T> out;
  if (c.cls_source == ClsSource::post_norm) {
    Mat<T> row = cls_row, hat, y;
    Vec<T> rstd;
    layer_norm(row, w.final_scale, w.final_offset, hat, rstd, y);
    out = y.row(0).transpose();
    if (cache) {
      cache->final_hat = hat.row(0);
      cache->final_rstd = rstd[0];
    }
  } else {
    out = cls_row.transpose();
  }
  if (cache) cache->cls_final = cls_row;
  return out;
}

Vec<float> forward_cls(const ViTWeights& weights, const Image& image, const LoraAdapters* adapters) {
  const auto pixels = image_pixels<float>(weights.config, image);
  return forward_cls<float>(weights, pixels, adapters, {}, nullptr);
}

template <typename T>
void backward(const ViTWeightsT<T>& w, const LoraAdaptersT<T>* adapters,
              const ForwardCache<T>& cache, const Vec<T>& grad_cls, BackwardTargets<T> targets) {
  const ViTConfig& c = w.config;
  const int tokens = c.tokens(), d = c.embed_dim, heads = c.heads, hd = c.head_dim();
  if (grad_cls.size() != d) throw ValidationError("backward: upstream gradient length mismatch");
  if (cache.blocks.size() != w.blocks.size()) throw ValidationError("backward: cache not filled");
  ViTWeightsT<T>* gw = targets.weights;
  LoraAdaptersT<T>* gl = targets.adapters;

  Mat<T> dx = Mat<T>::Zero(tokens, d);
  if (c.cls_source == ClsSource::post_norm) {
    Mat<T> dy = grad_cls.transpose();
    Mat<T> hat = cache.final_hat;
    Vec<T> rstd(1);
    rstd[0] = cache.final_rstd;
    dx.row(0) = layer_norm_backward<T>(dy, hat, rstd, w.final_scale, gw ? &gw->final_scale : nullptr,
                                       gw ? &gw->final_offset : nullptr)
                    .row(0);
  } else {
    dx.row(0) = grad_cls.transpose();
  }

  const T att_scale = T(1) / std::sqrt(static_cast<T>(hd));
  for (int bi = static_cast<int>(w.blocks.size()) - 1; bi >= 0; --bi) {
    const Block<T>& b = w.blocks[bi];
    const auto& bc = cache.blocks[bi];
    Block<T>* gb = gw ? &gw->blocks[bi] : nullptr;
    auto run = [&](LoraTarget t, const Mat<T>& input, const Mat<T>& dy) {
      LoraLayerT<T>* dlora = gl ? gl->find(bi, t) : nullptr;
      return adapted_backward(b.linear(t), lora_at(adapters, bi, t), bc.lora[static_cast<int>(t)],
                              input, dy, gb ? &gb->linear(t) : nullptr, dlora);
    };

    Mat<T> dh = run(LoraTarget::fc2, bc.h_act, dx);
    for (Eigen::Index i = 0; i < dh.size(); ++i) dh.data()[i] *= gelu_grad(bc.h_pre.data()[i]);
    const Mat<T> du2 = run(LoraTarget::fc1, bc.u2, dh);
    dx += layer_norm_backward<T>(du2, bc.ln2_hat, bc.ln2_rstd, b.ln2_scale,
                                 gb ? &gb->ln2_scale : nullptr, gb ? &gb->ln2_offset : nullptr);

    const Mat<T> dz = run(LoraTarget::o, bc.z, dx);
    Mat<T> dq(tokens, d), dk(tokens, d), dv(tokens, d);
    for (int h = 0; h < heads; ++h) {
      const Mat<T>& prob = bc.probs[h];
      const Mat<T> dzh = dz.middleCols(h * hd, hd);
      dv.middleCols(h * hd, hd).noalias() = prob.transpose() * dzh;
      Mat<T> dp = dzh * bc.v.middleCols(h * hd, hd).transpose();
      for (int i = 0; i < tokens; ++i) {
        const T dot = dp.row(i).dot(prob.row(i));
        dp.row(i) = prob.row(i).array() * (dp.row(i).array() - dot);
      }
      dq.middleCols(h * hd, hd).noalias() = (dp * bc.k.middleCols(h * hd, hd)) * att_scale;
      dk.middleCols(h * hd, hd).noalias() = (dp.transpose() * bc.q.middleCols(h * hd, hd)) * att_scale;
    }
    Mat<T> du1 = run(LoraTarget::q, bc.u1, dq);
    du1 += run(LoraTarget::k, bc.u1, dk);
    du1 += run(LoraTarget::v, bc.u1, dv);
    dx += layer_norm_backward<T>(du1, bc.ln1_hat, bc.ln1_rstd, b.ln1_scale,
                                 gb ? &gb->ln1_scale : nullptr, gb ? &gb->ln1_offset : nullptr);
    check_finite(dx, "gradient", bi);
  }

  const auto dpatch_tokens = dx.bottomRows(tokens - 1);
  if (gw) {
    gw->positional += dx;
    gw->cls += dx.row(0).transpose();
    gw->patch.w.noalias() += dpatch_tokens.transpose() * cache.patches;
    gw->patch.b += dpatch_tokens.colwise().sum().transpose();
  }
  if (targets.pixels) {
    const int s = c.image_size, p = c.patch_size, g = c.grid();
    const Mat<T> dpatches = dpatch_tokens * w.patch.w;
    auto& out = *targets.pixels;
    out.resize(static_cast<std::size_t>(s) * s * 3, T(0));
    for (int gy = 0; gy < g; ++gy) {
      for (int gx = 0; gx < g; ++gx) {
        const T* row = dpatches.row(gy * g + gx).data();
        for (int py = 0; py < p; ++py) {
          T* dst = out.data() + ((static_cast<std::size_t>(gy) * p + py) * s + gx * p) * 3;
          for (int i = 0; i < p * 3; ++i) dst[i] += row[py * p * 3 + i];
        }
      }
    }
  }
}

template struct Block<float>;
template struct Block<double>;
template struct ViTWeightsT<float>;
template struct ViTWeightsT<double>;
template ViTWeightsT<double> ViTWeightsT<float>::cast<double>() const;
template ViTWeightsT<float> ViTWeightsT<double>::cast<float>() const;
template ViTWeightsT<float> ViTWeightsT<float>::cast<float>() const;
template void validate_weights(const ViTWeightsT<float>&);
template void validate_weights(const ViTWeightsT<double>&);
template std::vector<float> image_pixels(const ViTConfig&, const Image&);
template std::vector<double> image_pixels(const ViTConfig&, const Image&);
template Vec<float> forward_cls(const ViTWeightsT<float>&, std::span<const float>,
                                const LoraAdaptersT<float>*, const ForwardOptions&,
                                ForwardCache<float>*);
template Vec<double> forward_cls(const ViTWeightsT<double>&, std::span<const double>,
                                 const LoraAdaptersT<double>*, const ForwardOptions&,
                                 ForwardCache<double>*);
template void backward(const ViTWeightsT<float>&, const LoraAdaptersT<float>*,
                       const ForwardCache<float>&, const Vec<float>&, BackwardTargets<float>);
template void backward(const ViTWeightsT<double>&, const LoraAdaptersT<double>*,
                       const ForwardCache<double>&, const Vec<double>&, BackwardTargets<double>);

}  // namespace psim
