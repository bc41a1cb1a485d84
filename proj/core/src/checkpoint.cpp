#include "psim/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "psim/error.hpp"
#include "psim/hash.hpp"

namespace psim {

namespace {

constexpr std::string_view kWeightsMagic = "PSIMW1";
constexpr std::string_view kLoraMagic = "LORA1";
constexpr std::string_view kHeadMagic = "MLPH1";
constexpr std::string_view kEmbedMagic = "PSIME1";
constexpr std::uint32_t kMaxDim = 1u << 24;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed");
  }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }
  template <typename U>
  void le(U value) {
    static_assert(std::is_unsigned_v<U>);
    std::array<unsigned char, sizeof(U)> buf;
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
    bytes(buf.data(), buf.size());
  }
  void u8(std::uint8_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) { le(v); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(TensorRef<const float> t) {
    u32(static_cast<std::uint32_t>(t.rows));
    u32(static_cast<std::uint32_t>(t.cols));
    for (std::size_t i = 0; i < t.size(); ++i) f32(t.data[i]);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError("truncated checkpoint");
  }
  template <typename U>
  U le() {
    std::array<unsigned char, sizeof(U)> buf;
    bytes(buf.data(), buf.size());
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }
  std::uint8_t u8() { return le<std::uint8_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(le<std::uint32_t>()); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string string() {
    const std::uint32_t n = u32();
    if (n > kMaxDim) throw IoError("string length out of range");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool try_magic(std::string& tag) {
    // Section tags are 5 or 6 bytes; peek the first 5.
    char buf[5];
    in_.read(buf, 5);
    if (in_.gcount() == 0) return false;
    if (in_.gcount() != 5) throw IoError("truncated section tag");
    tag.assign(buf, 5);
    return true;
  }
  void expect_magic(std::string_view m) {
    std::string got(m.size(), '\0');
    bytes(got.data(), m.size());
    if (got != m) throw IoError("bad magic: expected " + std::string(m));
  }
  void tensor(TensorRef<float> t, const std::string& what) {
    const std::uint32_t rows = u32(), cols = u32();
    if (static_cast<int>(rows) != t.rows || static_cast<int>(cols) != t.cols) {
      throw IoError("tensor " + what + " has shape " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", expected " + std::to_string(t.rows) + "x" +
                    std::to_string(t.cols));
    }
    for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = f32();
  }

 private:
  std::istream& in_;
};

Mat<float> read_matrix(Reader& r, const std::string& what) {
  const std::uint32_t rows = r.u32(), cols = r.u32();
  if (rows > kMaxDim || cols > kMaxDim) throw IoError("tensor " + what + " shape out of range");
  Mat<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f32();
  return m;
}

}  // namespace

void write_backbone(std::ostream& out, const Backbone& b) {
  Writer w(out);
  const ViTConfig& c = b.weights.config;
  w.magic(kWeightsMagic);
  w.i32(c.image_size);
  w.i32(c.patch_size);
  w.i32(c.embed_dim);
  w.i32(c.depth);
  w.i32(c.heads);
  w.f64(c.mlp_ratio);
  w.u8(c.cls_source == ClsSource::post_norm ? 1 : 0);
  w.u64(b.weights.init_seed);
  b.weights.for_each_tensor([&](TensorRef<const float> t) { w.tensor(t); });

  if (b.lora) {
    const LoraConfig& lc = b.lora->config;
    w.magic(kLoraMagic);
    w.i32(lc.rank);
    w.f64(lc.alpha);
    w.f64(lc.dropout);
    w.u8(lc.scaling_rule == LoraScaling::alpha ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(lc.targets.size()));
    for (auto t : lc.targets) w.u8(static_cast<std::uint8_t>(t));
    w.u32(static_cast<std::uint32_t>(b.lora->layers.size()));
    for (const auto& layer : b.lora->layers) {
      w.i32(layer.block);
      w.u8(static_cast<std::uint8_t>(layer.target));
      w.f32(layer.scaling);
      w.f32(layer.dropout);
      w.tensor({"a", layer.a.data(), static_cast<int>(layer.a.rows()), static_cast<int>(layer.a.cols())});
      w.tensor({"b", layer.b.data(), static_cast<int>(layer.b.rows()), static_cast<int>(layer.b.cols())});
    }
  }
  if (b.head) {
    w.magic(kHeadMagic);
    b.head->for_each_tensor([&](TensorRef<const float> t) { w.tensor(t); });
  }
}

Backbone read_backbone(std::istream& in) {
  Reader r(in);
  r.expect_magic(kWeightsMagic);
  ViTConfig c;
  c.image_size = r.i32();
  c.patch_size = r.i32();
  c.embed_dim = r.i32();
  c.depth = r.i32();
  c.heads = r.i32();
  c.mlp_ratio = r.f64();
  c.cls_source = r.u8() ? ClsSource::post_norm : ClsSource::pre_norm;
  const std::uint64_t seed = r.u64();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  }
  if (c.depth > 1024 || c.embed_dim > 65536 || c.image_size > 65536) {
    throw IoError("checkpoint header: dimensions out of range");
  }
  Backbone b;
  // Allocate shapes via init with the stored seed, then overwrite every tensor.
  b.weights = init_weights(c, seed);
  b.weights.for_each_tensor([&](TensorRef<float> t) { r.tensor(t, t.name); });

  std::string tag;
  while (r.try_magic(tag)) {
    if (tag == kLoraMagic) {
      LoraAdapters lora;
      lora.config.rank = r.i32();
      lora.config.alpha = r.f64();
      lora.config.dropout = r.f64();
      lora.config.scaling_rule = r.u8() ? LoraScaling::alpha : LoraScaling::alpha_over_rank;
      const std::uint32_t nt = r.u32();
      if (nt > kLoraTargetCount) throw IoError("LORA1: too many targets");
      lora.config.targets.clear();
      for (std::uint32_t i = 0; i < nt; ++i) {
        const std::uint8_t t = r.u8();
        if (t >= kLoraTargetCount) throw IoError("LORA1: bad target id");
        lora.config.targets.push_back(static_cast<LoraTarget>(t));
      }
      const std::uint32_t nl = r.u32();
      if (nl > static_cast<std::uint32_t>(c.depth * kLoraTargetCount)) throw IoError("LORA1: too many layers");
      for (std::uint32_t i = 0; i < nl; ++i) {
        LoraLayer layer;
        layer.block = r.i32();
        const std::uint8_t t = r.u8();
        if (t >= kLoraTargetCount || layer.block < 0 || layer.block >= c.depth) {
          throw IoError("LORA1: bad layer address");
        }
        layer.target = static_cast<LoraTarget>(t);
        layer.scaling = r.f32();
        layer.dropout = r.f32();
        layer.a = read_matrix(r, layer.id() + ".a");
        layer.b = read_matrix(r, layer.id() + ".b");
        const auto& base = b.weights.blocks[layer.block].linear(layer.target);
        if (layer.a.cols() != base.w.cols() || layer.b.rows() != base.w.rows() ||
            layer.a.rows() != layer.b.cols()) {
          throw IoError("LORA1: shape mismatch for " + layer.id());
        }
        lora.layers.push_back(std::move(layer));
      }
      b.lora = std::move(lora);
    } else if (tag == kHeadMagic) {
      MlpHead head;
      head.fc1.w = read_matrix(r, "head.fc1.w");
      head.fc1.b = read_matrix(r, "head.fc1.b").transpose();
      head.fc2.w = read_matrix(r, "head.fc2.w");
      head.fc2.b = read_matrix(r, "head.fc2.b").transpose();
      head.validate();
      if (head.dim() != c.embed_dim) throw IoError("MLPH1: head dim does not match embed_dim");
      b.head = std::move(head);
    } else {
      throw IoError("unknown checkpoint section '" + tag + "'");
    }
  }
  return b;
}

void write_backbone(const std::filesystem::path& path, const Backbone& backbone) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_backbone(out, backbone);
}

Backbone read_backbone(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_backbone(in);
}

void save_model(const std::filesystem::path& dir, const MetricModel& model) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["name"] = model.name;
  j["concat_normalize"] = model.concat_normalize;
  j["backbones"] = nlohmann::json::array();
  for (std::size_t i = 0; i < model.backbones.size(); ++i) {
    const std::string file = "backbone_" + std::to_string(i) + ".psimw";
    write_backbone(dir / file, model.backbones[i]);
    j["backbones"].push_back({{"name", model.backbones[i].name}, {"file", file}});
  }
  std::ofstream out(dir / "model.json");
  if (!out) throw IoError("cannot write " + (dir / "model.json").string());
  out << j.dump(2) << "\n";
}

MetricModel load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw IoError("cannot open " + (dir / "model.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("model.json: " + std::string(e.what()));
  }
  MetricModel model;
  model.name = j.value("name", std::string("metric"));
  model.concat_normalize = j.value("concat_normalize", true);
  for (const auto& entry : j.at("backbones")) {
    Backbone b = read_backbone(dir / entry.at("file").get<std::string>());
    b.name = entry.value("name", std::string("vit"));
    model.backbones.push_back(std::move(b));
  }
  model.validate();
  return model;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingDump& dump) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  Writer w(out);
  w.magic(kEmbedMagic);
  w.u64(static_cast<std::uint64_t>(dump.matrix.rows()));
  w.u32(static_cast<std::uint32_t>(dump.matrix.cols()));
  w.string(dump.model_name);
  for (Eigen::Index i = 0; i < dump.matrix.size(); ++i) w.f32(dump.matrix.data()[i]);
}

EmbeddingDump read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Reader r(in);
  r.expect_magic(kEmbedMagic);
  const std::uint64_t count = r.u64();
  const std::uint32_t dim = r.u32();
  if (count > (1ull << 32) || dim > kMaxDim) throw IoError("embedding dump shape out of range");
  EmbeddingDump dump;
  dump.model_name = r.string();
  dump.matrix.resize(static_cast<Eigen::Index>(count), dim);
  for (Eigen::Index i = 0; i < dump.matrix.size(); ++i) dump.matrix.data()[i] = r.f32();
  return dump;
}

namespace {

void hash_tensor(Fnv1a& h, const TensorRef<const float>& t) {
  h.update(t.name);
  h.update_value(t.rows);
  h.update_value(t.cols);
  h.update(std::as_bytes(std::span(t.data, t.size())));
}

}  // namespace

std::string base_weights_hash(const ViTWeights& weights) {
  Fnv1a h;
  weights.for_each_tensor([&](TensorRef<const float> t) { hash_tensor(h, t); });
  return h.hex();
}

std::string adapters_hash(const MetricModel& model) {
  Fnv1a h;
  for (const auto& b : model.backbones) {
    if (b.lora) b.lora->for_each_tensor([&](TensorRef<const float> t) { hash_tensor(h, t); });
    if (b.head) b.head->for_each_tensor([&](TensorRef<const float> t) { hash_tensor(h, t); });
  }
  return h.hex();
}

std::string model_hash(const MetricModel& model) {
  Fnv1a h;
  h.update(model.name);
  h.update_value(model.concat_normalize);
  for (const auto& b : model.backbones) {
    h.update(b.name);
    h.update(base_weights_hash(b.weights));
  }
  h.update(adapters_hash(model));
  return h.hex();
}

}  // namespace psim
