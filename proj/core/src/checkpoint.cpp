#include "flmg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "wire.hpp"

namespace flmg::io {

namespace {

using namespace wire;

constexpr char kMagic[4] = {'F', 'L', 'M', 'G'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kKindClassifier = 0;
constexpr std::uint8_t kKindEpsNet = 1;

void put_header(std::vector<std::uint8_t>& b, std::uint8_t kind, const CheckpointMeta& meta) {
  b.insert(b.end(), kMagic, kMagic + 4);
  put_u16(b, kVersion);
  put_u8(b, kind);
  put_i64(b, meta.client_id);
  put_u64(b, meta.seed);
  put_i64(b, meta.train_epochs);
}

std::uint8_t read_header(Reader& r, CheckpointMeta* meta) {
  r.need(4);
  if (std::memcmp(r.b.data(), kMagic, 4) != 0) throw CheckpointError("bad magic");
  r.pos += 4;
  const std::uint16_t version = r.u16();
  if (version != kVersion)
    throw CheckpointError("checkpoint version mismatch: got " + std::to_string(version));
  const std::uint8_t kind = r.u8();
  CheckpointMeta m;
  m.client_id = r.i64();
  m.seed = r.u64();
  m.train_epochs = r.i64();
  if (meta) *meta = m;
  return kind;
}

void put_layers(std::vector<std::uint8_t>& b, const std::vector<nn::LayerSpec>& layers) {
  put_u32(b, static_cast<std::uint32_t>(layers.size()));
  for (const auto& s : layers) {
    put_u8(b, static_cast<std::uint8_t>(s.kind));
    switch (s.kind) {
      case nn::LayerKind::Linear:
        put_i32(b, s.in_dim);
        put_i32(b, s.out_dim);
        break;
      case nn::LayerKind::BatchNorm:
        put_i32(b, s.dim);
        put_f64(b, s.momentum);
        put_f64(b, s.eps);
        break;
      case nn::LayerKind::ReLU:
        break;
    }
  }
}

std::vector<nn::LayerSpec> read_layers(Reader& r) {
  const std::uint32_t n = r.u32();
  std::vector<nn::LayerSpec> layers;
  layers.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint8_t kind = r.u8();
    switch (kind) {
      case 0: {
        const std::int32_t in = r.i32();
        const std::int32_t out = r.i32();
        layers.push_back(nn::LayerSpec::linear(in, out));
        break;
      }
      case 1: {
        const std::int32_t dim = r.i32();
        const double momentum = r.f64();
        const double eps = r.f64();
        layers.push_back(nn::LayerSpec::batch_norm(dim, momentum, eps));
        break;
      }
      case 2:
        layers.push_back(nn::LayerSpec::relu());
        break;
      default:
        throw CheckpointError("unknown layer kind " + std::to_string(kind));
    }
  }
  return layers;
}

void put_model_body(std::vector<std::uint8_t>& b, const nn::ClassifierModel& model) {
  put_layers(b, model.layers());
  const auto params = model.params();
  put_u64(b, params.size());
  for (double v : params) put_f64(b, v);
  const auto& stats = model.bn_stats();
  put_u32(b, static_cast<std::uint32_t>(stats.size()));
  for (const auto& st : stats) {
    put_u32(b, static_cast<std::uint32_t>(st.mean.size()));
    for (double v : st.mean) put_f64(b, v);
    for (double v : st.var) put_f64(b, v);
  }
}

nn::ClassifierModel read_model_body(Reader& r) {
  auto layers = read_layers(r);
  nn::ClassifierModel model(std::move(layers), std::uint64_t{0});
  const std::uint64_t pcount = r.u64();
  if (pcount != model.param_count())
    throw CheckpointError("parameter blob length mismatch against arch descriptor");
  auto params = model.mutable_params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = r.f64();
  const std::uint32_t nbn = r.u32();
  if (nbn != static_cast<std::uint32_t>(model.num_bn_layers()))
    throw CheckpointError("BN stats count mismatch against arch descriptor");
  std::vector<nn::BnStats> stats(nbn);
  for (std::uint32_t l = 0; l < nbn; ++l) {
    const std::uint32_t dim = r.u32();
    if (dim != model.bn_stats()[l].mean.size())
      throw CheckpointError("BN stats dim mismatch against arch descriptor");
    stats[l].mean.resize(dim);
    stats[l].var.resize(dim);
    for (auto& v : stats[l].mean) v = r.f64();
    for (auto& v : stats[l].var) v = r.f64();
  }
  if (nbn > 0) model.set_bn_stats(std::move(stats));
  return model;
}

}  // namespace

std::vector<std::uint8_t> serialize_classifier(const nn::ClassifierModel& model,
                                               const CheckpointMeta& meta) {
  std::vector<std::uint8_t> b;
  b.reserve(classifier_checkpoint_bytes(model));
  put_header(b, kKindClassifier, meta);
  put_model_body(b, model);
  return b;
}

nn::ClassifierModel deserialize_classifier(const std::vector<std::uint8_t>& bytes,
                                           CheckpointMeta* meta) {
  Reader r{bytes};
  if (read_header(r, meta) != kKindClassifier)
    throw CheckpointError("checkpoint holds a different model kind");
  nn::ClassifierModel model = read_model_body(r);
  r.done();
  return model;
}

std::size_t classifier_checkpoint_bytes(const nn::ClassifierModel& model) {
  std::size_t n = 4 + 2 + 1 + 24;  // magic, version, kind, meta
  n += 4;                          // layer count
  for (const auto& s : model.layers()) {
    n += 1;
    if (s.kind == nn::LayerKind::Linear) n += 8;
    if (s.kind == nn::LayerKind::BatchNorm) n += 20;
  }
  n += 8 + 8 * model.param_count();
  n += 4;
  for (const auto& st : model.bn_stats()) n += 4 + 16 * st.mean.size();
  return n;
}

std::vector<std::uint8_t> serialize_epsnet(const diffusion::EpsNet& net,
                                           const CheckpointMeta& meta) {
  std::vector<std::uint8_t> b;
  put_header(b, kKindEpsNet, meta);
  const auto& cfg = net.config();
  put_i32(b, cfg.data_dim);
  put_i32(b, cfg.num_classes);
  put_i32(b, cfg.emb_dim);
  put_u8(b, cfg.input_skip ? 1 : 0);
  put_u32(b, static_cast<std::uint32_t>(cfg.hidden.size()));
  for (int h : cfg.hidden) put_i32(b, h);
  put_model_body(b, net.trunk());
  const auto embed = net.embedding();
  put_u64(b, embed.size());
  for (double v : embed) put_f64(b, v);
  return b;
}

diffusion::EpsNet deserialize_epsnet(const std::vector<std::uint8_t>& bytes,
                                     CheckpointMeta* meta) {
  Reader r{bytes};
  if (read_header(r, meta) != kKindEpsNet)
    throw CheckpointError("checkpoint holds a different model kind");
  diffusion::EpsNetConfig cfg;
  cfg.data_dim = r.i32();
  cfg.num_classes = r.i32();
  cfg.emb_dim = r.i32();
  cfg.input_skip = r.u8() != 0;
  const std::uint32_t nh = r.u32();
  cfg.hidden.resize(nh);
  for (auto& h : cfg.hidden) h = r.i32();
  diffusion::EpsNet net(cfg, 0);
  nn::ClassifierModel trunk = read_model_body(r);
  if (trunk.layers() != net.trunk().layers())
    throw CheckpointError("eps net trunk arch mismatch against config block");
  auto dst = net.trunk().mutable_params();
  const auto src = trunk.params();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i];
  const std::uint64_t ecount = r.u64();
  auto embed = net.mutable_embedding();
  if (ecount != embed.size()) throw CheckpointError("embedding blob length mismatch");
  for (std::size_t i = 0; i < embed.size(); ++i) embed[i] = r.f64();
  r.done();
  return net;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw CheckpointError("cannot open for reading: " + path);
  const std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw CheckpointError("read failed: " + path);
  return bytes;
}

void save_classifier(const nn::ClassifierModel& model, const CheckpointMeta& meta,
                     const std::string& path) {
  write_file(path, serialize_classifier(model, meta));
}

nn::ClassifierModel load_classifier(const std::string& path, CheckpointMeta* meta) {
  return deserialize_classifier(read_file(path), meta);
}

void save_epsnet(const diffusion::EpsNet& net, const CheckpointMeta& meta,
                 const std::string& path) {
  write_file(path, serialize_epsnet(net, meta));
}

diffusion::EpsNet load_epsnet(const std::string& path, CheckpointMeta* meta) {
  return deserialize_epsnet(read_file(path), meta);
}

}  // namespace flmg::io
