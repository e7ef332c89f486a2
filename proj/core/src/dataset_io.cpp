#include "flmg/dataset_io.hpp"

#include <cstring>

#include "wire.hpp"

namespace flmg::io {

namespace {

using namespace wire;

constexpr char kMagic[4] = {'F', 'L', 'M', 'D'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kKindReal = 0;
constexpr std::uint8_t kKindSynthetic = 1;

void put_magic(std::vector<std::uint8_t>& b, std::uint8_t kind) {
  b.insert(b.end(), kMagic, kMagic + 4);
  put_u16(b, kVersion);
  put_u8(b, kind);
}

std::uint8_t read_magic(Reader& r) {
  r.need(4);
  if (std::memcmp(r.b.data(), kMagic, 4) != 0) throw CheckpointError("bad magic");
  r.pos += 4;
  const std::uint16_t version = r.u16();
  if (version != kVersion)
    throw CheckpointError("dataset version mismatch: got " + std::to_string(version));
  return r.u8();
}

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const data::Dataset& ds) {
  std::vector<std::uint8_t> b;
  b.reserve(15 + ds.size() * (8 * static_cast<std::size_t>(ds.dim) + 8));
  put_magic(b, kKindReal);
  put_i32(b, ds.dim);
  put_i32(b, ds.num_classes);
  put_i32(b, ds.num_contexts);
  put_u64(b, ds.size());
  for (const auto& s : ds.samples) {
    if (static_cast<int>(s.x.size()) != ds.dim) throw CheckpointError("sample dim mismatch");
    for (double v : s.x) put_f64(b, v);
    put_i32(b, s.label);
    put_i32(b, s.context);
  }
  return b;
}

data::Dataset deserialize_dataset(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  if (read_magic(r) != kKindReal) throw CheckpointError("file holds a different dataset kind");
  data::Dataset ds;
  ds.dim = r.i32();
  ds.num_classes = r.i32();
  ds.num_contexts = r.i32();
  if (ds.dim <= 0 || ds.num_classes <= 0) throw CheckpointError("corrupt dataset header");
  const std::uint64_t n = r.u64();
  ds.samples.resize(n);
  for (auto& s : ds.samples) {
    s.x.resize(static_cast<std::size_t>(ds.dim));
    for (auto& v : s.x) v = r.f64();
    s.label = r.i32();
    s.context = r.i32();
  }
  r.done();
  return ds;
}

std::vector<std::uint8_t> serialize_synthetic(const fed::SyntheticDataset& ds) {
  std::vector<std::uint8_t> b;
  b.reserve(55 + ds.size() * (8 * static_cast<std::size_t>(ds.dim) + 8));
  put_magic(b, kKindSynthetic);
  put_i32(b, ds.dim);
  put_i32(b, ds.num_classes);
  put_f64(b, ds.gen_config.lambda_bn);
  put_f64(b, ds.gen_config.lambda_ce);
  put_f64(b, ds.gen_config.guide_scale);
  put_i32(b, ds.gen_config.batch_size);
  put_i32(b, ds.gen_config.sample_steps);
  put_u64(b, ds.gen_seed);
  put_u64(b, ds.size());
  for (const auto& s : ds.records) {
    if (static_cast<int>(s.x.size()) != ds.dim) throw CheckpointError("record dim mismatch");
    for (double v : s.x) put_f64(b, v);
    put_i32(b, s.label);
    put_i32(b, s.client_id);
  }
  return b;
}

fed::SyntheticDataset deserialize_synthetic(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  if (read_magic(r) != kKindSynthetic) throw CheckpointError("file holds a different dataset kind");
  fed::SyntheticDataset ds;
  ds.dim = r.i32();
  ds.num_classes = r.i32();
  if (ds.dim <= 0 || ds.num_classes <= 0) throw CheckpointError("corrupt dataset header");
  ds.gen_config.lambda_bn = r.f64();
  ds.gen_config.lambda_ce = r.f64();
  ds.gen_config.guide_scale = r.f64();
  ds.gen_config.batch_size = r.i32();
  ds.gen_config.sample_steps = r.i32();
  ds.gen_seed = r.u64();
  const std::uint64_t n = r.u64();
  ds.records.resize(n);
  for (auto& s : ds.records) {
    s.x.resize(static_cast<std::size_t>(ds.dim));
    for (auto& v : s.x) v = r.f64();
    s.label = r.i32();
    s.client_id = r.i32();
  }
  r.done();
  ds.validate();
  return ds;
}

void save_dataset(const data::Dataset& ds, const std::string& path) {
  write_file(path, serialize_dataset(ds));
}

data::Dataset load_dataset(const std::string& path) { return deserialize_dataset(read_file(path)); }

void save_synthetic(const fed::SyntheticDataset& ds, const std::string& path) {
  write_file(path, serialize_synthetic(ds));
}

fed::SyntheticDataset load_synthetic(const std::string& path) {
  return deserialize_synthetic(read_file(path));
}

}  // namespace flmg::io
