#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flmg/diffusion.hpp"
#include "flmg/nn.hpp"

namespace flmg::io {

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

struct CheckpointMeta {
  std::int64_t client_id = -1;
  std::uint64_t seed = 0;
  std::int64_t train_epochs = 0;
};

/// Binary model checkpoint ("FLMG"): magic, version u16, kind u8, fixed-size
/// metadata, layer descriptors, little-endian f64 parameter blob, BN running
/// stats. Loads reject bad magic, version mismatch, and length mismatch.
std::vector<std::uint8_t> serialize_classifier(const nn::ClassifierModel& model,
                                               const CheckpointMeta& meta);
nn::ClassifierModel deserialize_classifier(const std::vector<std::uint8_t>& bytes,
                                           CheckpointMeta* meta = nullptr);
void save_classifier(const nn::ClassifierModel& model, const CheckpointMeta& meta,
                     const std::string& path);
nn::ClassifierModel load_classifier(const std::string& path, CheckpointMeta* meta = nullptr);
/// Exact byte length of serialize_classifier without producing it.
std::size_t classifier_checkpoint_bytes(const nn::ClassifierModel& model);

std::vector<std::uint8_t> serialize_epsnet(const diffusion::EpsNet& net,
                                           const CheckpointMeta& meta);
diffusion::EpsNet deserialize_epsnet(const std::vector<std::uint8_t>& bytes,
                                     CheckpointMeta* meta = nullptr);
void save_epsnet(const diffusion::EpsNet& net, const CheckpointMeta& meta,
                 const std::string& path);
diffusion::EpsNet load_epsnet(const std::string& path, CheckpointMeta* meta = nullptr);

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::string& path);

}  // namespace flmg::io
