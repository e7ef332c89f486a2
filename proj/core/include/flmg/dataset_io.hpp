#pragma once

#include <string>
#include <vector>

#include "flmg/checkpoint.hpp"
#include "flmg/data.hpp"
#include "flmg/federation.hpp"

namespace flmg::io {

/// Flat binary container for sample sets ("FLMD"): little-endian header
/// (dims, class/context counts, record count) followed by fixed-width
/// records (x as f64 blob, label, context, client id). Synthetic sets carry
/// their generation knobs in the header so a dump is self-describing.
std::vector<std::uint8_t> serialize_dataset(const data::Dataset& ds);
data::Dataset deserialize_dataset(const std::vector<std::uint8_t>& bytes);
void save_dataset(const data::Dataset& ds, const std::string& path);
data::Dataset load_dataset(const std::string& path);

std::vector<std::uint8_t> serialize_synthetic(const fed::SyntheticDataset& ds);
fed::SyntheticDataset deserialize_synthetic(const std::vector<std::uint8_t>& bytes);
void save_synthetic(const fed::SyntheticDataset& ds, const std::string& path);
fed::SyntheticDataset load_synthetic(const std::string& path);

}  // namespace flmg::io
