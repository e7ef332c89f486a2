#pragma once

#include <cstdint>
#include <vector>

#include "flmg/tensor.hpp"

namespace flmg::data {

struct Sample {
  std::vector<double> x;
  int label = 0;
  int context = 0;
};

struct Dataset {
  int dim = 0;
  int num_classes = 0;
  int num_contexts = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  Tensor to_tensor() const;
  std::vector<int> labels() const;
  /// Sorted distinct labels present.
  std::vector<int> label_set() const;
  std::vector<int> class_counts() const;  // length num_classes
};

struct ClientData {
  int client_id = 0;
  Dataset train;
  Dataset test;
};

struct ToyCorpusConfig {
  int image_side = 12;    // flattened dim = side^2
  int num_classes = 4;    // glyph shapes
  int num_contexts = 4;   // client styles
  int per_cell = 50;      // samples per (class, context)
  double noise = 0.05;    // pixel noise sigma
  std::uint64_t seed = 1;

  int dim() const { return image_side * image_side; }
  void validate() const;
};

/// Procedural grayscale glyphs: the class picks a foreground shape
/// (bars / crosses / blobs at class-specific positions); the context picks
/// background ramp, contrast, and texture frequency. Pixels lie in [-1, 1].
Dataset make_corpus(const ToyCorpusConfig& cfg);

/// Client k receives every sample of context k, split 80/20 into
/// train/test, stratified by class. Requires K <= num_contexts.
std::vector<ClientData> partition_feature_skew(const Dataset& corpus, int K,
                                               std::uint64_t seed);

/// Class proportions per client drawn from Dirichlet(alpha); contexts are
/// ignored (use a single-context corpus for pure label skew). Every sample
/// is assigned to exactly one client; empty clients trigger a bounded
/// resample, then an error. Each client's share is split 80/20 like above.
std::vector<ClientData> partition_label_skew(const Dataset& corpus, int K, double alpha,
                                             std::uint64_t seed);

/// Fresh corpus for server-side pretraining. overlap gives the fraction of
/// contexts included (at least one context is always kept); the included
/// contexts form a seeded shuffled prefix, so smaller overlaps are nested
/// in larger ones.
Dataset server_corpus(const ToyCorpusConfig& cfg, double overlap);

}  // namespace flmg::data
