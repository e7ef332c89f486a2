#pragma once

#include <span>

#include "flmg/tensor.hpp"

namespace flmg::analysis {

/// Median of the pairwise squared L2 distances between distinct rows of x
/// (median-heuristic kernel bandwidth). Needs >= 2 rows.
double median_sq_distance(const Tensor& x);

/// Biased RBF MMD^2 between row sets a and b with kernel
/// k(x, y) = exp(-|x - y|^2 / bandwidth_sq). bandwidth_sq <= 0 selects the
/// median heuristic on b (the reference set), so comparisons of several
/// candidate sets against the same reference share one kernel.
double rbf_mmd2(const Tensor& a, const Tensor& b, double bandwidth_sq = 0.0);

/// Mean over rows of a of the L2 distance to the nearest row of b.
double mean_nn_distance(const Tensor& a, const Tensor& b);

/// Mean over rows of the L2 distance to the nearest OTHER row with the same
/// label; rows without a same-label peer are skipped.
double mean_intra_class_nn_distance(const Tensor& x, std::span<const int> labels);

}  // namespace flmg::analysis
