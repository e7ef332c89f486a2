#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace flmg::theory {

/// A divergence that is infinite because p puts mass where q has none.
struct InfiniteDivergence : std::runtime_error {
  InfiniteDivergence() : std::runtime_error("KL divergence is infinite: support violation") {}
};

/// Finite sample space with a generator ("model") distribution, a client
/// distribution, and a per-point model-fit likelihood in (0, 1].
struct DiscreteWorld {
  std::vector<double> p_model;
  std::vector<double> p_client;
  std::vector<double> lik;

  std::size_t size() const { return p_model.size(); }
  void validate() const;
};

/// Sum of p(x) ln(p(x)/q(x)) with 0 ln(0/q) = 0; throws InfiniteDivergence
/// when p puts mass outside support(q).
double kl(std::span<const double> p, std::span<const double> q);

struct Conditional {
  std::vector<double> p_cond;  // p_model conditioned on the likelihood
  double evidence = 0.0;       // sum_x p_model(x) lik(x)
};

Conditional conditionalize(const DiscreteWorld& w);

struct BoundCheckResult {
  double lhs = 0.0;              // kl(p_client, p_cond)
  double rhs = 0.0;              // lambda_used + ln(evidence) - E_client[ln lik]
  double lambda_used = 0.0;      // kl(p_client, p_model); see the bound comment below
  double kl_client_model = 0.0;  // same value, named explicitly
  std::optional<double> kl_model_client;  // reverse direction; empty when infinite
  double evidence = 0.0;
  double margin = 0.0;  // rhs - lhs
  bool holds = false;   // lhs <= rhs + 1e-9
};

/// Exact-enumeration check of the divergence bound
///   KL(p_client || p_cond) <= lambda + ln(evidence) - E_client[ln lik].
/// lambda is the client->model KL divergence: that is the direction the
/// bound's derivation consumes (expanding the lhs gives exactly
/// KL(p_client||p_model) + ln(evidence) - E_client[ln lik], so the check is
/// a two-route identity), and the only direction that stays finite whenever
/// support(p_client) is a strict subset of support(p_model). The reverse
/// direction is computed and reported alongside.
BoundCheckResult check_divergence_bound(const DiscreteWorld& w);

/// Seeded random world: full-support model distribution, client distribution
/// over a (possibly strict) random subset of the space, likelihoods in
/// [0.05, 1).
DiscreteWorld random_world(std::uint64_t seed, std::size_t max_size = 64);

}  // namespace flmg::theory
