#include "flmg/theory.hpp"

#include <cmath>

#include "flmg/rng.hpp"

namespace flmg::theory {

namespace {

void check_distribution(std::span<const double> p, const char* name) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument(std::string(name) + ": negative mass");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument(std::string(name) + ": masses do not sum to 1");
}

}  // namespace

void DiscreteWorld::validate() const {
  if (p_model.empty()) throw std::invalid_argument("world: empty sample space");
  if (p_client.size() != p_model.size() || lik.size() != p_model.size())
    throw std::invalid_argument("world: field sizes disagree");
  check_distribution(p_model, "p_model");
  check_distribution(p_client, "p_client");
  for (std::size_t i = 0; i < lik.size(); ++i) {
    if (!(lik[i] > 0.0 && lik[i] <= 1.0))
      throw std::invalid_argument("world: likelihood outside (0, 1]");
    if (p_client[i] > 0.0 && p_model[i] == 0.0)
      throw std::invalid_argument("world: support(p_client) not within support(p_model)");
  }
}

double kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;  // 0 ln(0/q) = 0
    if (q[i] == 0.0) throw InfiniteDivergence();
    sum += p[i] * std::log(p[i] / q[i]);
  }
  return sum;
}

Conditional conditionalize(const DiscreteWorld& w) {
  w.validate();
  Conditional c;
  c.p_cond.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) c.evidence += w.p_model[i] * w.lik[i];
  if (c.evidence <= 0.0) throw std::invalid_argument("conditionalize: zero evidence");
  for (std::size_t i = 0; i < w.size(); ++i) c.p_cond[i] = w.p_model[i] * w.lik[i] / c.evidence;
  return c;
}

BoundCheckResult check_divergence_bound(const DiscreteWorld& w) {
  Conditional c = conditionalize(w);
  BoundCheckResult r;
  r.evidence = c.evidence;
  r.lhs = kl(w.p_client, c.p_cond);
  r.kl_client_model = kl(w.p_client, w.p_model);
  r.lambda_used = r.kl_client_model;
  try {
    r.kl_model_client = kl(w.p_model, w.p_client);
  } catch (const InfiniteDivergence&) {
    r.kl_model_client.reset();
  }
  double e_log_lik = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w.p_client[i] > 0.0) e_log_lik += w.p_client[i] * std::log(w.lik[i]);
  r.rhs = r.lambda_used + std::log(r.evidence) - e_log_lik;
  r.margin = r.rhs - r.lhs;
  r.holds = r.lhs <= r.rhs + 1e-9;
  return r;
}

DiscreteWorld random_world(std::uint64_t seed, std::size_t max_size) {
  if (max_size < 2) throw std::invalid_argument("random_world: max_size must be >= 2");
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, static_cast<std::int64_t>(max_size)));
  DiscreteWorld w;
  w.p_model.resize(n);
  w.p_client.assign(n, 0.0);
  w.lik.resize(n);

  double sum = 0.0;
  for (auto& v : w.p_model) {
    v = rng.gamma(1.0) + 1e-9;  // full support
    sum += v;
  }
  for (auto& v : w.p_model) v /= sum;

  // client support: full with probability 1/2, else a random strict subset
  std::vector<std::size_t> support(n);
  for (std::size_t i = 0; i < n; ++i) support[i] = i;
  if (rng.uniform() < 0.5 && n > 2) {
    rng.shuffle(support);
    const std::size_t keep =
        static_cast<std::size_t>(rng.uniform_int(2, static_cast<std::int64_t>(n)));
    support.resize(keep);
  }
  sum = 0.0;
  for (std::size_t i : support) {
    w.p_client[i] = rng.gamma(1.0) + 1e-9;
    sum += w.p_client[i];
  }
  for (std::size_t i : support) w.p_client[i] /= sum;

  for (auto& v : w.lik) v = rng.uniform(0.05, 1.0);
  return w;
}

}  // namespace flmg::theory
