#pragma once

#include <random>
#include <string>
#include <vector>

#include "dpa/offset.hpp"
#include "oracles.hpp"

namespace fixture {

struct RandomCase {
  dpa::offset::ModelState model;
  dpa::offset::Event event;
};

inline RandomCase random_case(std::mt19937_64& rng) {
  using namespace dpa::offset;
  std::uniform_int_distribution<int> k_dist(1, 4), w_dist(1, 3), n_dist(1, 3), ad_dist(1, 3), sim_dist(0, 2);
  std::normal_distribution<double> normal(0.0, 0.5);
  std::uniform_real_distribution<double> weight(0.2, 2.0);

  FeatureSchema schema;
  const int k = k_dist(rng);
  for (int i = 0; i < k; ++i) schema.user_features.push_back("u" + std::to_string(i));
  schema.pair_width = w_dist(rng);
  schema.solo_width = w_dist(rng);
  const int n_ad = ad_dist(rng);
  for (int i = 0; i < n_ad; ++i) schema.ad_features.push_back("ad" + std::to_string(i));
  const int n_sim = sim_dist(rng);
  for (int i = 0; i < n_sim; ++i) schema.similarity_features.push_back("sim" + std::to_string(i));

  Hyperparams h;
  h.lambda = 0.05;
  h.init_variance = 0.25;
  h.seed = rng();
  RandomCase c{ModelState(schema, h), {}};
  c.model.bias.value = normal(rng);

  for (const auto& f : schema.user_features) {
    auto& vals = c.event.user_values[f];
    const int n = n_dist(rng);
    for (int v = 0; v < n; ++v) vals.push_back({"v" + std::to_string(v), weight(rng)});
  }
  for (const auto& f : schema.ad_features) c.event.ad_values[f] = "x" + std::to_string(rng() % 5);
  for (const auto& f : schema.similarity_features) {
    const std::string bin = "b" + std::to_string(rng() % 3);
    c.event.sim_bins[f] = bin;
    c.model.sim_weights[table_key(f, bin)].value = normal(rng);
  }
  c.event.label = static_cast<int>(rng() % 2);

  for (const auto& [f, vals] : c.event.user_values) {
    for (const auto& wv : vals) c.model.user_table.get_or_init(f, wv.value);
  }
  for (const auto& [f, v] : c.event.ad_values) c.model.ad_table.get_or_init(f, v);
  return c;
}

struct GradientCheck {
  std::size_t partials = 0;
  double worst = 0.0;
};

// Central differences of event_loss against compute_gradient for every
// partial the event touches.
inline GradientCheck check_gradient(RandomCase& c, double h = 1e-6, double floor = 1e-3) {
  using namespace dpa::offset;
  GradientCheck out;
  const auto g = compute_gradient(c.event, c.model);
  auto probe = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = event_loss(c.event, c.model);
    param = saved - h;
    const double down = event_loss(c.event, c.model);
    param = saved;
    const double numeric = (up - down) / (2 * h);
    out.worst = std::max(out.worst, oracle::rel_err(analytic, numeric, floor));
    ++out.partials;
  };
  probe(c.model.bias.value, g.bias);
  for (const auto& [key, grad] : g.user) {
    auto& v = c.model.user_table.entries().at(key).value;
    for (std::size_t t = 0; t < v.size(); ++t) probe(v[t], grad[t]);
  }
  for (const auto& [key, grad] : g.ad) {
    auto& v = c.model.ad_table.entries().at(key).value;
    for (std::size_t t = 0; t < v.size(); ++t) probe(v[t], grad[t]);
  }
  for (const auto& [key, grad] : g.sim) probe(c.model.sim_weights.at(key).value, grad);
  return out;
}

}  // namespace fixture
