#pragma once

// Shared fixtures for the service tests: seeded prompt payloads and a
// scripted plan/observe loop.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "vip/service.hpp"

namespace fixture {

using json = nlohmann::json;

inline json prompts_json(std::size_t q, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  json out = json::array();
  for (std::size_t i = 0; i < q; ++i) {
    std::vector<double> e(dim);
    for (auto& v : e) v = nd(rng);
    out.push_back({{"id", "q" + std::to_string(i)}, {"embedding", e}});
  }
  return out;
}

// Runs `iterations` plan/observe rounds on session `id` with batches of
// `batch` prompts and Bernoulli(0.3 + 0.4 * (i % 2)) rewards drawn from a
// fixed stream. Returns the plan responses.
inline std::vector<json> scripted_loop(vip::service::SessionManager& mgr, const std::string& id, std::size_t q,
                                       std::size_t batch, int iterations, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<json> plans;
  std::vector<std::size_t> order(q);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < q; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    json ids = json::array();
    for (std::size_t i = 0; i < batch; ++i) ids.push_back("q" + std::to_string(order[i]));
    auto plan = mgr.plan(id, {{"batch", ids}});
    plans.push_back(plan);
    json rewards = json::array();
    for (std::size_t i = 0; i < batch; ++i) {
      const double p = 0.3 + 0.4 * static_cast<double>(order[i] % 2);
      std::vector<double> r;
      for (std::int64_t k = 0; k < plan["n_int"][i].get<std::int64_t>(); ++k)
        r.push_back(std::uniform_real_distribution<double>(0, 1)(rng) < p ? 1.0 : -1.0);
      rewards.push_back({{"id", ids[i]}, {"rewards", r}});
    }
    mgr.observe(id, {{"rewards", rewards}});
  }
  return plans;
}

}  // namespace fixture
