#include "tlsleak/random.hpp"

#include <numeric>

#include "tlsleak/error.hpp"

namespace tlsleak {

std::int64_t sample(const Categorical& dist, Rng& rng) {
  if (dist.values.empty() || dist.values.size() != dist.weights.size()) {
    throw invalid_argument("categorical distribution is empty or ragged");
  }
  const double total =
      std::accumulate(dist.weights.begin(), dist.weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i + 1 < dist.values.size(); ++i) {
    if (u < dist.weights[i]) return dist.values[i];
    u -= dist.weights[i];
  }
  for (std::size_t i = dist.values.size(); i-- > 0;) {
    if (dist.weights[i] > 0.0) return dist.values[i];
  }
  return dist.values.back();
}

}  // namespace tlsleak
