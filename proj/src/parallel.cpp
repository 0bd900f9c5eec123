#include "ntp/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace ntp {

double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kLeaf = 64;
  if (values.size() <= kLeaf) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

Estimate mean_stderr(std::span<const double> values) {
  Estimate r;
  if (values.empty()) return r;
  r.value = pairwise_mean(values);
  if (values.size() < 2) return r;
  std::vector<double> sq(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - r.value;
    sq[i] = d * d;
  }
  const double var = pairwise_sum(sq) / static_cast<double>(values.size() - 1);
  r.stderr_ = std::sqrt(var / static_cast<double>(values.size()));
  return r;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

}  // namespace ntp
