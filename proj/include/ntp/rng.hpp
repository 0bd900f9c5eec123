#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace ntp {

/// Mixes (seed, name, index) into a 64-bit stream key. Every random object
/// (matrix, initial vector, probe, ensemble column) draws from its own keyed
/// stream, so results do not depend on evaluation order or thread count.
std::uint64_t stream_key(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

/// Standard-normal stream for one key.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

  double operator()() { return dist_(engine_); }
  void fill(std::span<double> out, double scale = 1.0);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace ntp
