#include "prolific/rng.hpp"

namespace prolific {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(master);
  for (std::uint64_t v : path) h = splitmix64(h ^ splitmix64(v + 0x632BE59BD9B4E019ULL));
  return h;
}

double draw_chi_square(Engine& engine, double dof) {
  if (dof <= 0.0) return 0.0;
  std::gamma_distribution<double> gamma(0.5 * dof, 2.0);
  return gamma(engine);
}

}  // namespace prolific
