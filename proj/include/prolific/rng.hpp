#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace prolific {

using Engine = std::mt19937_64;

/// SplitMix64 finaliser. Used to hash (seed, index, ...) tuples into
/// independent stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Seed for the stream addressed by `path` under `master`. The result depends
/// only on the values, never on the order in which streams are created, so
/// parallel consumers get identical streams regardless of scheduling.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

inline Engine make_stream(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Engine(derive_seed(master, path));
}

/// Chi-square draw through the Gamma(dof/2, 2) representation; valid for
/// large degrees of freedom.
double draw_chi_square(Engine& engine, double dof);

}  // namespace prolific
