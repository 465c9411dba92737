// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic tensors standing in for dumped model tensors.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mxq/error.hpp"
#include "mxq/tensor.hpp"

namespace mxq {

enum class Distribution { gaussian, lognormal, student_t, gaussian_with_outliers };

struct GeneratorSpec {
  Distribution distribution = Distribution::gaussian;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t seed = 0;
  double dof = 4.0;          // student_t
  double rate = 0.01;        // gaussian_with_outliers
  double magnitude = 100.0;  // gaussian_with_outliers

  void validate() const {
    require(rows > 0 && cols > 0, "generator: shape must be non-empty");
    if (distribution == Distribution::student_t) require(dof > 0.0 && std::isfinite(dof), "generator: dof must be positive");
    if (distribution == Distribution::gaussian_with_outliers) {
      require(rate >= 0.0 && rate <= 1.0, "generator: outlier rate must be in [0, 1]");
      require(std::isfinite(magnitude), "generator: outlier magnitude must be finite");
    }
  }

  GeneratorSpec with_seed(std::uint64_t s) const {
    GeneratorSpec out = *this;
    out.seed = s;
    return out;
  }

  /// Heavy-tailed stand-in for activations.
  static GeneratorSpec activation_like(std::size_t rows, std::size_t cols, std::uint64_t seed = 0) {
    return {Distribution::student_t, rows, cols, seed, 4.0};
  }
  static GeneratorSpec weight_like(std::size_t rows, std::size_t cols, std::uint64_t seed = 0) {
    return {Distribution::gaussian, rows, cols, seed};
  }
};

inline std::string distribution_name(Distribution d) {
  switch (d) {
    case Distribution::gaussian: return "gaussian";
    case Distribution::lognormal: return "lognormal";
    case Distribution::student_t: return "student-t";
    case Distribution::gaussian_with_outliers: return "outliers";
  }
  return "?";
}

inline Distribution parse_distribution(std::string_view name) {
  if (name == "gaussian") return Distribution::gaussian;
  if (name == "lognormal") return Distribution::lognormal;
  if (name == "student-t") return Distribution::student_t;
  if (name == "outliers") return Distribution::gaussian_with_outliers;
  fail("unknown distribution '" + std::string(name) + "'");
}

namespace detail {
// Independent stream for outlier placement so positions do not depend on
// how many values the base distribution consumed.
inline constexpr std::uint64_t kOutlierStream = 0x9E3779B97F4A7C15ull;
}

/// Flat indices of the entries scaled by `magnitude`.
inline std::vector<std::size_t> outlier_positions(const GeneratorSpec& spec) {
  spec.validate();
  std::vector<std::size_t> out;
  if (spec.distribution != Distribution::gaussian_with_outliers) return out;
  std::mt19937_64 rng(spec.seed ^ detail::kOutlierStream);
  std::bernoulli_distribution pick(spec.rate);
  for (std::size_t i = 0; i < spec.rows * spec.cols; ++i)
    if (pick(rng)) out.push_back(i);
  return out;
}

inline Tensor generate_tensor(const GeneratorSpec& spec) {
  spec.validate();
  Tensor t(spec.rows, spec.cols);
  auto data = t.data();
  std::mt19937_64 rng(spec.seed);
  switch (spec.distribution) {
    case Distribution::gaussian:
    case Distribution::gaussian_with_outliers: {
      std::normal_distribution<double> d(0.0, 1.0);
      for (float& x : data) x = static_cast<float>(d(rng));
      break;
    }
    case Distribution::lognormal: {
      std::lognormal_distribution<double> d(0.0, 1.0);
      for (float& x : data) x = static_cast<float>(d(rng));
      break;
    }
    case Distribution::student_t: {
      std::student_t_distribution<double> d(spec.dof);
      for (float& x : data) x = static_cast<float>(d(rng));
      break;
    }
  }
  for (const std::size_t i : outlier_positions(spec)) data[i] = static_cast<float>(data[i] * spec.magnitude);
  return t;
}

}  // namespace mxq
