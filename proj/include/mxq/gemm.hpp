// SPDX-License-Identifier: Apache-2.0
//
// Functional tiled C = A * B^T over quantized operands.
//
// For every k-chunk t the kernel forms the block-scaled partial
//   P_ij^t = sum_blocks D_A * D_B * sum_16 dec(a) * dec(b)
// and folds in the macro-block reciprocals as C_ij += sigma_A * sigma_B * P_ij^t.
// NVFP4 tensor scales are applied once at the end. Block multipliers are
// small integers times powers of two, so each chunk partial is an exact
// 128-bit integer; chunks meet in an ExactSum. The result therefore equals the
// dequantize-then-multiply oracle bit for bit, for any tiling or thread count.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mxq/error.hpp"
#include "mxq/exact_sum.hpp"
#include "mxq/parallel.hpp"
#include "mxq/quantize.hpp"
#include "mxq/tensor.hpp"

namespace mxq {

struct TileConfig {
  std::size_t t_m = 128;
  std::size_t t_n = 128;
  std::size_t t_k = 128;

  void validate() const { require(t_m > 0 && t_n > 0 && t_k > 0, "tile dimensions must be positive"); }
};

struct OverheadReport {
  double compute_ratio = 0.0;
  double traffic_ratio = 0.0;
};

namespace detail {

/// sum a[k] * b[k], correctly rounded to single precision.
///
/// Products of floats are exact doubles. A double-double running sum gives an
/// estimate whose error is bounded by (n+1)^2 * 2^-105 * sum |a*b|; when that
/// interval cannot straddle a rounding midpoint the estimate is returned,
/// otherwise the sum is recomputed exactly.
inline float exact_dot(std::span<const float> a, std::span<const float> b, ExactSum& scratch) {
  double hi = 0.0;
  double lo = 0.0;
  double mag = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double p = static_cast<double>(a[k]) * static_cast<double>(b[k]);
    const double s = hi + p;
    const double bp = s - hi;
    lo += (hi - (s - bp)) + (p - bp);
    hi = s;
    mag += std::fabs(p);
  }
  const double ah = std::fabs(hi);
  if (ah > 0x1p-100 && ah < 0x1p100 && mag < 0x1p900) {
    const double n = static_cast<double>(a.size()) + 1.0;
    const double eps = n * n * 0x1p-105 * mag;
    const auto f = static_cast<float>(hi + lo);
    const double down = 0.5 * (static_cast<double>(f) + std::nextafter(f, -std::numeric_limits<float>::infinity()));
    const double up = 0.5 * (static_cast<double>(f) + std::nextafter(f, std::numeric_limits<float>::infinity()));
    const double above = (hi - down) + lo;
    const double below = (up - hi) - lo;
    const double slack = eps + 0x1p-50 * (std::fabs(hi - down) + std::fabs(up - hi) + std::fabs(lo));
    if (above > slack && below > slack) return f;
  }
  scratch.clear();
  for (std::size_t k = 0; k < a.size(); ++k) scratch.add(static_cast<double>(a[k]) * static_cast<double>(b[k]));
  return scratch.to_float();
}

}  // namespace detail

/// C = A * B^T with exact accumulation, rounded once to single precision.
inline Tensor matmul_reference(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul: inner dimensions differ (" + shape_string(a.rows(), a.cols()) + " vs " +
                                    shape_string(b.rows(), b.cols()) + ")");
  Tensor c(a.rows(), b.rows());
  parallel_for(a.rows(), [&](std::size_t i) {
    ExactSum scratch;
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = detail::exact_dot(a.row(i), b.row(j), scratch);
  });
  return c;
}

namespace detail {

/// Block multiplier as sig * 2^exp with sig < 16.
struct ScaleTerm {
  std::int32_t sig = 0;
  int exp = 0;
};

inline ScaleTerm split_scale(double m) {
  if (m == 0.0) return {};
  int e = 0;
  const double f = std::frexp(m, &e);
  const double sig = std::ldexp(f, 4);
  require(sig == std::floor(sig), "gemm: block multiplier needs more than 4 significant bits");
  return {static_cast<std::int32_t>(sig), e - 4};
}

/// Decoded view of one GEMM operand.
struct GemmOperand {
  std::size_t rows = 0;
  std::size_t k = 0;
  std::size_t block_size = 0;
  std::size_t macro_size = 0;
  std::vector<std::int8_t> twice;        // 2 * decoded element
  std::vector<ScaleTerm> multipliers;    // per 16-element compute block
  std::vector<std::uint32_t> sigma_num;  // per macro block, sigma = n / 2^11
  int tensor_exp = 0;

  explicit GemmOperand(const QuantizedTensor& q) : rows(q.rows), k(q.cols), block_size(q.block_size) {
    q.validate();
    require(block_size % kComputeBlock == 0, "gemm: block size must be a multiple of 16");
    twice.resize(rows * k);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < k; ++c) twice[r * k + c] = static_cast<std::int8_t>(decode_e2m1_x2(q.code(r, c)));
    const std::size_t nb = k / kComputeBlock;
    const std::size_t per_block = block_size / kComputeBlock;
    multipliers.resize(rows * nb);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t b = 0; b < nb; ++b) multipliers[r * nb + b] = split_scale(q.block_multiplier(r, b / per_block));
    if (is_mbs(q.variant)) {
      macro_size = q.macro_size;
      sigma_num.reserve(q.mbs_mantissas.size());
      for (const Mantissa8 m : q.mbs_mantissas) sigma_num.push_back(m.sigma_numerator());
    }
    if (q.tensor_scale) tensor_exp = std::ilogb(*q.tensor_scale);
    require(std::ldexp(1.0, tensor_exp) == q.tensor_scale.value_or(1.0), "gemm: tensor scale must be a power of two");
  }

  const ScaleTerm* multiplier_row(std::size_t r) const { return multipliers.data() + r * (k / kComputeBlock); }

  std::uint32_t sigma(std::size_t r, std::size_t col) const {
    if (macro_size == 0) return 1u << 11;
    const std::size_t per_row = (k + macro_size - 1) / macro_size;
    return sigma_num[r * per_row + col / macro_size];
  }
};

struct ScaleTermDot {
  std::int64_t v = 0;
  int exp = 0;
};

inline std::size_t chunk_length(const GemmOperand& a, const GemmOperand& b, const TileConfig& cfg) {
  std::size_t len = cfg.t_k;
  for (const std::size_t macro : {a.macro_size, b.macro_size}) {
    if (macro == 0) continue;
    require(cfg.t_k % macro == 0, "gemm: t_k = " + std::to_string(cfg.t_k) +
                                      " is not a multiple of the macro-block size " + std::to_string(macro));
    len = std::min(len, macro);
  }
  if (a.macro_size != 0 && b.macro_size != 0)
    require(std::max(a.macro_size, b.macro_size) % len == 0, "gemm: operand macro sizes are not nested");
  return len;
}

}  // namespace detail

/// 128-cubed tiles with t_k widened to a multiple of each operand's macro size.
inline TileConfig default_tiles(const QuantizedTensor& aq, const QuantizedTensor& bq) {
  TileConfig cfg;
  if (aq.macro_size != 0) cfg.t_k = std::lcm(cfg.t_k, aq.macro_size);
  if (bq.macro_size != 0) cfg.t_k = std::lcm(cfg.t_k, bq.macro_size);
  return cfg;
}

inline Tensor matmul_quantized(const QuantizedTensor& aq, const QuantizedTensor& bq, const TileConfig& cfg) {
  cfg.validate();
  require(aq.cols == bq.cols, "gemm: K mismatch (" + std::to_string(aq.cols) + " vs " + std::to_string(bq.cols) + ")");
  const detail::GemmOperand a(aq);
  const detail::GemmOperand b(bq);
  const std::size_t chunk = detail::chunk_length(a, b, cfg);
  const std::size_t K = a.k;
  const int final_shift = a.tensor_exp + b.tensor_exp;

  Tensor c(a.rows, b.rows);
  const std::size_t tiles_m = (a.rows + cfg.t_m - 1) / cfg.t_m;
  const std::size_t tiles_n = (b.rows + cfg.t_n - 1) / cfg.t_n;

  // Output tiles in row-major order; disjoint tiles may run concurrently.
  parallel_for(tiles_m * tiles_n, [&](std::size_t tile) {
    const std::size_t i0 = (tile / tiles_n) * cfg.t_m;
    const std::size_t j0 = (tile % tiles_n) * cfg.t_n;
    const std::size_t i1 = std::min(i0 + cfg.t_m, a.rows);
    const std::size_t j1 = std::min(j0 + cfg.t_n, b.rows);
    ExactSum acc;
    std::vector<detail::ScaleTermDot> terms(chunk / kComputeBlock);
    for (std::size_t i = i0; i < i1; ++i) {
      const std::int8_t* arow = a.twice.data() + i * K;
      const detail::ScaleTerm* ascale = a.multiplier_row(i);
      for (std::size_t j = j0; j < j1; ++j) {
        const std::int8_t* brow = b.twice.data() + j * K;
        const detail::ScaleTerm* bscale = b.multiplier_row(j);
        acc.clear();
        for (std::size_t k0 = 0; k0 < K; k0 += cfg.t_k) {
          const std::size_t k1 = std::min(k0 + cfg.t_k, K);
          for (std::size_t c0 = k0; c0 < k1; c0 += chunk) {
            const std::size_t c1 = std::min(c0 + chunk, k1);
            // Per 16-block: 4 * dec(a).dec(b) * D_A * D_B = dot * sig * 2^exp.
            std::size_t n = 0;
            int min_exp = std::numeric_limits<int>::max();
            int max_exp = std::numeric_limits<int>::min();
            for (std::size_t s = c0; s < c1; s += kComputeBlock) {
              std::int32_t dot = 0;
              for (std::size_t t = s; t < s + kComputeBlock; ++t) dot += std::int32_t{arow[t]} * std::int32_t{brow[t]};
              const detail::ScaleTerm ma = ascale[s / kComputeBlock];
              const detail::ScaleTerm mb = bscale[s / kComputeBlock];
              const std::int64_t v = std::int64_t{dot} * ma.sig * mb.sig;
              if (v == 0) continue;
              terms[n++] = {v, ma.exp + mb.exp};
              min_exp = std::min(min_exp, ma.exp + mb.exp);
              max_exp = std::max(max_exp, ma.exp + mb.exp);
            }
            if (n == 0) continue;
            const auto sigma = static_cast<std::int64_t>(a.sigma(i, c0)) * b.sigma(j, c0);
            // sigma_A * sigma_B carries 2^-22; the 1/4 from doubled codes adds 2^-2.
            if (max_exp - min_exp <= 60) {
              detail::int128 partial = 0;
              for (std::size_t t = 0; t < n; ++t) partial += detail::int128{terms[t].v} << (terms[t].exp - min_exp);
              acc.add_int(partial * sigma, min_exp - 24);
            } else {
              for (std::size_t t = 0; t < n; ++t) acc.add_int(detail::int128{terms[t].v} * sigma, terms[t].exp - 24);
            }
          }
        }
        c(i, j) = acc.to_float(final_shift);
      }
    }
  });
  return c;
}

inline Tensor matmul_quantized(const QuantizedTensor& aq, const QuantizedTensor& bq) {
  return matmul_quantized(aq, bq, default_tiles(aq, bq));
}

/// MBS epilogue cost relative to the FP4 tile: extra FP32 multiplies over
/// tensor-core MACs, and sigma-vector bytes over output-tile bytes.
inline OverheadReport roofline_overhead(const TileConfig& cfg, double sigma_bytes, double out_bytes) {
  cfg.validate();
  require(sigma_bytes > 0 && out_bytes > 0, "roofline: byte widths must be positive");
  const double tm = static_cast<double>(cfg.t_m);
  const double tn = static_cast<double>(cfg.t_n);
  const double tk = static_cast<double>(cfg.t_k);
  OverheadReport r;
  r.compute_ratio = (2.0 * tm * tn) / (tm * tn * tk);
  r.traffic_ratio = ((tm + tn) * sigma_bytes) / (tm * tn * out_bytes);
  require(r.compute_ratio <= 1.0 && r.traffic_ratio <= 1.0, "roofline: tile too small, overhead ratio exceeds 1");
  return r;
}

}  // namespace mxq
