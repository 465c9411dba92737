// SPDX-License-Identifier: Apache-2.0
//
// Block and macro-block FP4 quantization schemes.
//
//   ocp       OCP MXFP4: E8M0 scale 2^(floor(log2 amax) - 2), block 32 by
//             default (block 16 supported for like-for-like comparisons)
//   mx16      block 16, SF = floor_pow2(6 / amax), amax*SF in (3, 6]
//   mx16_oas  mx16 plus overflow-aware doubling, amax*SF in (3.5, 7]
//   mbs_s     macro-block mantissa from the macro absmax bit pattern
//   mbs_d     macro-block mantissa chosen by SSE search (exact or LUT)
//   nvfp4     block 16, E4M3 block scales and a per-tensor scale
//
// Stored block scales are dequantization multipliers D (value = D * code);
// the quantization factor SF = 1/D. MBS variants additionally store one
// Mantissa8 per macro block; dequantization multiplies by its FP16
// reciprocal sigma.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mxq/error.hpp"
#include "mxq/formats.hpp"
#include "mxq/parallel.hpp"
#include "mxq/tensor.hpp"

namespace mxq {

enum class Variant { ocp, mx16, mx16_oas, mbs_static, mbs_dynamic, nvfp4 };
enum class MbsMode { exact, lut };

inline constexpr std::size_t kComputeBlock = 16;
inline constexpr std::size_t kOcpBlock = 32;
inline constexpr std::size_t kDefaultMacro = 128;
inline constexpr double kOasThreshold = 3.5;

constexpr bool is_mbs(Variant v) { return v == Variant::mbs_static || v == Variant::mbs_dynamic; }

// ---------------------------------------------------------------------------
// Candidate sets

struct CandidateSet {
  std::vector<Mantissa8> mantissas;

  /// {j * 16 / 256 : j = 0..15}
  static CandidateSet uniform16() {
    CandidateSet set;
    for (unsigned j = 0; j < 16; ++j) set.mantissas.push_back(Mantissa8{static_cast<std::uint8_t>(j * 16)});
    return set;
  }

  bool contains(Mantissa8 m) const {
    return std::find(mantissas.begin(), mantissas.end(), m) != mantissas.end();
  }

  /// Copy with `m` appended when absent.
  CandidateSet with(Mantissa8 m) const {
    CandidateSet out = *this;
    if (!contains(m)) out.mantissas.push_back(m);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Scheme configuration

struct SchemeConfig {
  Variant variant = Variant::mx16_oas;
  std::size_t block_size = kComputeBlock;
  std::size_t macro_size = kDefaultMacro;
  MbsMode mbs_mode = MbsMode::exact;
  CandidateSet candidates = CandidateSet::uniform16();
  /// Append each macro block's static mantissa to the MBS-D search set.
  bool augment_static = true;

  static SchemeConfig ocp(std::size_t block = kOcpBlock) { return {Variant::ocp, block}; }
  static SchemeConfig mx16() { return {Variant::mx16}; }
  static SchemeConfig mx16_oas() { return {Variant::mx16_oas}; }
  static SchemeConfig mbs_static(std::size_t macro = kDefaultMacro) {
    return {Variant::mbs_static, kComputeBlock, macro};
  }
  static SchemeConfig mbs_dynamic(std::size_t macro = kDefaultMacro, MbsMode mode = MbsMode::exact) {
    return {Variant::mbs_dynamic, kComputeBlock, macro, mode};
  }
  static SchemeConfig nvfp4() { return {Variant::nvfp4}; }

  void validate() const {
    if (variant == Variant::ocp) {
      require(block_size == 16 || block_size == 32, "ocp block size must be 16 or 32");
    } else {
      require(block_size == kComputeBlock, "block size must be 16 for this scheme");
    }
    if (is_mbs(variant)) {
      require(macro_size > 0 && macro_size % block_size == 0,
              "macro size must be a positive multiple of the block size");
    }
    if (variant == Variant::mbs_dynamic) {
      require(candidates.contains(Mantissa8{}), "MBS-D candidate set must contain m8 = 0");
      auto sorted = candidates.mantissas;
      std::sort(sorted.begin(), sorted.end());
      require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "MBS-D candidate set has duplicates");
      if (mbs_mode == MbsMode::lut)
        require(candidates.mantissas.size() == 16, "MBS-D LUT mode needs exactly 16 candidates");
    }
  }
};

inline std::string scheme_name(Variant v, std::size_t block_size = kComputeBlock) {
  switch (v) {
    case Variant::ocp: return block_size == kOcpBlock ? "ocp32" : "ocp" + std::to_string(block_size);
    case Variant::mx16: return "mx16";
    case Variant::mx16_oas: return "mx16-oas";
    case Variant::mbs_static: return "mbs-s";
    case Variant::mbs_dynamic: return "mbs-d";
    case Variant::nvfp4: return "nvfp4";
  }
  return "?";
}

inline std::string scheme_name(const SchemeConfig& cfg) { return scheme_name(cfg.variant, cfg.block_size); }

/// Parses the scheme names accepted by the CLI and stored in containers.
inline SchemeConfig parse_scheme(std::string_view name) {
  if (name == "ocp32") return SchemeConfig::ocp(32);
  if (name == "ocp16") return SchemeConfig::ocp(16);
  if (name == "mx16") return SchemeConfig::mx16();
  if (name == "mx16-oas") return SchemeConfig::mx16_oas();
  if (name == "mbs-s") return SchemeConfig::mbs_static();
  if (name == "mbs-d") return SchemeConfig::mbs_dynamic();
  if (name == "nvfp4") return SchemeConfig::nvfp4();
  fail("unknown scheme '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Quantized tensor

struct QuantizedTensor {
  Variant variant = Variant::mx16_oas;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t block_size = kComputeBlock;
  std::size_t macro_size = 0;  // 0 for non-MBS variants
  /// Two codes per byte, even column in the low nibble.
  std::vector<std::uint8_t> codes;
  /// One per block, row-major (all variants except nvfp4).
  std::vector<E8M0Scale> block_scales;
  /// One per block, row-major (nvfp4 only).
  std::vector<E4M3Value> nv_block_scales;
  /// One per macro block, row-major (MBS variants only).
  std::vector<Mantissa8> mbs_mantissas;
  /// Power-of-two per-tensor scale (nvfp4 only).
  std::optional<double> tensor_scale;

  std::size_t blocks_per_row() const { return cols / block_size; }
  std::size_t macros_per_row() const { return macro_size == 0 ? 0 : (cols + macro_size - 1) / macro_size; }

  Fp4Code code(std::size_t r, std::size_t c) const {
    const std::size_t i = r * cols + c;
    const std::uint8_t byte = codes[i / 2];
    return Fp4Code{static_cast<std::uint8_t>(i % 2 == 0 ? (byte & 0x0F) : (byte >> 4))};
  }
  void set_code(std::size_t r, std::size_t c, Fp4Code v) {
    const std::size_t i = r * cols + c;
    std::uint8_t& byte = codes[i / 2];
    byte = i % 2 == 0 ? static_cast<std::uint8_t>((byte & 0xF0) | v.bits)
                      : static_cast<std::uint8_t>((byte & 0x0F) | (v.bits << 4));
  }

  /// Dequantization multiplier of block b in row r (nvfp4: E4M3 value without
  /// the tensor scale).
  double block_multiplier(std::size_t r, std::size_t b) const {
    const std::size_t i = r * blocks_per_row() + b;
    return variant == Variant::nvfp4 ? decode_e4m3(nv_block_scales[i]) : decode_e8m0(block_scales[i]);
  }

  Mantissa8 mantissa_at(std::size_t r, std::size_t c) const {
    if (!is_mbs(variant)) return Mantissa8{};
    return mbs_mantissas[r * macros_per_row() + c / macro_size];
  }

  /// Structural consistency: section sizes, variant fields, scale codes.
  void validate() const {
    require(block_size > 0 && cols % block_size == 0, "quantized tensor: cols not divisible by block size");
    require(codes.size() == (rows * cols + 1) / 2, "quantized tensor: code section length mismatch");
    const std::size_t nblocks = rows * blocks_per_row();
    if (variant == Variant::nvfp4) {
      require(nv_block_scales.size() == nblocks && block_scales.empty(), "quantized tensor: nvfp4 scale section mismatch");
      require(tensor_scale.has_value(), "quantized tensor: nvfp4 requires a tensor scale");
      require(std::isfinite(*tensor_scale) && *tensor_scale > 0, "quantized tensor: invalid tensor scale");
      for (const auto s : nv_block_scales) require(!s.is_nan(), "quantized tensor: corrupt E4M3 block scale");
    } else {
      require(block_scales.size() == nblocks && nv_block_scales.empty(), "quantized tensor: block scale section mismatch");
      require(!tensor_scale.has_value(), "quantized tensor: unexpected tensor scale");
      for (const auto s : block_scales) require(s.valid(), "quantized tensor: corrupt E8M0 block scale (code 255)");
    }
    if (is_mbs(variant)) {
      require(macro_size > 0 && macro_size % block_size == 0, "quantized tensor: bad macro size");
      require(mbs_mantissas.size() == rows * macros_per_row(), "quantized tensor: mantissa section mismatch");
    } else {
      require(mbs_mantissas.empty(), "quantized tensor: unexpected mantissa section");
    }
  }

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

// ---------------------------------------------------------------------------
// Block scales

namespace detail {

inline double absmax(std::span<const float> xs) {
  double m = 0.0;
  for (const float x : xs) {
    require(std::isfinite(x), "non-finite element");
    m = std::max(m, static_cast<double>(std::fabs(x)));
  }
  return m;
}

/// Exponent k of the largest power of two with amax * 2^k <= 6.
inline int fp4_fit_exponent(double amax) {
  int e = 0;
  const double f = std::frexp(amax, &e);  // amax = f * 2^e, f in [0.5, 1)
  return (f <= 0.75 ? 3 : 2) - e;
}

}  // namespace detail

/// SF = 1/D as a double.
inline double quant_factor(E8M0Scale d) { return std::ldexp(1.0, -d.exponent()); }

/// OCP rule: D = 2^(floor(log2 amax) - 2).
inline E8M0Scale block_scale_ocp(std::span<const float> block) {
  const double amax = detail::absmax(block);
  if (amax == 0.0) return E8M0Scale{};
  return e8m0_from_exponent(std::ilogb(amax) - 2).scale;
}

/// Block-16 rule: SF = floor_pow2(6 / amax) evaluated on the block scaled by
/// `factor`; with OAS the factor is doubled when amax * SF <= 3.5.
inline E8M0Scale block_scale_16(std::span<const float> block, bool oas, Mantissa8 factor = {}) {
  const double amax = detail::absmax(block) * factor.factor();
  if (amax == 0.0) return E8M0Scale{};
  int k = detail::fp4_fit_exponent(amax);
  if (oas && std::ldexp(amax, k) <= kOasThreshold) ++k;
  return e8m0_from_exponent(-k).scale;
}

/// Encodes x * factor * sf per element, saturating at 6. The product is
/// exact in double precision.
inline void quantize_block(std::span<const float> block, double sf, Mantissa8 factor, std::span<Fp4Code> out) {
  require(sf > 0.0, "quantize_block: scale must be positive");
  require(out.size() == block.size(), "quantize_block: output size mismatch");
  const double f = factor.factor();
  for (std::size_t i = 0; i < block.size(); ++i) {
    require(std::isfinite(block[i]), "quantize_block: non-finite element");
    out[i] = encode_e2m1(static_cast<double>(block[i]) * f * sf, true);
  }
}

inline std::vector<Fp4Code> quantize_block(std::span<const float> block, double sf, Mantissa8 factor = {}) {
  std::vector<Fp4Code> out(block.size());
  quantize_block(block, sf, factor, out);
  return out;
}

/// Reconstructed value of one element. Exact in single precision for every
/// E8M0 multiplier with an FP16 sigma.
inline float dequant_element(Fp4Code c, double multiplier, double sigma) {
  return static_cast<float>(decode_e2m1(c) * multiplier * sigma);
}

// ---------------------------------------------------------------------------
// Macro block scaling

inline Mantissa8 mbs_static_mantissa(float alpha_max_macro) {
  require(std::isfinite(alpha_max_macro) && alpha_max_macro >= 0.0f, "mbs_static_mantissa: invalid absmax");
  if (alpha_max_macro == 0.0f) return Mantissa8{};
  return extract_mantissa8(6.0f / alpha_max_macro);
}

inline Mantissa8 mbs_static_mantissa(std::span<const float> macro) {
  return mbs_static_mantissa(static_cast<float>(detail::absmax(macro)));
}

/// Quantizes a macro block with mantissa m: each 16-element sub-block gets
/// its OAS scale computed after scaling by (1 + m8/256).
inline void quantize_macro(std::span<const float> macro, Mantissa8 m, std::span<Fp4Code> codes,
                           std::span<E8M0Scale> scales) {
  const std::size_t nsub = macro.size() / kComputeBlock;
  for (std::size_t b = 0; b < nsub; ++b) {
    const auto sub = macro.subspan(b * kComputeBlock, kComputeBlock);
    const E8M0Scale d = block_scale_16(sub, true, m);
    scales[b] = d;
    quantize_block(sub, quant_factor(d), m, codes.subspan(b * kComputeBlock, kComputeBlock));
  }
}

/// Absolute SSE of the macro block reconstructed under mantissa m.
inline double macro_sse(std::span<const float> macro, Mantissa8 m) {
  std::array<Fp4Code, kComputeBlock> codes{};
  const double sigma = m.sigma();
  double sse = 0.0;
  for (std::size_t off = 0; off < macro.size(); off += kComputeBlock) {
    const auto sub = macro.subspan(off, kComputeBlock);
    const E8M0Scale d = block_scale_16(sub, true, m);
    quantize_block(sub, quant_factor(d), m, codes);
    const double mult = d.value();
    for (std::size_t i = 0; i < kComputeBlock; ++i) {
      const double err = static_cast<double>(sub[i]) - dequant_element(codes[i], mult, sigma);
      sse += err * err;
    }
  }
  return sse;
}

namespace detail {

/// Index of the smallest score; ties go to the smallest m8.
inline Mantissa8 pick_min(const CandidateSet& candidates, std::span<const double> scores) {
  require(!candidates.mantissas.empty(), "MBS-D: empty candidate set");
  Mantissa8 best = candidates.mantissas.front();
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < candidates.mantissas.size(); ++j) {
    const Mantissa8 m = candidates.mantissas[j];
    if (scores[j] < best_score || (scores[j] == best_score && m < best)) {
      best = m;
      best_score = scores[j];
    }
  }
  return best;
}

}  // namespace detail

/// Candidate minimising the reconstructed macro-block SSE; ties go to the
/// smallest m8.
inline Mantissa8 mbs_dynamic_exact(std::span<const float> macro, const CandidateSet& candidates) {
  require(macro.size() % kComputeBlock == 0, "MBS-D: macro block must hold whole 16-blocks");
  require(!candidates.mantissas.empty(), "MBS-D: empty candidate set");
  std::vector<double> scores;
  scores.reserve(candidates.mantissas.size());
  for (const Mantissa8 m : candidates.mantissas) scores.push_back(macro_sse(macro, m));
  return detail::pick_min(candidates, scores);
}

// ---------------------------------------------------------------------------
// Error lookup table for MBS-D

/// Squared relative errors of quantizing u = v * (1 + m_j) on the saturating
/// E2M1 grid, sampled at bin centres. Regime 0 covers v in [0, 1), regime 1
/// covers v in [1, 8); both are split into 64 uniform bins.
class ErrorLut {
 public:
  static constexpr std::size_t kRegimes = 2;
  static constexpr std::size_t kCandidates = 16;
  static constexpr std::size_t kBins = 64;
  static constexpr std::size_t kEntries = kRegimes * kCandidates * kBins;

  static constexpr double regime_lo(std::size_t regime) { return regime == 0 ? 0.0 : 1.0; }
  static constexpr double regime_hi(std::size_t regime) { return regime == 0 ? 1.0 : 8.0; }
  static constexpr double bin_width(std::size_t regime) {
    return (regime_hi(regime) - regime_lo(regime)) / static_cast<double>(kBins);
  }
  static constexpr double bin_center(std::size_t regime, std::size_t bin) {
    return regime_lo(regime) + (static_cast<double>(bin) + 0.5) * bin_width(regime);
  }
  static std::size_t regime_of(double v) { return v < 1.0 ? 0 : 1; }
  static std::size_t bin_of(double v) {
    const std::size_t regime = regime_of(v);
    const double pos = (v - regime_lo(regime)) / bin_width(regime);
    return std::min(static_cast<std::size_t>(pos), kBins - 1);
  }

  static ErrorLut build(const CandidateSet& candidates) {
    require(candidates.mantissas.size() == kCandidates, "error LUT requires exactly 16 candidates");
    ErrorLut lut;
    for (std::size_t j = 0; j < kCandidates; ++j) {
      lut.candidates_[j] = candidates.mantissas[j];
      const double f = candidates.mantissas[j].factor();
      for (std::size_t regime = 0; regime < kRegimes; ++regime) {
        for (std::size_t bin = 0; bin < kBins; ++bin) {
          const double u = bin_center(regime, bin) * f;
          const double q = decode_e2m1(encode_e2m1(u, true));
          const double rel = (q - u) / u;
          lut.entries_[index(regime, j, bin)] = half_bits(rel * rel);
        }
      }
    }
    return lut;
  }

  double entry(std::size_t regime, std::size_t candidate, std::size_t bin) const {
    return half_value(entries_[index(regime, candidate, bin)]);
  }
  /// Entry for value v under candidate j.
  double lookup(double v, std::size_t candidate) const { return entry(regime_of(v), candidate, bin_of(v)); }

  std::span<const std::uint16_t, kEntries> raw() const { return entries_; }
  const std::array<Mantissa8, kCandidates>& candidates() const { return candidates_; }

  bool matches(const CandidateSet& set) const {
    return set.mantissas.size() == kCandidates && std::equal(candidates_.begin(), candidates_.end(), set.mantissas.begin());
  }

 private:
  static constexpr std::size_t index(std::size_t regime, std::size_t candidate, std::size_t bin) {
    return (regime * kCandidates + candidate) * kBins + bin;
  }

  std::array<Mantissa8, kCandidates> candidates_{};
  std::array<std::uint16_t, kEntries> entries_{};
};

inline ErrorLut build_error_lut(const CandidateSet& candidates) { return ErrorLut::build(candidates); }

/// LUT-estimated SSE search: sum over elements of x^2 * T[x * SF_b(m_j), j].
inline Mantissa8 mbs_dynamic_lut(std::span<const float> macro, const ErrorLut& lut, const CandidateSet& candidates) {
  require(lut.matches(candidates), "MBS-D LUT: table was built from a different candidate set");
  require(macro.size() % kComputeBlock == 0, "MBS-D: macro block must hold whole 16-blocks");
  std::array<double, ErrorLut::kCandidates> scores{};
  for (std::size_t j = 0; j < ErrorLut::kCandidates; ++j) {
    const Mantissa8 m = candidates.mantissas[j];
    double score = 0.0;
    for (std::size_t off = 0; off < macro.size(); off += kComputeBlock) {
      const auto sub = macro.subspan(off, kComputeBlock);
      const double sf = quant_factor(block_scale_16(sub, true, m));
      for (const float x : sub) {
        if (x == 0.0f) continue;
        const double xd = x;
        score += xd * xd * lut.lookup(std::fabs(xd) * sf, j);
      }
    }
    scores[j] = score;
  }
  return detail::pick_min(candidates, scores);
}

// ---------------------------------------------------------------------------
// Tensor quantization

namespace detail {

inline QuantizedTensor make_layout(const Tensor& t, const SchemeConfig& cfg) {
  require(t.cols() % cfg.block_size == 0,
          "tensor row length " + std::to_string(t.cols()) + " not divisible by block size " +
              std::to_string(cfg.block_size));
  QuantizedTensor q;
  q.variant = cfg.variant;
  q.rows = t.rows();
  q.cols = t.cols();
  q.block_size = cfg.block_size;
  q.macro_size = is_mbs(cfg.variant) ? cfg.macro_size : 0;
  q.codes.assign((t.rows() * t.cols() + 1) / 2, 0);
  return q;
}

inline void store_codes(QuantizedTensor& q, std::size_t r, std::size_t c0, std::span<const Fp4Code> codes) {
  for (std::size_t i = 0; i < codes.size(); ++i) q.set_code(r, c0 + i, codes[i]);
}

}  // namespace detail

/// Largest power of two s with 2688 * s >= amax (so block scales fit E4M3).
inline double nvfp4_tensor_scale(double amax) {
  require(std::isfinite(amax) && amax > 0.0, "nvfp4 tensor scale: invalid absmax");
  constexpr double kSpan = kE4m3Max * kFp4Max;
  int e = std::ilogb(amax / kSpan);
  while (std::ldexp(kSpan, e) < amax) ++e;
  while (std::ldexp(kSpan, e - 1) >= amax) --e;
  return std::ldexp(1.0, e);
}

inline QuantizedTensor quantize_nvfp4(const Tensor& t) {
  QuantizedTensor q = detail::make_layout(t, SchemeConfig::nvfp4());
  const std::size_t nb = q.blocks_per_row();
  q.nv_block_scales.assign(t.rows() * nb, E4M3Value{});
  const double amax = detail::absmax(t.data());
  if (amax == 0.0) {
    q.tensor_scale = 1.0;
    return q;
  }
  const double st = nvfp4_tensor_scale(amax);
  q.tensor_scale = st;
  parallel_for(t.rows(), [&](std::size_t r) {
    const auto row = t.row(r);
    std::array<Fp4Code, kComputeBlock> codes{};
    for (std::size_t b = 0; b < nb; ++b) {
      const auto blk = row.subspan(b * kComputeBlock, kComputeBlock);
      const double bmax = detail::absmax(blk);
      const E4M3Value s = encode_e4m3(bmax / (kFp4Max * st));
      q.nv_block_scales[r * nb + b] = s;
      const double mult = decode_e4m3(s) * st;
      if (mult == 0.0) {
        codes.fill(Fp4Code{});
      } else {
        for (std::size_t i = 0; i < kComputeBlock; ++i)
          codes[i] = encode_e2m1(static_cast<double>(blk[i]) / mult, true);
      }
      detail::store_codes(q, r, b * kComputeBlock, codes);
    }
  });
  return q;
}

inline QuantizedTensor quantize_tensor(const Tensor& t, const SchemeConfig& cfg) {
  cfg.validate();
  if (cfg.variant == Variant::nvfp4) return quantize_nvfp4(t);
  for (const float x : t.data()) require(std::isfinite(x), "quantize_tensor: non-finite element");

  QuantizedTensor q = detail::make_layout(t, cfg);
  const std::size_t bs = cfg.block_size;
  const std::size_t nb = q.blocks_per_row();
  q.block_scales.assign(t.rows() * nb, E8M0Scale{});

  if (!is_mbs(cfg.variant)) {
    const bool oas = cfg.variant == Variant::mx16_oas;
    parallel_for(t.rows(), [&](std::size_t r) {
      const auto row = t.row(r);
      std::vector<Fp4Code> codes(bs);
      for (std::size_t b = 0; b < nb; ++b) {
        const auto blk = row.subspan(b * bs, bs);
        const E8M0Scale d = cfg.variant == Variant::ocp ? block_scale_ocp(blk) : block_scale_16(blk, oas);
        q.block_scales[r * nb + b] = d;
        quantize_block(blk, quant_factor(d), Mantissa8{}, codes);
        detail::store_codes(q, r, b * bs, codes);
      }
    });
    return q;
  }

  const std::size_t nm = q.macros_per_row();
  q.mbs_mantissas.assign(t.rows() * nm, Mantissa8{});
  std::optional<ErrorLut> lut;
  if (cfg.variant == Variant::mbs_dynamic && cfg.mbs_mode == MbsMode::lut) lut = build_error_lut(cfg.candidates);

  parallel_for(t.rows(), [&](std::size_t r) {
    const auto row = t.row(r);
    std::vector<Fp4Code> codes(cfg.macro_size);
    for (std::size_t mi = 0; mi < nm; ++mi) {
      const std::size_t c0 = mi * cfg.macro_size;
      const auto macro = row.subspan(c0, std::min(cfg.macro_size, t.cols() - c0));
      const Mantissa8 stat = mbs_static_mantissa(macro);
      Mantissa8 m = stat;
      if (cfg.variant == Variant::mbs_dynamic) {
        if (lut) {
          m = mbs_dynamic_lut(macro, *lut, cfg.candidates);
        } else {
          m = mbs_dynamic_exact(macro, cfg.augment_static ? cfg.candidates.with(stat) : cfg.candidates);
        }
      }
      q.mbs_mantissas[r * nm + mi] = m;
      const auto out = std::span(codes).first(macro.size());
      quantize_macro(macro, m, out, std::span(q.block_scales).subspan(r * nb + c0 / bs, macro.size() / bs));
      detail::store_codes(q, r, c0, out);
    }
  });
  return q;
}

inline Tensor dequantize_tensor(const QuantizedTensor& q) {
  q.validate();
  Tensor out(q.rows, q.cols);
  const double ts = q.tensor_scale.value_or(1.0);
  const std::size_t nb = q.blocks_per_row();
  parallel_for(q.rows, [&](std::size_t r) {
    for (std::size_t b = 0; b < nb; ++b) {
      const double mult = q.block_multiplier(r, b) * ts;
      for (std::size_t i = 0; i < q.block_size; ++i) {
        const std::size_t c = b * q.block_size + i;
        out(r, c) = dequant_element(q.code(r, c), mult, q.mantissa_at(r, c).sigma());
      }
    }
  });
  return out;
}

}  // namespace mxq
