// SPDX-License-Identifier: Apache-2.0
//
// Fidelity metrics: QSNR for tensors and matmul outputs, flush-to-zero
// rates, block-scale exponent statistics, seeded averages and the
// macro-block-size ablation sweep.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mxq/error.hpp"
#include "mxq/gemm.hpp"
#include "mxq/parallel.hpp"
#include "mxq/quantize.hpp"
#include "mxq/synth.hpp"
#include "mxq/tensor.hpp"

namespace mxq {

struct QsnrReport {
  /// +inf when the reconstruction is exact.
  double qsnr_db = 0.0;
  /// Mean squared error per element.
  double mse = 0.0;
  /// Mean squared reference value per element.
  double signal_power = 0.0;
  std::size_t n_tensors = 1;
  std::optional<double> ftz_rate;
};

inline QsnrReport qsnr_tensor(const Tensor& ref, const Tensor& q) {
  require(ref.rows() == q.rows() && ref.cols() == q.cols(),
          "qsnr: shape mismatch (" + shape_string(ref.rows(), ref.cols()) + " vs " + shape_string(q.rows(), q.cols()) + ")");
  double signal = 0.0;
  double noise = 0.0;
  const auto r = ref.data();
  const auto x = q.data();
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double v = r[i];
    const double d = v - static_cast<double>(x[i]);
    signal += v * v;
    noise += d * d;
  }
  require(signal > 0.0, "qsnr: reference tensor is all zero");
  const double n = static_cast<double>(r.size());
  QsnrReport rep;
  rep.signal_power = signal / n;
  rep.mse = noise / n;
  rep.qsnr_db = noise == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(signal / noise);
  return rep;
}

inline QsnrReport qsnr_matmul(const Tensor& a, const Tensor& b, const QuantizedTensor& aq, const QuantizedTensor& bq) {
  require(aq.rows == a.rows() && aq.cols == a.cols() && bq.rows == b.rows() && bq.cols == b.cols(),
          "qsnr_matmul: quantized operands do not match reference shapes");
  return qsnr_tensor(matmul_reference(a, b), matmul_quantized(aq, bq));
}

/// Fraction of nonzero reference elements whose code magnitude is zero.
inline double flush_to_zero_rate(const Tensor& ref, const QuantizedTensor& q) {
  require(ref.rows() == q.rows && ref.cols() == q.cols, "flush_to_zero_rate: shape mismatch");
  std::size_t nonzero = 0;
  std::size_t flushed = 0;
  for (std::size_t r = 0; r < ref.rows(); ++r) {
    for (std::size_t c = 0; c < ref.cols(); ++c) {
      if (ref(r, c) == 0.0f) continue;
      ++nonzero;
      if (q.code(r, c).index() == 0) ++flushed;
    }
  }
  return nonzero == 0 ? 0.0 : static_cast<double>(flushed) / static_cast<double>(nonzero);
}

inline std::size_t flush_to_zero_count(const Tensor& ref, const QuantizedTensor& q) {
  std::size_t flushed = 0;
  for (std::size_t r = 0; r < ref.rows(); ++r)
    for (std::size_t c = 0; c < ref.cols(); ++c)
      if (ref(r, c) != 0.0f && q.code(r, c).index() == 0) ++flushed;
  return flushed;
}

struct ScaleSpanStats {
  int max_exponent = 0;
  int min_exponent = 0;
  /// Blocks whose scale is at least 2^-15 of the largest.
  double within_2p15 = 1.0;
  /// Blocks whose power-of-two scale an E4M3 field holds losslessly once the
  /// largest is aligned to its top binade (2^-9 .. 2^8, 18 binades).
  double e4m3_representable = 1.0;
  std::size_t blocks = 0;

  int span() const { return max_exponent - min_exponent; }
};

/// Exponent statistics over the E8M0 block scales. Blocks quantized to all
/// zeros carry no information and are skipped.
inline ScaleSpanStats scale_exponent_span(const QuantizedTensor& q) {
  require(q.variant != Variant::nvfp4, "scale_exponent_span: NVFP4 has no E8M0 scales");
  q.validate();
  std::vector<int> exps;
  const std::size_t nb = q.blocks_per_row();
  for (std::size_t r = 0; r < q.rows; ++r) {
    for (std::size_t b = 0; b < nb; ++b) {
      bool live = false;
      for (std::size_t i = 0; i < q.block_size && !live; ++i) live = q.code(r, b * q.block_size + i).index() != 0;
      if (live) exps.push_back(q.block_scales[r * nb + b].exponent());
    }
  }
  ScaleSpanStats s;
  s.blocks = exps.size();
  if (exps.empty()) return s;
  s.max_exponent = *std::max_element(exps.begin(), exps.end());
  s.min_exponent = *std::min_element(exps.begin(), exps.end());
  std::size_t within = 0;
  std::size_t e4 = 0;
  for (const int e : exps) {
    if (s.max_exponent - e <= 15) ++within;
    if (s.max_exponent - e <= 17) ++e4;
  }
  s.within_2p15 = static_cast<double>(within) / static_cast<double>(exps.size());
  s.e4m3_representable = static_cast<double>(e4) / static_cast<double>(exps.size());
  return s;
}

/// Fraction of nonzero 16-blocks whose OAS branch doubles the scale.
inline double oas_trigger_rate(const Tensor& t) {
  require(t.cols() % kComputeBlock == 0, "oas_trigger_rate: row length not divisible by 16");
  std::size_t live = 0;
  std::size_t doubled = 0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto row = t.row(r);
    for (std::size_t off = 0; off < row.size(); off += kComputeBlock) {
      const auto blk = row.subspan(off, kComputeBlock);
      const E8M0Scale plain = block_scale_16(blk, false);
      const E8M0Scale oas = block_scale_16(blk, true);
      if (detail::absmax(blk) == 0.0) continue;
      ++live;
      if (!(plain == oas)) ++doubled;
    }
  }
  return live == 0 ? 0.0 : static_cast<double>(doubled) / static_cast<double>(live);
}

/// Quantize, dequantize and score one tensor.
inline QsnrReport evaluate_scheme(const Tensor& t, const SchemeConfig& cfg) {
  const QuantizedTensor q = quantize_tensor(t, cfg);
  QsnrReport rep = qsnr_tensor(t, dequantize_tensor(q));
  rep.ftz_rate = flush_to_zero_rate(t, q);
  return rep;
}

namespace detail {

inline QsnrReport average(const std::vector<QsnrReport>& reps) {
  QsnrReport out;
  out.n_tensors = reps.size();
  double db = 0.0, mse = 0.0, sig = 0.0, ftz = 0.0;
  bool have_ftz = true;
  for (const auto& r : reps) {
    db += r.qsnr_db;
    mse += r.mse;
    sig += r.signal_power;
    if (r.ftz_rate) ftz += *r.ftz_rate;
    else have_ftz = false;
  }
  const double n = static_cast<double>(reps.size());
  out.qsnr_db = db / n;
  out.mse = mse / n;
  out.signal_power = sig / n;
  if (have_ftz) out.ftz_rate = ftz / n;
  return out;
}

}  // namespace detail

/// Arithmetic mean of per-tensor dB over n tensors with seeds base + i.
inline QsnrReport mean_qsnr(const GeneratorSpec& spec, std::size_t n, const SchemeConfig& cfg) {
  require(n >= 1, "mean_qsnr: need at least one tensor");
  std::vector<QsnrReport> reps(n);
  parallel_for(n, [&](std::size_t i) { reps[i] = evaluate_scheme(generate_tensor(spec.with_seed(spec.seed + i)), cfg); });
  return detail::average(reps);
}

// ---------------------------------------------------------------------------
// Macro-block-size ablation

struct SweepRow {
  std::string scheme;
  std::size_t macro_size = 0;
  std::string role;  // activation | weight | output
  double mean_qsnr_db = 0.0;
  /// Absent for the output role.
  std::optional<double> mean_ftz_rate;
};

struct SweepResult {
  std::vector<SweepRow> rows;
};

struct SweepSpec {
  GeneratorSpec activation;
  GeneratorSpec weight;
  std::vector<std::size_t> macro_sizes{32, 64, 128, 256, 512};
  std::vector<SchemeConfig> schemes;
  std::size_t n = 8;
};

inline SweepResult ablation_sweep(const SweepSpec& spec) {
  require(spec.n >= 1, "sweep: need at least one sample");
  require(spec.activation.cols == spec.weight.cols, "sweep: activation and weight must share K");
  for (const std::size_t m : spec.macro_sizes)
    require(m > 0 && m % kComputeBlock == 0, "sweep: macro size " + std::to_string(m) + " is not a multiple of 16");

  std::vector<SchemeConfig> points;
  for (const auto& scheme : spec.schemes) {
    for (const std::size_t m : spec.macro_sizes) {
      SchemeConfig cfg = scheme;
      cfg.macro_size = m;
      cfg.validate();
      points.push_back(cfg);
    }
  }

  // samples x points x {activation, weight, output}
  std::vector<std::vector<std::array<QsnrReport, 3>>> per_sample(spec.n, std::vector<std::array<QsnrReport, 3>>(points.size()));
  parallel_for(spec.n, [&](std::size_t s) {
    const Tensor act = generate_tensor(spec.activation.with_seed(spec.activation.seed + s));
    const Tensor w = generate_tensor(spec.weight.with_seed(spec.weight.seed + s));
    const Tensor ref = matmul_reference(act, w);
    for (std::size_t p = 0; p < points.size(); ++p) {
      const QuantizedTensor aq = quantize_tensor(act, points[p]);
      const QuantizedTensor wq = quantize_tensor(w, points[p]);
      auto& slot = per_sample[s][p];
      slot[0] = qsnr_tensor(act, dequantize_tensor(aq));
      slot[0].ftz_rate = flush_to_zero_rate(act, aq);
      slot[1] = qsnr_tensor(w, dequantize_tensor(wq));
      slot[1].ftz_rate = flush_to_zero_rate(w, wq);
      slot[2] = qsnr_tensor(ref, matmul_quantized(aq, wq));
    }
  });

  static constexpr const char* kRoles[3] = {"activation", "weight", "output"};
  SweepResult result;
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (std::size_t role = 0; role < 3; ++role) {
      std::vector<QsnrReport> reps;
      for (std::size_t s = 0; s < spec.n; ++s) reps.push_back(per_sample[s][p][role]);
      const QsnrReport avg = detail::average(reps);
      result.rows.push_back({scheme_name(points[p]), points[p].macro_size, kRoles[role], avg.qsnr_db, avg.ftz_rate});
    }
  }
  return result;
}

}  // namespace mxq
