// SPDX-License-Identifier: Apache-2.0
//
// mxq: command-line front end.
//
//   mxq gen        --dist student-t --shape 256x1024 --seed 1 --out a.mxt
//   mxq quantize   --scheme mbs-d --in a.mxt --out a.mxq
//   mxq dequantize --in a.mxq --out a_hat.mxt
//   mxq qsnr       --scheme mx16,mx16-oas --dist student-t --shape 256x1024 --n 100
//   mxq sweep      --schemes mbs-s,mbs-d --macro-sizes 32,64,128,256,512 --n 8
//   mxq gemm       --a a.mxt --b w.mxt --scheme-a mbs-s --scheme-b mbs-d --verify
//   mxq roofline   --tm 128 --tn 128 --tk 128
//   mxq lut-dump   --out lut.json
//
// Exit status: 0 success, 1 usage error, 2 data or verification error.
// csv and json output is byte-stable for fixed flags; table output is for
// people.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mxq/mxq.hpp"

namespace {

using namespace mxq;
using Json = nlohmann::ordered_json;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VerificationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Report rows: (scheme, macro_size, role) plus named metrics.

using Value = std::variant<double, std::uint64_t>;

struct Record {
  std::string scheme;
  std::size_t macro_size = 0;
  std::string role;
  std::vector<std::pair<std::string, Value>> metrics;
};

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_value(const Value& v) {
  if (const auto* u = std::get_if<std::uint64_t>(&v)) return std::to_string(*u);
  return format_double(std::get<double>(v));
}

Json json_value(const Value& v) {
  if (const auto* u = std::get_if<std::uint64_t>(&v)) return *u;
  const double d = std::get<double>(v);
  if (!std::isfinite(d)) return format_double(d);
  return d;
}

void emit(const std::vector<Record>& records, const std::string& format, std::ostream& os) {
  if (format == "csv") {
    os << "scheme,macro_size,role,metric,value\n";
    for (const auto& r : records)
      for (const auto& [name, v] : r.metrics)
        os << r.scheme << ',' << r.macro_size << ',' << r.role << ',' << name << ',' << format_value(v) << '\n';
    return;
  }
  if (format == "json") {
    Json rows = Json::array();
    for (const auto& r : records) {
      Json o;
      o["scheme"] = r.scheme;
      o["macro_size"] = r.macro_size;
      o["role"] = r.role;
      for (const auto& [name, v] : r.metrics) o[name] = json_value(v);
      rows.push_back(std::move(o));
    }
    os << Json{{"rows", rows}}.dump(2) << '\n';
    return;
  }
  for (const auto& r : records) {
    char head[96];
    std::snprintf(head, sizeof(head), "%-10s %6zu  %-10s", r.scheme.c_str(), r.macro_size, r.role.c_str());
    os << head;
    for (const auto& [name, v] : r.metrics) {
      if (const auto* d = std::get_if<double>(&v); d && std::isfinite(*d)) {
        char cell[96];
        std::snprintf(cell, sizeof(cell), "  %s=%.4f", name.c_str(), *d);
        os << cell;
      } else {
        os << "  " << name << '=' << format_value(v);
      }
    }
    os << '\n';
  }
}

std::vector<std::pair<std::string, Value>> qsnr_metrics(const QsnrReport& r) {
  std::vector<std::pair<std::string, Value>> m = {{"qsnr_db", r.qsnr_db},
                                                  {"mse", r.mse},
                                                  {"signal_power", r.signal_power},
                                                  {"n_tensors", static_cast<std::uint64_t>(r.n_tensors)}};
  if (r.ftz_rate) m.emplace_back("ftz_rate", *r.ftz_rate);
  return m;
}

// ---------------------------------------------------------------------------
// Argument helpers

std::pair<std::size_t, std::size_t> parse_shape(const std::string& text) {
  const auto x = text.find('x');
  const auto number = [&](std::string_view s) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || v == 0)
      throw UsageError("bad shape '" + text + "', expected ROWSxCOLS");
    return v;
  };
  if (x == std::string::npos) throw UsageError("bad shape '" + text + "', expected ROWSxCOLS");
  const std::string_view sv(text);
  return {number(sv.substr(0, x)), number(sv.substr(x + 1))};
}

struct SchemeFlags {
  std::size_t macro_size = kDefaultMacro;
  std::string mbs_mode = "exact";

  void add_to(CLI::App* cmd) {
    cmd->add_option("--macro-size", macro_size, "MBS macro-block length")->capture_default_str();
    cmd->add_option("--mbs-mode", mbs_mode, "MBS-D search mode")
        ->check(CLI::IsMember({"exact", "lut"}))
        ->capture_default_str();
  }

  SchemeConfig make(const std::string& name) const {
    SchemeConfig cfg;
    try {
      cfg = parse_scheme(name);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    if (is_mbs(cfg.variant)) cfg.macro_size = macro_size;
    if (cfg.variant == Variant::mbs_dynamic) cfg.mbs_mode = mbs_mode == "lut" ? MbsMode::lut : MbsMode::exact;
    try {
      cfg.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

struct GenFlags {
  std::string dist = "gaussian";
  std::string shape = "256x1024";
  double dof = 4.0;
  double rate = 0.01;
  double magnitude = 100.0;

  void add_to(CLI::App* cmd, const std::string& prefix = "") {
    cmd->add_option("--" + prefix + "dist", dist, "distribution")
        ->check(CLI::IsMember({"gaussian", "lognormal", "student-t", "outliers"}))
        ->capture_default_str();
    cmd->add_option("--" + prefix + "shape", shape, "ROWSxCOLS")->capture_default_str();
    if (prefix.empty()) {
      cmd->add_option("--dof", dof, "student-t degrees of freedom")->capture_default_str();
      cmd->add_option("--outlier-rate", rate, "outlier fraction")->capture_default_str();
      cmd->add_option("--outlier-magnitude", magnitude, "outlier scale")->capture_default_str();
    }
  }

  GeneratorSpec make(std::uint64_t seed) const {
    GeneratorSpec g;
    g.distribution = parse_distribution(dist);
    std::tie(g.rows, g.cols) = parse_shape(shape);
    g.seed = seed;
    g.dof = dof;
    g.rate = rate;
    g.magnitude = magnitude;
    try {
      g.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return g;
  }
};

bool is_quant_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::memcmp(magic, kQuantMagic, 4) == 0;
}

/// Distance in representable floats; 0 iff the bit patterns agree (up to +-0).
std::uint64_t ulp_distance(float a, float b) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b) ? 0 : UINT64_MAX;
  const auto ordered = [](float x) {
    const auto bits = static_cast<std::int64_t>(std::bit_cast<std::int32_t>(x));
    return bits < 0 ? std::int64_t{INT32_MIN} - bits : bits;
  };
  const std::int64_t d = ordered(a) - ordered(b);
  return static_cast<std::uint64_t>(d < 0 ? -d : d);
}

// ---------------------------------------------------------------------------
// Subcommands

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "table";
};

void run_gen(const Common& c, const GenFlags& g) {
  if (c.out.empty()) throw UsageError("gen: --out is required");
  const GeneratorSpec spec = g.make(c.seed);
  const Tensor t = generate_tensor(spec);
  save_tensor(c.out, t);
  std::cout << "wrote " << c.out << " (" << distribution_name(spec.distribution) << ", "
            << shape_string(t.rows(), t.cols()) << ", seed " << c.seed << ")\n";
}

void run_quantize(const Common& c, const SchemeFlags& sf, const std::string& scheme, const std::string& in) {
  if (c.out.empty()) throw UsageError("quantize: --out is required");
  const SchemeConfig cfg = sf.make(scheme);
  const Tensor t = load_tensor(in);
  const QuantizedTensor q = quantize_tensor(t, cfg);
  save_quant(c.out, q);
  const auto bytes = encode_quant(q);
  QsnrReport rep = qsnr_tensor(t, dequantize_tensor(q));
  rep.ftz_rate = flush_to_zero_rate(t, q);
  auto m = qsnr_metrics(rep);
  m.emplace_back("bytes", static_cast<std::uint64_t>(bytes.size()));
  emit({{scheme_name(cfg), q.macro_size, "tensor", std::move(m)}}, c.format, std::cout);
}

void run_dequantize(const Common& c, const std::string& in) {
  if (c.out.empty()) throw UsageError("dequantize: --out is required");
  const QuantizedTensor q = load_quant(in);
  save_tensor(c.out, dequantize_tensor(q));
  std::cout << "wrote " << c.out << " (" << shape_string(q.rows, q.cols) << ")\n";
}

void run_qsnr(const Common& c, const SchemeFlags& sf, const GenFlags& g, const std::vector<std::string>& schemes,
              const std::string& ref, const std::string& quant, std::size_t n) {
  std::vector<Record> records;
  if (!quant.empty()) {
    if (ref.empty()) throw UsageError("qsnr: --quant needs --ref");
    const Tensor t = load_tensor(ref);
    const QuantizedTensor q = load_quant(quant);
    QsnrReport rep = qsnr_tensor(t, dequantize_tensor(q));
    rep.ftz_rate = flush_to_zero_rate(t, q);
    records.push_back({scheme_name(q.variant, q.block_size), q.macro_size, "tensor", qsnr_metrics(rep)});
  } else {
    if (schemes.empty()) throw UsageError("qsnr: --scheme is required");
    std::optional<Tensor> t;
    if (!ref.empty()) t = load_tensor(ref);
    const GeneratorSpec spec = t ? GeneratorSpec{} : g.make(c.seed);
    for (const auto& name : schemes) {
      const SchemeConfig cfg = sf.make(name);
      const QsnrReport rep = t ? evaluate_scheme(*t, cfg) : mean_qsnr(spec, n, cfg);
      records.push_back({scheme_name(cfg), is_mbs(cfg.variant) ? cfg.macro_size : 0, "tensor", qsnr_metrics(rep)});
    }
  }
  if (c.out.empty()) {
    emit(records, c.format, std::cout);
  } else {
    std::ofstream os(c.out);
    emit(records, c.format, os);
    if (!os) throw Error("cannot write '" + c.out + "'");
  }
}

void run_sweep(const Common& c, const SchemeFlags& sf, const GenFlags& ga, const GenFlags& gw,
               const std::vector<std::string>& schemes, const std::vector<std::size_t>& macros, std::size_t n) {
  SweepSpec spec;
  spec.activation = ga.make(c.seed);
  spec.weight = gw.make(c.seed + 1'000'003);
  if (spec.activation.cols != spec.weight.cols) throw UsageError("sweep: activation and weight shapes must share K");
  spec.macro_sizes = macros;
  for (const std::size_t m : macros)
    if (m == 0 || m % kComputeBlock != 0) throw UsageError("sweep: macro sizes must be positive multiples of 16");
  spec.n = n;
  for (const auto& name : schemes) {
    const SchemeConfig cfg = sf.make(name);
    if (!is_mbs(cfg.variant)) throw UsageError("sweep: '" + name + "' has no macro blocks");
    spec.schemes.push_back(cfg);
  }
  const SweepResult res = ablation_sweep(spec);
  std::vector<Record> records;
  for (const auto& row : res.rows) {
    Record r{row.scheme, row.macro_size, row.role, {{"mean_qsnr_db", row.mean_qsnr_db}}};
    if (row.mean_ftz_rate) r.metrics.emplace_back("mean_ftz_rate", *row.mean_ftz_rate);
    records.push_back(std::move(r));
  }
  if (c.out.empty()) {
    emit(records, c.format, std::cout);
  } else {
    std::ofstream os(c.out);
    emit(records, c.format, os);
    if (!os) throw Error("cannot write '" + c.out + "'");
  }
}

struct GemmFlags {
  std::string a, b;
  std::string scheme_a = "mx16-oas";
  std::string scheme_b = "mx16-oas";
  std::size_t m = 128, n = 128, k = 512;
  bool verify = false;
};

void run_gemm(const Common& c, const SchemeFlags& sf, const GemmFlags& f) {
  std::optional<Tensor> a, b;
  QuantizedTensor aq, bq;
  const auto load_operand = [&](const std::string& path, const std::string& scheme, std::optional<Tensor>& t,
                                QuantizedTensor& q) {
    if (is_quant_file(path)) {
      q = load_quant(path);
    } else {
      t = load_tensor(path);
      q = quantize_tensor(*t, sf.make(scheme));
    }
  };
  if (f.a.empty() != f.b.empty()) throw UsageError("gemm: give both --a and --b, or neither");
  if (f.a.empty()) {
    if (f.m == 0 || f.n == 0 || f.k == 0) throw UsageError("gemm: --m, --n and --k must be positive");
    a = generate_tensor(GeneratorSpec::activation_like(f.m, f.k, c.seed));
    b = generate_tensor(GeneratorSpec::weight_like(f.n, f.k, c.seed + 1));
    aq = quantize_tensor(*a, sf.make(f.scheme_a));
    bq = quantize_tensor(*b, sf.make(f.scheme_b));
  } else {
    load_operand(f.a, f.scheme_a, a, aq);
    load_operand(f.b, f.scheme_b, b, bq);
  }
  const Tensor out = matmul_quantized(aq, bq);
  if (!c.out.empty()) save_tensor(c.out, out);

  const std::string pair = scheme_name(aq.variant, aq.block_size) + "/" + scheme_name(bq.variant, bq.block_size);
  Record rec{pair, std::max(aq.macro_size, bq.macro_size), "output", {}};
  rec.metrics.emplace_back("rows", static_cast<std::uint64_t>(out.rows()));
  rec.metrics.emplace_back("cols", static_cast<std::uint64_t>(out.cols()));
  if (a && b) rec.metrics.emplace_back("qsnr_db", qsnr_tensor(matmul_reference(*a, *b), out).qsnr_db);

  std::uint64_t max_ulp = 0;
  if (f.verify) {
    const Tensor oracle = matmul_reference(dequantize_tensor(aq), dequantize_tensor(bq));
    for (std::size_t i = 0; i < out.size(); ++i)
      max_ulp = std::max(max_ulp, ulp_distance(out.data()[i], oracle.data()[i]));
    rec.metrics.emplace_back("max_ulp_divergence", max_ulp);
  }
  emit({rec}, c.format, std::cout);
  if (f.verify) {
    if (c.format == "table") std::cout << "max divergence: " << max_ulp << "\n";
    if (max_ulp != 0) throw VerificationError("gemm --verify: quantized GEMM diverges from the oracle by " +
                                              std::to_string(max_ulp) + " ulp");
  }
}

void run_roofline(const Common& c, const TileConfig& cfg, double sigma_bytes, double out_bytes) {
  const OverheadReport r = roofline_overhead(cfg, sigma_bytes, out_bytes);
  if (c.format == "table") {
    char line[160];
    std::snprintf(line, sizeof(line), "tile %zux%zux%zu  compute overhead %s%%  traffic overhead %s%%\n", cfg.t_m,
                  cfg.t_n, cfg.t_k, format_double(100.0 * r.compute_ratio).c_str(),
                  format_double(100.0 * r.traffic_ratio).c_str());
    std::cout << line;
    return;
  }
  emit({{"mbs",
         0,
         "epilogue",
         {{"t_m", std::uint64_t{cfg.t_m}},
          {"t_n", std::uint64_t{cfg.t_n}},
          {"t_k", std::uint64_t{cfg.t_k}},
          {"compute_ratio", r.compute_ratio},
          {"traffic_ratio", r.traffic_ratio}}}},
       c.format, std::cout);
}

void run_lut_dump(const Common& c) {
  const ErrorLut lut = build_error_lut(CandidateSet::uniform16());
  Json j;
  j["regimes"] = Json::array();
  for (std::size_t r = 0; r < ErrorLut::kRegimes; ++r)
    j["regimes"].push_back({{"lo", ErrorLut::regime_lo(r)}, {"hi", ErrorLut::regime_hi(r)}});
  j["bins"] = ErrorLut::kBins;
  j["candidates"] = Json::array();
  for (const Mantissa8 m : lut.candidates()) j["candidates"].push_back(m.m8);
  j["entries_fp16"] = Json::array();
  j["entries"] = Json::array();
  for (std::size_t r = 0; r < ErrorLut::kRegimes; ++r) {
    for (std::size_t cand = 0; cand < ErrorLut::kCandidates; ++cand) {
      Json bits = Json::array();
      Json vals = Json::array();
      for (std::size_t bin = 0; bin < ErrorLut::kBins; ++bin) {
        bits.push_back(lut.raw()[(r * ErrorLut::kCandidates + cand) * ErrorLut::kBins + bin]);
        vals.push_back(lut.entry(r, cand, bin));
      }
      j["entries_fp16"].push_back(std::move(bits));
      j["entries"].push_back(std::move(vals));
    }
  }
  const std::string text = j.dump(1) + "\n";
  if (c.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(c.out);
  os << text;
  if (!os) throw Error("cannot write '" + c.out + "'");
  std::cout << "wrote " << c.out << " (" << ErrorLut::kEntries << " entries)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-scaled FP4 quantization toolkit"};
  app.require_subcommand(1);
  Common common;
  std::size_t threads = 0;
  app.add_option("--seed", common.seed, "base RNG seed")->capture_default_str();
  app.add_option("--format", common.format, "report format")
      ->check(CLI::IsMember({"table", "csv", "json"}))
      ->capture_default_str();
  app.add_option("--threads", threads, "worker threads (default: MXQ_NUM_THREADS or hardware)");

  const auto add_common = [&](CLI::App* cmd, bool with_out = true) {
    cmd->add_option("--seed", common.seed, "base RNG seed");
    cmd->add_option("--format", common.format, "report format")->check(CLI::IsMember({"table", "csv", "json"}));
    if (with_out) cmd->add_option("--out", common.out, "output path");
  };

  GenFlags gen_flags;
  auto* gen = app.add_subcommand("gen", "generate a synthetic tensor container");
  add_common(gen);
  gen_flags.add_to(gen);

  SchemeFlags scheme_flags;
  std::string scheme, in_path;
  auto* quant = app.add_subcommand("quantize", "quantize a tensor container");
  add_common(quant);
  quant->add_option("--scheme", scheme, "ocp32|ocp16|mx16|mx16-oas|mbs-s|mbs-d|nvfp4")->required();
  quant->add_option("--in", in_path, "input tensor container")->required();
  scheme_flags.add_to(quant);

  auto* deq = app.add_subcommand("dequantize", "expand a quantized container back to f32");
  add_common(deq);
  deq->add_option("--in", in_path, "input quantized container")->required();

  std::vector<std::string> schemes;
  std::string ref_path, quant_path;
  std::size_t n = 1000;
  auto* qsnr = app.add_subcommand("qsnr", "QSNR and flush-to-zero report");
  add_common(qsnr);
  qsnr->add_option("--scheme", schemes, "scheme list")->delimiter(',');
  qsnr->add_option("--ref", ref_path, "reference tensor container (otherwise synthetic)");
  qsnr->add_option("--quant", quant_path, "quantized container to score against --ref");
  qsnr->add_option("--n", n, "synthetic tensors to average")->capture_default_str();
  scheme_flags.add_to(qsnr);
  gen_flags.add_to(qsnr);

  std::vector<std::size_t> macros{32, 64, 128, 256, 512};
  std::vector<std::string> sweep_schemes{"mbs-s", "mbs-d"};
  std::size_t sweep_n = 8;
  GenFlags act_flags{"student-t", "128x1024"};
  GenFlags wgt_flags{"gaussian", "128x1024"};
  auto* sweep = app.add_subcommand("sweep", "macro-block size ablation");
  add_common(sweep);
  sweep->add_option("--schemes", sweep_schemes, "MBS schemes")->delimiter(',')->capture_default_str();
  sweep->add_option("--macro-sizes", macros, "macro-block sizes")->delimiter(',')->capture_default_str();
  sweep->add_option("--n", sweep_n, "samples per point")->capture_default_str();
  sweep->add_option("--mbs-mode", scheme_flags.mbs_mode, "MBS-D search mode")->check(CLI::IsMember({"exact", "lut"}));
  act_flags.add_to(sweep, "act-");
  wgt_flags.add_to(sweep, "weight-");

  GemmFlags gemm_flags;
  auto* gemm = app.add_subcommand("gemm", "quantized C = A * B^T");
  add_common(gemm);
  gemm->add_option("--a", gemm_flags.a, "A (MxK) tensor or quantized container");
  gemm->add_option("--b", gemm_flags.b, "B (NxK) tensor or quantized container");
  gemm->add_option("--scheme-a", gemm_flags.scheme_a, "scheme for A")->capture_default_str();
  gemm->add_option("--scheme-b", gemm_flags.scheme_b, "scheme for B")->capture_default_str();
  gemm->add_option("--m", gemm_flags.m, "synthetic M")->capture_default_str();
  gemm->add_option("--n", gemm_flags.n, "synthetic N")->capture_default_str();
  gemm->add_option("--k", gemm_flags.k, "synthetic K")->capture_default_str();
  gemm->add_flag("--verify", gemm_flags.verify, "compare against the dequantize-first oracle");
  scheme_flags.add_to(gemm);

  TileConfig tiles;
  double sigma_bytes = 2.0, out_bytes = 4.0;
  auto* roof = app.add_subcommand("roofline", "MBS epilogue overhead for a tile");
  add_common(roof, false);
  roof->add_option("--tm", tiles.t_m)->capture_default_str();
  roof->add_option("--tn", tiles.t_n)->capture_default_str();
  roof->add_option("--tk", tiles.t_k)->capture_default_str();
  roof->add_option("--sigma-bytes", sigma_bytes)->capture_default_str();
  roof->add_option("--out-bytes", out_bytes)->capture_default_str();

  auto* lut = app.add_subcommand("lut-dump", "write the MBS-D error table as JSON");
  add_common(lut);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (threads > 0) set_num_threads(threads);
    if (gen->parsed()) run_gen(common, gen_flags);
    if (quant->parsed()) run_quantize(common, scheme_flags, scheme, in_path);
    if (deq->parsed()) run_dequantize(common, in_path);
    if (qsnr->parsed()) run_qsnr(common, scheme_flags, gen_flags, schemes, ref_path, quant_path, n);
    if (sweep->parsed()) run_sweep(common, scheme_flags, act_flags, wgt_flags, sweep_schemes, macros, sweep_n);
    if (gemm->parsed()) run_gemm(common, scheme_flags, gemm_flags);
    if (roof->parsed()) run_roofline(common, tiles, sigma_bytes, out_bytes);
    if (lut->parsed()) run_lut_dump(common);
  } catch (const UsageError& e) {
    std::cerr << "mxq: " << e.what() << "\n";
    return kExitUsage;
  } catch (const VerificationError& e) {
    std::cerr << "mxq: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "mxq: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
