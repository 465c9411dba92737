// SPDX-License-Identifier: Apache-2.0
//
// Versioned little-endian containers.
//
//   MXT1 | u32 header_len | JSON {dtype, layout, shape} | f32 payload
//   MXQ1 | u32 header_len | JSON {variant, shape, block_size, macro_size,
//          has_mbs, has_tensor_scale} | codes | block scales |
//          [mbs mantissas] | [f64 tensor scale]
//
// Section lengths follow from the header. Writes go to a sibling temporary
// file which is then renamed into place.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "mxq/error.hpp"
#include "mxq/quantize.hpp"
#include "mxq/tensor.hpp"

static_assert(std::endian::native == std::endian::little, "containers assume a little-endian host");

namespace mxq {

inline constexpr char kTensorMagic[4] = {'M', 'X', 'T', '1'};
inline constexpr char kQuantMagic[4] = {'M', 'X', 'Q', '1'};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), "write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    fail("cannot move '" + tmp.string() + "' into place: " + ec.message());
  }
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    need(n);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    require(bytes_.size() - pos_ >= n, "container truncated: need " + std::to_string(n) + " bytes, have " +
                                           std::to_string(bytes_.size() - pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

inline void put_header(std::vector<std::uint8_t>& out, const char (&magic)[4], const nlohmann::json& header) {
  out.insert(out.end(), magic, magic + 4);
  const std::string text = header.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
}

inline nlohmann::json get_header(Reader& in, const char (&magic)[4]) {
  const std::uint8_t* m = in.take(4);
  require(std::memcmp(m, magic, 4) == 0, std::string("bad magic, expected ") + std::string(magic, 4));
  const auto len = in.get<std::uint32_t>();
  const auto* text = reinterpret_cast<const char*>(in.take(len));
  try {
    nlohmann::json h = nlohmann::json::parse(text, text + len);
    require(h.is_object(), "container header is not a JSON object");
    return h;
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed container header: ") + e.what());
  }
}

inline std::pair<std::size_t, std::size_t> get_shape(const nlohmann::json& h) {
  require(h.contains("shape") && h["shape"].is_array() && h["shape"].size() == 2, "header: shape must be [rows, cols]");
  return {h["shape"][0].get<std::size_t>(), h["shape"][1].get<std::size_t>()};
}

template <typename T>
T field(const nlohmann::json& h, const char* key) {
  require(h.contains(key), std::string("header: missing field '") + key + "'");
  try {
    return h[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(std::string("header: field '") + key + "' has the wrong type");
  }
}

inline Variant variant_from_name(const std::string& name, std::size_t block_size) {
  const SchemeConfig cfg = parse_scheme(name);
  require(cfg.variant != Variant::ocp || cfg.block_size == block_size, "header: variant name disagrees with block size");
  return cfg.variant;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensors

inline std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out;
  detail::put_header(out, kTensorMagic,
                     {{"dtype", "f32"}, {"layout", "row-major"}, {"shape", {t.rows(), t.cols()}}});
  for (const float x : t.data()) detail::put(out, x);
  return out;
}

inline Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, bool allow_nonfinite = false) {
  detail::Reader in(bytes);
  const auto h = detail::get_header(in, kTensorMagic);
  require(detail::field<std::string>(h, "dtype") == "f32", "tensor container: unsupported dtype");
  if (h.contains("layout")) require(h["layout"] == "row-major", "tensor container: unsupported layout");
  const auto [rows, cols] = detail::get_shape(h);
  const std::size_t n = rows * cols;
  require(in.remaining() == n * sizeof(float), "tensor container: payload length mismatch (expected " +
                                                   std::to_string(n * sizeof(float)) + " bytes, found " +
                                                   std::to_string(in.remaining()) + ")");
  std::vector<float> data(n);
  std::memcpy(data.data(), in.take(n * sizeof(float)), n * sizeof(float));
  if (!allow_nonfinite)
    for (const float x : data) require(std::isfinite(x), "tensor container: non-finite entry");
  return Tensor(rows, cols, std::move(data));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  detail::write_file_atomic(path, encode_tensor(t));
}

inline Tensor load_tensor(const std::filesystem::path& path, bool allow_nonfinite = false) {
  return decode_tensor(detail::read_file(path), allow_nonfinite);
}

// ---------------------------------------------------------------------------
// Quantized tensors

inline std::vector<std::uint8_t> encode_quant(const QuantizedTensor& q) {
  q.validate();
  std::vector<std::uint8_t> out;
  detail::put_header(out, kQuantMagic,
                     {{"variant", scheme_name(q.variant, q.block_size)},
                      {"shape", {q.rows, q.cols}},
                      {"block_size", q.block_size},
                      {"macro_size", q.macro_size},
                      {"has_mbs", is_mbs(q.variant)},
                      {"has_tensor_scale", q.tensor_scale.has_value()}});
  out.insert(out.end(), q.codes.begin(), q.codes.end());
  if (q.variant == Variant::nvfp4) {
    for (const auto s : q.nv_block_scales) out.push_back(s.byte);
  } else {
    for (const auto s : q.block_scales) out.push_back(s.biased_exponent);
  }
  for (const auto m : q.mbs_mantissas) out.push_back(m.m8);
  if (q.tensor_scale) detail::put<double>(out, *q.tensor_scale);
  return out;
}

inline QuantizedTensor decode_quant(const std::vector<std::uint8_t>& bytes) {
  detail::Reader in(bytes);
  const auto h = detail::get_header(in, kQuantMagic);
  QuantizedTensor q;
  std::tie(q.rows, q.cols) = detail::get_shape(h);
  q.block_size = detail::field<std::size_t>(h, "block_size");
  q.macro_size = detail::field<std::size_t>(h, "macro_size");
  q.variant = detail::variant_from_name(detail::field<std::string>(h, "variant"), q.block_size);
  const bool has_mbs = detail::field<bool>(h, "has_mbs");
  const bool has_ts = detail::field<bool>(h, "has_tensor_scale");
  require(has_mbs == is_mbs(q.variant), "quant container: has_mbs inconsistent with variant");
  require(has_ts == (q.variant == Variant::nvfp4), "quant container: has_tensor_scale inconsistent with variant");
  require(q.block_size > 0 && q.cols % q.block_size == 0, "quant container: cols not divisible by block size");
  require(has_mbs ? (q.macro_size > 0 && q.macro_size % q.block_size == 0) : q.macro_size == 0,
          "quant container: bad macro size for variant");

  const std::size_t ncode = (q.rows * q.cols + 1) / 2;
  const std::size_t nblock = q.rows * q.blocks_per_row();
  const std::size_t nmacro = q.rows * q.macros_per_row();
  const std::size_t expected = ncode + nblock + nmacro + (has_ts ? sizeof(double) : 0);
  require(in.remaining() == expected, "quant container: section length mismatch (expected " + std::to_string(expected) +
                                          " bytes, found " + std::to_string(in.remaining()) + ")");

  const std::uint8_t* p = in.take(ncode);
  q.codes.assign(p, p + ncode);
  p = in.take(nblock);
  if (q.variant == Variant::nvfp4) {
    for (std::size_t i = 0; i < nblock; ++i) q.nv_block_scales.push_back(E4M3Value{p[i]});
  } else {
    for (std::size_t i = 0; i < nblock; ++i) q.block_scales.push_back(E8M0Scale{p[i]});
  }
  p = in.take(nmacro);
  for (std::size_t i = 0; i < nmacro; ++i) q.mbs_mantissas.push_back(Mantissa8{p[i]});
  if (has_ts) q.tensor_scale = in.get<double>();
  q.validate();
  return q;
}

inline void save_quant(const std::filesystem::path& path, const QuantizedTensor& q) {
  detail::write_file_atomic(path, encode_quant(q));
}

inline QuantizedTensor load_quant(const std::filesystem::path& path) { return decode_quant(detail::read_file(path)); }

}  // namespace mxq
