#pragma once

// Parameter checkpoint layout (see docs/formats.md):
//
//   tierseg-checkpoint 1\n
//   params <count>\n
//   <name> <rank> <dim0> ... <dimN>\n      (count lines, manifest order)
//   data\n
//   <raw IEEE-754 binary64 values, little-endian, manifest order>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tierseg/errors.hpp"
#include "tierseg/nn/params.hpp"

namespace tierseg::nn {

inline constexpr const char* kCheckpointMagic = "tierseg-checkpoint";

inline void append_le_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

inline double read_le_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

inline std::string serialize_checkpoint(const ParamSet& params) {
  std::ostringstream head;
  head << kCheckpointMagic << " 1\n" << "params " << params.size() << '\n';
  for (const auto& e : params) {
    if (e.name.empty() || e.name.find_first_of(" \t\n") != std::string::npos)
      throw config_error("parameter name '" + e.name + "' contains whitespace");
    head << e.name << ' ' << e.tensor.rank();
    for (std::size_t d : e.tensor.shape()) head << ' ' << d;
    head << '\n';
  }
  head << "data\n";
  std::string out = head.str();
  out.reserve(out.size() + params.scalar_count() * 8);
  for (const auto& e : params)
    for (double v : e.tensor.data()) append_le_f64(out, v);
  return out;
}

inline void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw storage_error("cannot open checkpoint for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw storage_error("failed writing checkpoint: " + path.string());
}

inline ParamSet parse_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw storage_error("checkpoint header truncated");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  {
    std::istringstream magic(next_line());
    std::string word;
    int version = 0;
    if (!(magic >> word >> version) || word != kCheckpointMagic || version != 1)
      throw storage_error("not a tierseg checkpoint (bad magic line)");
  }
  std::size_t count = 0;
  {
    std::istringstream line(next_line());
    std::string word;
    if (!(line >> word >> count) || word != "params") throw storage_error("checkpoint: missing params line");
  }
  std::vector<std::pair<std::string, Shape>> manifest;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream line(next_line());
    std::string name;
    std::size_t rank = 0;
    if (!(line >> name >> rank)) throw storage_error("checkpoint: malformed manifest entry " + std::to_string(i));
    Shape shape(rank);
    for (auto& d : shape)
      if (!(line >> d) || d == 0) throw storage_error("checkpoint: bad shape for '" + name + "'");
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  if (next_line() != "data") throw storage_error("checkpoint: missing data marker");
  ParamSet params;
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  for (auto& [name, shape] : manifest) {
    const std::size_t n = shape_size(shape);
    if (pos + 8 * n > bytes.size()) throw storage_error("checkpoint: payload truncated at '" + name + "'");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = read_le_f64(raw + pos + 8 * i);
    pos += 8 * n;
    params.add(name, Tensor(shape, std::move(values)));
  }
  if (pos != bytes.size()) throw storage_error("checkpoint: trailing bytes after payload");
  return params;
}

inline ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw storage_error("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

/// Copies values from `source` into `target`, requiring identical names and shapes.
inline void assign_params(ParamSet& target, const ParamSet& source) {
  if (target.size() != source.size())
    throw config_error("parameter count mismatch: expected " + std::to_string(target.size()) + ", got " +
                       std::to_string(source.size()));
  for (auto& e : target) {
    const Tensor& src = source.at(e.name);
    if (src.shape() != e.tensor.shape())
      throw dimension_error("parameter '" + e.name + "' shape " + shape_str(src.shape()) + " != expected " +
                            shape_str(e.tensor.shape()));
    std::copy(src.data().begin(), src.data().end(), e.tensor.data().begin());
  }
}

}  // namespace tierseg::nn
