#pragma once

// On-disk dataset container.
//
//   <dir>/manifest     one line per sample: "<id> <H> <W> <N> <img> <gt>"
//   <dir>/<id>.img     H*W float32 little-endian, row-major
//   <dir>/<id>.gt      N+1 lines of W comma-separated reals
//   <dir>/sim.cfg      generator config (make_dataset only)

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "tierseg/boundaries.hpp"
#include "tierseg/echogram.hpp"
#include "tierseg/errors.hpp"
#include "tierseg/io.hpp"
#include "tierseg/simgen.hpp"

namespace tierseg {

struct Sample {
  std::string id;
  Echogram image;
  BoundaryMatrix gt;
};

struct Dataset {
  std::vector<Sample> samples;
  /// Ids skipped at load because their ground truth had missing values.
  std::vector<std::string> rejected;
};

inline std::string sample_id(std::size_t index) {
  std::ostringstream ss;
  ss << std::setw(6) << std::setfill('0') << index;
  return ss.str();
}

inline std::string encode_image(const Echogram& img) {
  std::string out(img.pixels.size() * 4, '\0');
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(img.pixels[i]));
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return out;
}

inline Echogram decode_image(const std::string& bytes, std::size_t height, std::size_t width) {
  if (bytes.size() != height * width * 4)
    throw storage_error("image has " + std::to_string(bytes.size()) + " bytes, expected " +
                        std::to_string(height * width * 4));
  Echogram img(height, width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t{static_cast<unsigned char>(bytes[i * 4 + b])} << (8 * b);
    img.pixels[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return img;
}

inline std::string encode_boundaries(const BoundaryMatrix& m) {
  std::string out;
  for (const auto& row : m.rows) {
    for (std::size_t w = 0; w < row.size(); ++w) out += (w ? "," : "") + format_real(row[w]);
    out += "\n";
  }
  return out;
}

/// Empty or "nan" fields parse as NaN so callers can reject the sample.
inline BoundaryMatrix decode_boundaries(const std::string& text, std::size_t width) {
  BoundaryMatrix m{width, {}};
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const std::string field = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      const auto first = field.find_first_not_of(" \t");
      row.push_back(first == std::string::npos ? std::nan("") : parse_real(field));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (row.size() != width)
      throw storage_error("ground-truth row has " + std::to_string(row.size()) + " values, expected " +
                          std::to_string(width));
    m.rows.push_back(std::move(row));
  }
  return m;
}

inline bool has_missing(const BoundaryMatrix& m) {
  if (m.rows.empty()) return true;
  for (const auto& row : m.rows)
    for (double v : row)
      if (!std::isfinite(v)) return true;
  return false;
}

/// Reads one raw float32 image plus a comma-separated ground-truth file.
/// Also the entry point for externally prepared data.
inline Sample load_sample(const std::filesystem::path& img_path, const std::filesystem::path& gt_path,
                          std::size_t height, std::size_t width, std::string id = {}) {
  Sample s;
  s.id = std::move(id);
  s.image = decode_image(read_text(img_path), height, width);
  s.gt = decode_boundaries(read_text(gt_path), width);
  return s;
}

inline void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw storage_error("cannot create " + dir.string() + ": " + ec.message());
  std::string manifest;
  for (const Sample& s : samples) {
    const std::string img = s.id + ".img", gt = s.id + ".gt";
    write_text(dir / img, encode_image(s.image));
    write_text(dir / gt, encode_boundaries(s.gt));
    manifest += s.id + " " + std::to_string(s.image.height) + " " + std::to_string(s.image.width) + " " +
                std::to_string(s.gt.layer_count()) + " " + img + " " + gt + "\n";
  }
  write_text(dir / "manifest", manifest);
}

/// Generates `count` samples; sample i uses derive_seed(config.seed, i).
inline void make_dataset(const SimConfig& config, std::size_t count, const std::filesystem::path& dir) {
  config.validate();
  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SimSample sim = simulate(config, i);
    samples.push_back({sample_id(i), std::move(sim.image), std::move(sim.boundaries)});
  }
  write_dataset(dir, samples);
  config.to_kv().save(dir / "sim.cfg");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  std::istringstream is(read_text(dir / "manifest"));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id, img, gt;
    std::size_t h = 0, w = 0, n = 0;
    if (!(ls >> id >> h >> w >> n >> img >> gt))
      throw storage_error("manifest line " + std::to_string(lineno) + " is malformed");
    Sample s = load_sample(dir / img, dir / gt, h, w, id);
    if (has_missing(s.gt)) {
      ds.rejected.push_back(id);
      continue;
    }
    if (s.gt.layer_count() != n)
      throw storage_error("sample " + id + ": manifest says N=" + std::to_string(n) + " but ground truth has " +
                          std::to_string(s.gt.layer_count()));
    validate(s.gt, h);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace tierseg
