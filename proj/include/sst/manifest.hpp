#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sst/png_io.hpp"
#include "sst/tile.hpp"

namespace sst {

// Manifest format: UTF-8 CSV, header "path,label,institute". Image paths are
// relative to the manifest's own directory, labels are 0 or 1.

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline Dataset load_manifest(const std::filesystem::path& path, Split split = Split::train) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_manifest: empty manifest: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label,institute")
    throw std::runtime_error("load_manifest: bad header (expected 'path,label,institute'): " + path.string());

  const std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";
  Dataset ds;
  ds.split = split;

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const auto fields = detail::split_csv_row(line);
    const std::string where = "load_manifest: row " + std::to_string(row);
    if (fields.size() != 3) throw std::runtime_error(where + ": expected 3 fields, got " + std::to_string(fields.size()));

    if (fields[1] != "0" && fields[1] != "1")
      throw std::runtime_error(where + ": label '" + fields[1] + "' outside {0,1}");

    LabeledTile t;
    t.label = fields[1] == "1" ? 1 : 0;
    t.institute = fields[2];
    const std::filesystem::path img = base / fields[0];
    try {
      t.tile = read_png_rgb8(img.string());
      validate_color_tile(t.tile, "tile");
    } catch (const std::exception& e) {
      throw std::runtime_error(where + " (" + fields[0] + "): " + e.what());
    }
    if (!ds.tiles.empty() && t.tile.d != ds.tiles.front().tile.d)
      throw std::runtime_error(where + ": tile size " + std::to_string(t.tile.d) +
                               " differs from first tile's " + std::to_string(ds.tiles.front().tile.d));
    ds.tiles.push_back(std::move(t));
  }
  if (ds.tiles.empty()) throw std::runtime_error("load_manifest: empty manifest: " + path.string());
  return ds;
}

// Writes tiles as PNGs plus a manifest CSV named <name>.csv into dir.
// Returns the manifest path.
inline std::filesystem::path save_dataset(const std::filesystem::path& dir, const std::string& name,
                                          const Dataset& ds) {
  ds.validate();
  std::filesystem::create_directories(dir / name);
  const std::filesystem::path manifest = dir / (name + ".csv");
  std::ofstream out(manifest);
  if (!out) throw std::runtime_error("save_dataset: cannot write " + manifest.string());
  out << "path,label,institute\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.tiles.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s/tile_%05zu.png", name.c_str(), i);
    write_png_rgb8((dir / buf).string(), ds.tiles[i].tile);
    out << buf << ',' << ds.tiles[i].label << ',' << ds.tiles[i].institute << '\n';
  }
  if (!out.flush()) throw std::runtime_error("save_dataset: write failed for " + manifest.string());
  return manifest;
}

}  // namespace sst
