#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dfyp/data.hpp"
#include "dfyp/dten.hpp"

namespace dfyp {
namespace data {

namespace fs = std::filesystem;
using nlohmann::json;

// Writes one DTEN per sample plus manifest.json and labels.csv. Layout:
//   <dir>/tensors/<sample_id>.dten
//   <dir>/manifest.json   entries {sample_id, tensor_path, checksum, split, label}
//   <dir>/labels.csv      sample_id,year,region_id,yield
inline fs::path save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "tensors");
  json manifest;
  manifest["preset"] = ds.preset;
  manifest["sigma"] = ds.sigma_used;
  manifest["ranges"] = json::array();
  for (const auto& [lo, hi] : ds.ranges) manifest["ranges"].push_back({lo, hi});
  manifest["samples"] = json::array();

  std::ofstream labels(dir / "labels.csv");
  if (!labels) throw IoError("cannot write " + (dir / "labels.csv").string());
  labels << "sample_id,year,region_id,yield\n";

  for (const auto& s : ds.samples) {
    const fs::path rel = fs::path("tensors") / (s.id + ".dten");
    dten::save(dir / rel, s.x);
    json e;
    e["sample_id"] = s.id;
    e["tensor_path"] = rel.generic_string();
    e["checksum"] = dten::file_checksum(dir / rel);
    e["split"] = s.split;
    e["label"] = s.label;
    e["features"] = s.features;
    e["year"] = s.year;
    e["region_id"] = s.region;
    manifest["samples"].push_back(std::move(e));
    char row[128];
    std::snprintf(row, sizeof(row), "%s,%d,%d,%.10g\n", s.id.c_str(), s.year, s.region,
                  s.label);
    labels << row;
  }
  const fs::path mpath = dir / "manifest.json";
  std::ofstream mf(mpath);
  if (!mf) throw IoError("cannot write " + mpath.string());
  mf << manifest.dump(2) << "\n";
  return mpath;
}

// Checksum-verified load; errors name the offending manifest entry.
inline Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("manifest not found: " + manifest_path.string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const std::exception& e) {
    throw IoError("cannot parse " + manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  ds.preset = manifest.value("preset", std::string("unknown"));
  ds.sigma_used = manifest.value("sigma", 0.0);
  for (const auto& r : manifest.value("ranges", json::array()))
    ds.ranges.emplace_back(r.at(0).get<double>(), r.at(1).get<double>());

  const fs::path root = manifest_path.parent_path();
  for (const auto& e : manifest.value("samples", json::array())) {
    Sample s;
    s.id = e.at("sample_id").get<std::string>();
    const fs::path tp = root / e.at("tensor_path").get<std::string>();
    if (!fs::exists(tp))
      throw IoError("dataset entry '" + s.id + "': missing tensor file " + tp.string());
    const std::string want = e.at("checksum").get<std::string>();
    const std::string got = dten::file_checksum(tp);
    if (got != want)
      throw IoError("dataset entry '" + s.id + "': checksum mismatch for " + tp.string() +
                    " (manifest " + want + ", file " + got + ")");
    s.x = dten::load<float>(tp);
    s.split = e.at("split").get<std::string>();
    s.label = e.at("label").get<double>();
    if (e.contains("features")) s.features = e["features"].get<std::vector<double>>();
    s.year = e.value("year", 0);
    s.region = e.value("region_id", 0);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace data
}  // namespace dfyp
