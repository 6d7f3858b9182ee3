#pragma once

#include <map>
#include <string>

#include "json.hpp"
#include "treeperturb/common.hpp"

namespace treeperturb::ckpt {

using Json = nlohmann::ordered_json;

// Single-file checkpoint: a JSON manifest followed by named float64 arrays.
struct Archive {
  Json manifest;
  std::map<std::string, Mat> arrays;

  void put(const std::string& name, const Mat& m) { arrays[name] = m; }
  const Mat& get(const std::string& name) const;

  void save(const std::string& path) const;
  static Archive load(const std::string& path);
};

}  // namespace treeperturb::ckpt
