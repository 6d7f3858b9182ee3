#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace treeperturb {

using Vec = std::vector<double>;

// Row-major dense matrix.
struct Mat {
  int rows = 0, cols = 0;
  Vec a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(size_t(r) * size_t(c), fill) {}

  double* row(int r) { return a.data() + size_t(r) * cols; }
  const double* row(int r) const { return a.data() + size_t(r) * cols; }
  double& at(int r, int c) { return a[size_t(r) * cols + c]; }
  double at(int r, int c) const { return a[size_t(r) * cols + c]; }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

// Errors carry the process exit code they map to (2 config, 3 data, 4 runtime).
struct Error : std::runtime_error {
  int exit_code;
  Error(std::string msg, int code) : std::runtime_error(std::move(msg)), exit_code(code) {}
};
struct ConfigError : Error {
  explicit ConfigError(std::string m) : Error(std::move(m), 2) {}
};
struct DataError : Error {
  explicit DataError(std::string m) : Error(std::move(m), 3) {}
};
struct RuntimeFailure : Error {
  explicit RuntimeFailure(std::string m) : Error(std::move(m), 4) {}
};

uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull);
uint64_t fnv1a(const std::string& s);
// Derives an independent stream seed from a base seed and a tag.
uint64_t mix_seed(uint64_t seed, const std::string& tag);
std::string hex64(uint64_t v);

std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);

std::vector<std::string> split_ws(const std::string& s);
std::vector<std::string> split_lines(const std::string& s);
std::string lower(std::string s);
std::string join(const std::vector<std::string>& parts, const std::string& sep);

}  // namespace treeperturb
