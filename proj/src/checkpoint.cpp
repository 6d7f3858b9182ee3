#include "treeperturb/checkpoint.hpp"

#include <cstring>
#include <sstream>

namespace treeperturb::ckpt {

namespace {
constexpr char kMagic[8] = {'T', 'P', 'C', 'K', '0', '0', '0', '1'};

void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

uint32_t get_u32(const std::string& s, size_t& pos) {
  if (pos + 4 > s.size()) throw DataError("checkpoint truncated");
  uint32_t v;
  std::memcpy(&v, s.data() + pos, 4);
  pos += 4;
  return v;
}
}  // namespace

const Mat& Archive::get(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw DataError("checkpoint missing array: " + name);
  return it->second;
}

void Archive::save(const std::string& path) const {
  std::string out(kMagic, sizeof(kMagic));
  const std::string m = manifest.dump();
  put_u32(out, uint32_t(m.size()));
  out += m;
  put_u32(out, uint32_t(arrays.size()));
  for (const auto& [name, mat] : arrays) {
    put_u32(out, uint32_t(name.size()));
    out += name;
    put_u32(out, uint32_t(mat.rows));
    put_u32(out, uint32_t(mat.cols));
    const size_t bytes = mat.a.size() * sizeof(double);
    size_t off = out.size();
    out.resize(off + bytes);
    std::memcpy(out.data() + off, mat.a.data(), bytes);
  }
  write_file_atomic(path, out);
}

Archive Archive::load(const std::string& path) {
  const std::string s = read_file(path);
  if (s.size() < sizeof(kMagic) || std::memcmp(s.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file: " + path);
  size_t pos = sizeof(kMagic);
  Archive a;
  const uint32_t mlen = get_u32(s, pos);
  if (pos + mlen > s.size()) throw DataError("checkpoint truncated: " + path);
  try {
    a.manifest = Json::parse(s.substr(pos, mlen));
  } catch (const std::exception& e) {
    throw DataError("checkpoint manifest unreadable: " + std::string(e.what()));
  }
  pos += mlen;
  const uint32_t count = get_u32(s, pos);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t nlen = get_u32(s, pos);
    if (pos + nlen > s.size()) throw DataError("checkpoint truncated: " + path);
    std::string name = s.substr(pos, nlen);
    pos += nlen;
    const uint32_t rows = get_u32(s, pos);
    const uint32_t cols = get_u32(s, pos);
    Mat m{int(rows), int(cols)};
    const size_t bytes = m.a.size() * sizeof(double);
    if (pos + bytes > s.size()) throw DataError("checkpoint truncated: " + path);
    std::memcpy(m.a.data(), s.data() + pos, bytes);
    pos += bytes;
    a.arrays.emplace(std::move(name), std::move(m));
  }
  return a;
}

}  // namespace treeperturb::ckpt
