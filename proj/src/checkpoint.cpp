#include "crfp/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace crfp {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'F', 'P', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  b[2] = static_cast<char>((v >> 16) & 0xff);
  b[3] = static_cast<char>((v >> 24) & 0xff);
  buf.append(b, 4);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string path;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw DataError("truncated checkpoint: " + path);
  }
  uint32_t u32() {
    need(4);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data()) + pos;
    pos += 4;
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }
  std::string str(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

const CkptRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const CkptRecord& Checkpoint::require(const std::string& name) const {
  const CkptRecord* r = find(name);
  if (!r) throw DataError("checkpoint record missing: " + name);
  return *r;
}

void save_checkpoint(const std::string& path, const std::string& config,
                     const std::vector<CkptRecord>& records) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<uint32_t>(config.size()));
  buf.append(config);
  put_u32(buf, static_cast<uint32_t>(records.size()));
  for (const auto& r : records) {
    put_u32(buf, static_cast<uint32_t>(r.name.size()));
    buf.append(r.name);
    put_u32(buf, static_cast<uint32_t>(r.shape.size()));
    size_t n = 1;
    for (int e : r.shape) {
      if (e < 0) throw DataError("checkpoint record with negative extent: " + r.name);
      put_u32(buf, static_cast<uint32_t>(e));
      n *= static_cast<size_t>(e);
    }
    if (n != r.data.size()) throw DataError("checkpoint record extent/payload mismatch: " + r.name);
    size_t at = buf.size();
    buf.resize(at + 4 * r.data.size());
    static_assert(sizeof(float) == 4);
    std::memcpy(buf.data() + at, r.data.data(), 4 * r.data.size());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader rd{buf, 0, path};

  std::string magic = rd.str(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file: " + path);
  uint32_t version = rd.u32();
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);

  Checkpoint ck;
  ck.config = rd.str(rd.u32());
  uint32_t count = rd.u32();
  ck.records.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CkptRecord rec;
    rec.name = rd.str(rd.u32());
    uint32_t rank = rd.u32();
    if (rank > 8) throw DataError("implausible record rank in " + path);
    size_t n = 1;
    rec.shape.resize(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      uint32_t e = rd.u32();
      rec.shape[d] = static_cast<int>(e);
      n *= e;
    }
    rd.need(4 * n);
    rec.data.resize(n);
    std::memcpy(rec.data.data(), buf.data() + rd.pos, 4 * n);
    rd.pos += 4 * n;
    ck.records.push_back(std::move(rec));
  }
  if (rd.pos != buf.size()) throw DataError("trailing bytes in checkpoint: " + path);
  return ck;
}

}  // namespace crfp
