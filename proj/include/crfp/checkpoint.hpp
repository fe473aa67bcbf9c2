#pragma once

#include <string>
#include <vector>

#include "crfp/errors.hpp"

namespace crfp {

// On-disk model container. Layout (all integers little-endian u32):
//   "CRFPCKPT"  magic, 8 bytes
//   version     (currently 1)
//   config_len, config text (the resolved run configuration, verbatim)
//   record_count
//   per record: name_len, name, rank, extents[rank], payload (f32 LE)
struct CkptRecord {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string config;
  std::vector<CkptRecord> records;

  const CkptRecord* find(const std::string& name) const;
  const CkptRecord& require(const std::string& name) const;  // DataError if absent
};

void save_checkpoint(const std::string& path, const std::string& config,
                     const std::vector<CkptRecord>& records);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace crfp
