#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cdal/tensor.hpp"

namespace cdal {

// CDT1 tensor format, little-endian: magic "CDT1", u32 rank, u32 dims[rank],
// f64 payload row-major.
void write_cdt1(std::ostream& os, const Tensor& t);
Tensor read_cdt1(std::istream& is);
std::vector<std::uint8_t> cdt1_bytes(const Tensor& t);
long long cdt1_byte_size(const std::vector<int>& shape);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Checkpoint container: u64 little-endian index length, index.json bytes,
// then CDT1 blobs back to back. The index maps each tensor name to its
// absolute byte offset and length and carries a "__meta__" object.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::string meta_json;  // serialized JSON object
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// 8-bit binary PGM (P5), min-max normalized; a constant map writes mid-gray.
void write_pgm(const std::string& path, const Tensor& map2d);

}  // namespace cdal
