#include "cdal/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cdal/errors.hpp"

namespace cdal {

namespace {

// The formats are defined little-endian; bail out loudly elsewhere.
static_assert(sizeof(double) == 8);

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw DataError("unexpected end of stream while reading tensor data");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

constexpr char kMagic[4] = {'C', 'D', 'T', '1'};

}  // namespace

void write_cdt1(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (const int d : t.shape()) write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (const double v : t.data()) write_le<double>(os, v);
}

Tensor read_cdt1(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("bad tensor magic, expected CDT1");
  const std::uint32_t rank = read_le<std::uint32_t>(is);
  if (rank > 8) throw DataError("tensor rank " + std::to_string(rank) + " is implausible");
  std::vector<int> shape(rank);
  long long n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = read_le<std::uint32_t>(is);
    if (d == 0 || d > (1u << 24)) throw DataError("bad tensor dimension");
    shape[i] = static_cast<int>(d);
    n *= d;
  }
  std::vector<double> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = read_le<double>(is);
  return Tensor::from(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> cdt1_bytes(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_cdt1(os, t);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

long long cdt1_byte_size(const std::vector<int>& shape) {
  long long n = 1;
  for (const int d : shape) n *= d;
  return 4 + 4 + 4 * static_cast<long long>(shape.size()) + 8 * n;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_cdt1(os, t);
  if (!os) throw DataError("failed writing " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_cdt1(is);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json index;
  if (!ckpt.meta_json.empty()) {
    index["__meta__"] = nlohmann::json::parse(ckpt.meta_json);
  }

  // lay out blobs in name order; offsets are absolute file positions
  std::vector<std::pair<std::string, const Tensor*>> order;
  for (const auto& [name, t] : ckpt.tensors) order.emplace_back(name, &t);

  // the index length depends on the offsets which depend on the index length,
  // so compute sizes with a fixed-point pass over the serialized index
  std::string index_str;
  for (int pass = 0; pass < 8; ++pass) {
    long long base = 8 + static_cast<long long>(index_str.size());
    nlohmann::json entries = nlohmann::json::object();
    long long off = base;
    for (const auto& [name, t] : order) {
      const long long len = cdt1_byte_size(t->shape());
      entries[name] = {{"offset", off}, {"length", len}};
      off += len;
    }
    index["tensors"] = entries;
    std::string next = index.dump();
    if (next.size() == index_str.size()) {
      index_str = std::move(next);
      break;
    }
    index_str = std::move(next);
  }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(index_str.size()));
  os.write(index_str.data(), static_cast<std::streamsize>(index_str.size()));
  for (const auto& [name, t] : order) write_cdt1(os, *t);
  if (!os) throw DataError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  const std::uint64_t index_len = read_le<std::uint64_t>(is);
  if (index_len > (1ull << 30)) throw DataError("checkpoint index length implausible");
  std::string index_str(index_len, '\0');
  is.read(index_str.data(), static_cast<std::streamsize>(index_len));
  if (!is) throw DataError("truncated checkpoint index in " + path);

  nlohmann::json index;
  try {
    index = nlohmann::json::parse(index_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint index JSON: ") + e.what());
  }

  Checkpoint ckpt;
  if (index.contains("__meta__")) ckpt.meta_json = index["__meta__"].dump();
  if (!index.contains("tensors")) throw DataError("checkpoint index missing tensor table");
  for (const auto& [name, entry] : index["tensors"].items()) {
    is.seekg(static_cast<std::streamoff>(entry.at("offset").get<long long>()));
    ckpt.tensors.emplace(name, read_cdt1(is));
  }
  return ckpt;
}

void write_pgm(const std::string& path, const Tensor& map2d) {
  if (map2d.rank() != 2) throw std::invalid_argument("write_pgm: map must be rank-2");
  const int H = map2d.dim(0), W = map2d.dim(1);
  double lo = map2d.data()[0], hi = map2d.data()[0];
  for (const double v : map2d.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os << "P5\n" << W << " " << H << "\n255\n";
  for (const double v : map2d.data()) {
    const double n = span > 0.0 ? (v - lo) / span : 0.5;
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(n * 255.0))));
  }
  if (!os) throw DataError("failed writing " + path);
}

}  // namespace cdal
