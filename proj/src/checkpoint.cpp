#include "avedit/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace avedit {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  std::size_t remaining() const { return end_ - pos_; }
  bool done() const { return pos_ >= end_; }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  void copy(void* dst, std::size_t n, const std::string& what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

 private:
  void need(std::size_t n, const std::string& what) {
    if (remaining() < n) {
      throw FormatError("checkpoint truncated: " + what + " needs " + std::to_string(n) + " bytes, " +
                        std::to_string(remaining()) + " left");
    }
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

void TensorArchive::add(Entry e) {
  if (e.name.empty()) throw FormatError("checkpoint: empty tensor name");
  if (contains(e.name)) throw FormatError("checkpoint: duplicate tensor '" + e.name + "'");
  entries_.push_back(std::move(e));
}

void TensorArchive::put(const std::string& name, const MatrixXf& m) {
  Entry e{name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}};
  e.values.resize(static_cast<std::size_t>(m.size()));
  // Row-major on disk.
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) e.values[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  add(std::move(e));
}

void TensorArchive::put_text(const std::string& name, const std::string& text) {
  Entry e{name, {static_cast<std::uint32_t>(text.size())}, {}};
  for (unsigned char c : text) e.values.push_back(static_cast<float>(c));
  add(std::move(e));
}

void TensorArchive::put_scalar(const std::string& name, double v) {
  add(Entry{name, {1}, {static_cast<float>(v)}});
}

bool TensorArchive::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

const TensorArchive::Entry& TensorArchive::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw FormatError("checkpoint: missing tensor '" + name + "'");
}

MatrixXf TensorArchive::matrix(const std::string& name) const {
  const Entry& e = get(name);
  if (e.dims.size() != 2) throw FormatError("checkpoint: tensor '" + name + "' is not rank 2");
  MatrixXf m(e.dims[0], e.dims[1]);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = e.values[static_cast<std::size_t>(i * m.cols() + j)];
  return m;
}

std::string TensorArchive::text(const std::string& name) const {
  const Entry& e = get(name);
  std::string s;
  s.reserve(e.values.size());
  for (float v : e.values) {
    if (!(v >= 0.0f && v <= 255.0f) || v != static_cast<float>(static_cast<int>(v))) {
      throw FormatError("checkpoint: tensor '" + name + "' does not hold text");
    }
    s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  return s;
}

double TensorArchive::scalar(const std::string& name) const {
  const Entry& e = get(name);
  if (e.values.size() != 1) throw FormatError("checkpoint: tensor '" + name + "' is not a scalar");
  return e.values[0];
}

std::string TensorArchive::serialize() const {
  std::string out = "AVED";
  put_u32(out, kVersion);
  for (const auto& e : entries_) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put_u32(out, d);
    const std::size_t n = e.values.size() * sizeof(float);
    const std::size_t at = out.size();
    out.resize(at + n);
    if (n > 0) std::memcpy(out.data() + at, e.values.data(), n);
  }
  put_u32(out, crc32_of(out.data(), out.size()));
  return out;
}

TensorArchive TensorArchive::parse(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "AVED") != 0) throw FormatError("checkpoint: bad magic (expected AVED)");
  if (bytes.size() < 12) throw FormatError("checkpoint truncated: header incomplete");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kVersion) + ")");
  }
  // The last four bytes are the CRC; tensors occupy everything in between.
  const std::size_t body_end = bytes.size() - 4;
  const std::string body = bytes.substr(8, body_end - 8);
  Reader r(body, body.size());
  TensorArchive archive;
  while (!r.done()) {
    Entry e;
    const std::uint32_t name_len = r.u32("tensor name length");
    if (name_len == 0 || name_len > r.remaining()) throw FormatError("checkpoint truncated or corrupt: bad tensor name length");
    e.name.resize(name_len);
    r.copy(e.name.data(), name_len, "tensor name");
    const std::uint32_t ndim = r.u32("rank of tensor '" + e.name + "'");
    if (ndim > 8) throw FormatError("checkpoint: tensor '" + e.name + "' has implausible rank " + std::to_string(ndim));
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      e.dims.push_back(r.u32("dims of tensor '" + e.name + "'"));
      count *= e.dims.back();
    }
    if (count * sizeof(float) > r.remaining()) {
      throw FormatError("checkpoint truncated in tensor '" + e.name + "': payload needs " +
                        std::to_string(count * sizeof(float)) + " bytes, " + std::to_string(r.remaining()) +
                        " left");
    }
    e.values.resize(count);
    r.copy(e.values.data(), count * sizeof(float), "payload of tensor '" + e.name + "'");
    archive.add(std::move(e));
  }
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body_end, 4);
  if (stored != crc32_of(bytes.data(), body_end)) throw FormatError("checkpoint: CRC mismatch");
  return archive;
}

void TensorArchive::save(const std::string& path) const {
  const std::string bytes = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

}  // namespace avedit
