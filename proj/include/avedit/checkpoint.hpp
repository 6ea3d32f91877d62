#pragma once

#include "avedit/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace avedit {

/// Named float32 tensors in file order.
///
/// Layout (little-endian): "AVED", u32 version, then per tensor
/// u32 name length, name bytes, u32 ndim, u32 dims[ndim], float32 payload;
/// finally a CRC32 of everything before it. Text is stored as a rank-1
/// tensor holding one byte value per element.
class TensorArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
  };

  void put(const std::string& name, const MatrixXf& m);
  void put_text(const std::string& name, const std::string& text);
  void put_scalar(const std::string& name, double v);

  bool contains(const std::string& name) const;
  const Entry& get(const std::string& name) const;
  MatrixXf matrix(const std::string& name) const;
  std::string text(const std::string& name) const;
  double scalar(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }

  std::string serialize() const;
  static TensorArchive parse(const std::string& bytes);

  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

 private:
  void add(Entry e);
  std::vector<Entry> entries_;
};

}  // namespace avedit
