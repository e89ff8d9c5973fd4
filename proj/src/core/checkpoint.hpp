#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace tcaq {

// Flat tensor archive: magic "TCAQTNSR", one version byte, u32 record count,
// then (u32 name_len, name, u32 ndim, u32 dims[], f32 data[]) records.
// Everything little-endian. Records keep insertion order; lookup is by name.
class TensorArchive {
 public:
  static constexpr char kMagic[9] = "TCAQTNSR";
  static constexpr uint8_t kVersion = 1;

  void put(const std::string& name, const Tensor& t);
  void put_scalar(const std::string& name, float v) { put(name, Tensor::scalar(v)); }
  void put_string(const std::string& name, const std::string& s);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  float get_scalar(const std::string& name) const { return get(name).item(); }
  std::string get_string(const std::string& name) const;
  std::vector<std::string> names() const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

 private:
  std::vector<std::pair<std::string, Tensor>> records_;
  std::map<std::string, size_t> index_;
};

}  // namespace tcaq
