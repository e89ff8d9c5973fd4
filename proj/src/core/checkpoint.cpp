#include "core/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace tcaq {

namespace {
void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("archive: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
}  // namespace

void TensorArchive::put(const std::string& name, const Tensor& t) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    records_[it->second].second = t;
    return;
  }
  index_[name] = records_.size();
  records_.emplace_back(name, t);
}

void TensorArchive::put_string(const std::string& name, const std::string& s) {
  std::vector<float> enc(s.size());
  for (size_t i = 0; i < s.size(); ++i) enc[i] = static_cast<float>(static_cast<unsigned char>(s[i]));
  put(name, Tensor({static_cast<int>(std::max<size_t>(1, s.size()))},
                   s.empty() ? std::vector<float>{0.0f} : enc));
}

const Tensor& TensorArchive::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw MissingArtifactError("archive: no record named '" + name + "'");
  return records_[it->second].second;
}

std::string TensorArchive::get_string(const std::string& name) const {
  const Tensor& t = get(name);
  std::string s;
  for (float v : t.data()) {
    const auto c = static_cast<unsigned char>(v);
    if (c == 0) break;
    s.push_back(static_cast<char>(c));
  }
  return s;
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.first);
  return out;
}

std::vector<std::string> TensorArchive::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& r : records_)
    if (r.first.rfind(prefix, 0) == 0) out.push_back(r.first);
  return out;
}

void TensorArchive::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("archive: cannot open '" + path + "' for writing");
  os.write(kMagic, 8);
  const char ver = static_cast<char>(kVersion);
  os.write(&ver, 1);
  write_u32(os, static_cast<uint32_t>(records_.size()));
  for (const auto& [name, t] : records_) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) write_u32(os, static_cast<uint32_t>(d));
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.data().size() * 4));
  }
  if (!os) throw IoError("archive: write failed for '" + path + "'");
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("archive: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("archive: bad magic in '" + path + "'");
  char ver;
  is.read(&ver, 1);
  if (!is || static_cast<uint8_t>(ver) != kVersion)
    throw IoError("archive: unsupported version in '" + path + "'");
  const uint32_t count = read_u32(is);
  TensorArchive ar;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t ndim = read_u32(is);
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(read_u32(is));
    std::vector<float> data(static_cast<size_t>(numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * 4));
    if (!is) throw IoError("archive: truncated record '" + name + "' in '" + path + "'");
    ar.put(name, Tensor(std::move(shape), std::move(data)));
  }
  return ar;
}

}  // namespace tcaq
