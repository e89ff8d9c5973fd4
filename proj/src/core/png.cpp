#include "core/png.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace tcaq {

namespace {

uint32_t crc32_table_entry(uint32_t n) {
  uint32_t c = n;
  for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
  return c;
}

uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0xffffffffu) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) table[i] = crc32_table_entry(i);
    init = true;
  }
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc;
}

void push_u32_be(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

void write_chunk(std::ofstream& os, const char type[4], const std::vector<uint8_t>& payload) {
  std::vector<uint8_t> buf;
  push_u32_be(buf, static_cast<uint32_t>(payload.size()));
  buf.insert(buf.end(), type, type + 4);
  buf.insert(buf.end(), payload.begin(), payload.end());
  const uint32_t crc = ~crc32(buf.data() + 4, buf.size() - 4);
  push_u32_be(buf, crc);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels, int width,
                    int height) {
  if (static_cast<size_t>(width) * height != pixels.size())
    throw Error("png: pixel count does not match dimensions");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("png: cannot open '" + path + "' for writing");

  const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr;
  push_u32_be(ihdr, static_cast<uint32_t>(width));
  push_u32_be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(os, "IHDR", ihdr);

  // raw scanlines with filter byte 0
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (width + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), pixels.begin() + static_cast<size_t>(y) * width,
               pixels.begin() + static_cast<size_t>(y + 1) * width);
  }

  // zlib stream with stored (uncompressed) deflate blocks
  std::vector<uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t off = 0;
  while (off < raw.size()) {
    const size_t chunk = std::min<size_t>(65535, raw.size() - off);
    const bool last = off + chunk == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<uint8_t>(chunk & 0xff));
    z.push_back(static_cast<uint8_t>(chunk >> 8));
    z.push_back(static_cast<uint8_t>(~chunk & 0xff));
    z.push_back(static_cast<uint8_t>((~chunk >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + static_cast<long>(off), raw.begin() + static_cast<long>(off + chunk));
    off += chunk;
  }
  uint32_t a = 1, b = 0;
  for (uint8_t byte : raw) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  push_u32_be(z, (b << 16) | a);
  write_chunk(os, "IDAT", z);
  write_chunk(os, "IEND", {});
  if (!os) throw IoError("png: write failed for '" + path + "'");
}

void write_sample_grid_png(const std::string& path, const Tensor& batch, int upscale) {
  if (batch.shape().size() != 4 || batch.dim(1) != 1)
    throw ShapeError("png grid: expected [n,1,h,w] batch, got " + shape_str(batch.shape()));
  const int n = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
  const int cols = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))));
  const int rows = (n + cols - 1) / cols;
  const int gap = 1;
  const int gw = cols * (w * upscale + gap) + gap;
  const int gh = rows * (h * upscale + gap) + gap;
  std::vector<uint8_t> img(static_cast<size_t>(gw) * gh, 32);
  for (int i = 0; i < n; ++i) {
    const int gy = (i / cols) * (h * upscale + gap) + gap;
    const int gx = (i % cols) * (w * upscale + gap) + gap;
    for (int y = 0; y < h * upscale; ++y) {
      for (int x = 0; x < w * upscale; ++x) {
        const float v = batch.at(static_cast<int64_t>(i) * h * w + (y / upscale) * w + x / upscale);
        const float u = std::min(1.0f, std::max(-1.0f, v));
        img[static_cast<size_t>(gy + y) * gw + gx + x] =
            static_cast<uint8_t>(std::lround((u + 1.0f) * 0.5f * 255.0f));
      }
    }
  }
  write_png_gray(path, img, gw, gh);
}

}  // namespace tcaq
