#include "sq/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "sq/errors.hpp"

namespace sq {
namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4],
               const std::vector<uint8_t>& data) {
  put_u32_be(out, static_cast<uint32_t>(data.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + crc_start, static_cast<uInt>(4 + data.size()));
  put_u32_be(out, crc);
}

}  // namespace

std::vector<uint8_t> to_rgb8(const RenderBuffers& rb) {
  const size_t hw = rb.pixels();
  std::vector<uint8_t> rgb(hw * 3);
  for (int c = 0; c < 3; ++c) {
    const double* plane = rb.plane(c);
    for (size_t i = 0; i < hw; ++i) {
      double v = std::clamp(plane[i], 0.0, 1.0);
      rgb[i * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
  }
  return rgb;
}

std::vector<uint8_t> encode_png_rgb(int width, int height, const uint8_t* rgb) {
  const size_t row = static_cast<size_t>(width) * 3;
  std::vector<uint8_t> raw((row + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw[y * (row + 1)] = 0;  // filter none
    std::memcpy(raw.data() + y * (row + 1) + 1, rgb + y * row, row);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> z(bound);
  if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw Error("png: deflate failed");
  z.resize(bound);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(width));
  put_u32_be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

void write_png_rgb(const std::string& path, const RenderBuffers& rb) {
  std::vector<uint8_t> rgb = to_rgb8(rb);
  std::vector<uint8_t> png = encode_png_rgb(rb.width, rb.height, rgb.data());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open file for writing: " + path);
  out.write(reinterpret_cast<const char*>(png.data()),
            static_cast<std::streamsize>(png.size()));
  if (!out) throw Error("short write: " + path);
}

std::string digest_hex(const uint8_t* data, size_t size) {
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Image make_image(const RenderBuffers& rb) {
  Image img;
  img.width = rb.width;
  img.height = rb.height;
  std::vector<uint8_t> rgb = to_rgb8(rb);
  img.png = encode_png_rgb(rb.width, rb.height, rgb.data());
  img.digest = digest_hex(img.png.data(), img.png.size());
  return img;
}

}  // namespace sq
