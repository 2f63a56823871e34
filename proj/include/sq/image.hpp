#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sq/digest.hpp"
#include "sq/renderer.hpp"

namespace sq {

// Interleaved rgb8, gamma-less: round(255 * clamp(v, 0, 1)).
std::vector<uint8_t> to_rgb8(const RenderBuffers& rb);

// Minimal PNG encoder (truecolor 8-bit, filter 0, zlib level 6). Deterministic
// for a given zlib build, which is what the record/replay keys rely on.
std::vector<uint8_t> encode_png_rgb(int width, int height, const uint8_t* rgb);

void write_png_rgb(const std::string& path, const RenderBuffers& rb);

struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> png;  // encoded payload handed to the model gateway
  std::string digest;        // digest_hex over png
};

Image make_image(const RenderBuffers& rb);

}  // namespace sq
