#include <png.h>

#include <cstring>

#include "chartlab/chartgen/raster.hpp"
#include "chartlab/util/digest.hpp"
#include "chartlab/util/error.hpp"

namespace chartlab::chartgen {

std::vector<std::uint8_t> encode_png(const RasterImage& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const RasterImage& img) {
  const auto bytes = encode_png(img);
  write_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

RasterImage read_png(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw IoError(path.string(), std::string("not a readable PNG: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RasterImage img(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(path.string(), std::string("PNG decode failed: ") + image.message);
  }
  return img;
}

}  // namespace chartlab::chartgen
