#include <png.h>

#include <cstring>

#include "dcda/data.hpp"

namespace dcda::data {

namespace {

struct ImageReader {
  png_image image;
  explicit ImageReader(const fs::path& path) {
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
      throw IOError("cannot read PNG " + path.string() + ": " + image.message);
    }
  }
  ImageReader(const ImageReader&) = delete;
  ImageReader& operator=(const ImageReader&) = delete;
  ~ImageReader() { png_image_free(&image); }
};

}  // namespace

GrayImage read_png(const fs::path& path) {
  ImageReader reader(path);
  reader.image.format = PNG_FORMAT_GRAY;
  GrayImage out(reader.image.height, reader.image.width);
  if (!png_image_finish_read(&reader.image, nullptr, out.data(), static_cast<png_int_32>(reader.image.width), nullptr)) {
    throw IOError("cannot decode PNG " + path.string() + ": " + reader.image.message);
  }
  return out;
}

std::pair<Index, Index> png_size(const fs::path& path) {
  ImageReader reader(path);
  return {static_cast<Index>(reader.image.width), static_cast<Index>(reader.image.height)};
}

void write_png(const fs::path& path, const GrayImage& image) {
  if (image.size() == 0) throw IOError("refusing to write an empty image to " + path.string());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image info;
  std::memset(&info, 0, sizeof info);
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(image.cols());
  info.height = static_cast<png_uint_32>(image.rows());
  info.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&info, path.c_str(), 0, image.data(), static_cast<png_int_32>(image.cols()), nullptr)) {
    const std::string message = info.message;
    png_image_free(&info);
    throw IOError("cannot write PNG " + path.string() + ": " + message);
  }
}

}  // namespace dcda::data
