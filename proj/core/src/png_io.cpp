#include "dfnet/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace dfnet {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

// Decodes into interleaved rows; channels is 3 (RGB8) or 1 (gray, keeping
// 16-bit depth when present). Returns bit depth actually delivered.
int decode_png(const std::string& path, int channels, std::vector<unsigned char>& out, int& width,
               int& height) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path + ": not a PNG file");

  PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) throw IoError("libpng allocation failed");
  r.info = png_create_info_struct(r.png);
  if (!r.info) throw IoError("libpng allocation failed");
  if (setjmp(png_jmpbuf(r.png))) throw IoError(path + ": PNG decode error");

  png_init_io(r.png, fp.get());
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);

  width = static_cast<int>(png_get_image_width(r.png, r.info));
  height = static_cast<int>(png_get_image_height(r.png, r.info));
  const int color = png_get_color_type(r.png, r.info);
  int depth = png_get_bit_depth(r.png, r.info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
  if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
  png_set_strip_alpha(r.png);

  if (channels == 3) {
    if (depth == 16) png_set_strip_16(r.png);
    png_set_gray_to_rgb(r.png);
  } else {
    if (color & PNG_COLOR_MASK_COLOR)
      throw IoError(path + ": expected a grayscale PNG");
    if (depth == 16) png_set_swap(r.png);  // deliver host-endian 16-bit
  }

  png_read_update_info(r.png, r.info);
  depth = png_get_bit_depth(r.png, r.info);
  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
  out.assign(rowbytes * static_cast<std::size_t>(height), 0);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = out.data() + rowbytes * static_cast<std::size_t>(y);
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return depth;
}

void encode_png(const std::string& path, const unsigned char* data, int width, int height,
                int color_type, int depth) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path + " for writing");

  PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!w.png) throw IoError("libpng allocation failed");
  w.info = png_create_info_struct(w.png);
  if (!w.info) throw IoError("libpng allocation failed");
  if (setjmp(png_jmpbuf(w.png))) throw IoError(path + ": PNG encode error");

  png_init_io(w.png, fp.get());
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  if (depth == 16) png_set_swap(w.png);  // rows are host-endian 16-bit

  const int nch = (color_type == PNG_COLOR_TYPE_RGB) ? 3 : 1;
  const std::size_t rowbytes =
      static_cast<std::size_t>(width) * static_cast<std::size_t>(nch) * (depth / 8);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(data) + rowbytes * static_cast<std::size_t>(y);
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

unsigned char to_u8(float v) {
  const float c = std::min(std::max(v, 0.0f), 1.0f);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

}  // namespace

Tensor<float> read_png_rgb(const std::string& path) {
  std::vector<unsigned char> raw;
  int w = 0, h = 0;
  decode_png(path, 3, raw, w, h);
  std::vector<float> data(static_cast<std::size_t>(h) * w * 3);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(raw[i]) / 255.0f;
  return Tensor<float>({h, w, 3}, std::move(data));
}

Tensor<float> read_png_gray(const std::string& path) {
  std::vector<unsigned char> raw;
  int w = 0, h = 0;
  const int depth = decode_png(path, 1, raw, w, h);
  std::vector<float> data(static_cast<std::size_t>(h) * w);
  if (depth == 16) {
    const auto* p = reinterpret_cast<const std::uint16_t*>(raw.data());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(p[i]) / 65535.0f;
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(raw[i]) / 255.0f;
  }
  return Tensor<float>({h, w}, std::move(data));
}

void write_png_rgb8(const std::string& path, const Tensor<float>& image) {
  check_shape(image.rank() == 3 && image.dim(2) == 3,
              "write_png_rgb8 expects H x W x 3, got " + shape_str(image.shape()));
  const int h = image.dim(0), w = image.dim(1);
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w * 3);
  auto d = image.data();
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_u8(d[i]);
  encode_png(path, raw.data(), w, h, PNG_COLOR_TYPE_RGB, 8);
}

void write_png_gray8(const std::string& path, const Tensor<float>& image) {
  check_shape(image.rank() == 2, "write_png_gray8 expects H x W, got " + shape_str(image.shape()));
  const int h = image.dim(0), w = image.dim(1);
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w);
  auto d = image.data();
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_u8(d[i]);
  encode_png(path, raw.data(), w, h, PNG_COLOR_TYPE_GRAY, 8);
}

void write_png_gray16(const std::string& path, const Tensor<float>& image) {
  check_shape(image.rank() == 2, "write_png_gray16 expects H x W, got " + shape_str(image.shape()));
  const int h = image.dim(0), w = image.dim(1);
  std::vector<std::uint16_t> raw(static_cast<std::size_t>(h) * w);
  auto d = image.data();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float c = std::min(std::max(d[i], 0.0f), 1.0f);
    raw[i] = static_cast<std::uint16_t>(std::lround(c * 65535.0f));
  }
  encode_png(path, reinterpret_cast<const unsigned char*>(raw.data()), w, h, PNG_COLOR_TYPE_GRAY,
             16);
}

}  // namespace dfnet
