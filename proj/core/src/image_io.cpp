#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "substyle/cnn.hpp"
#include "substyle/error.hpp"

namespace substyle::cnn {

namespace {

[[noreturn]] void io_error(const std::string& msg) {
  fail(ErrorKind::kIo, ErrorCode::kGeneric, msg);
}

Image from_interleaved(const std::vector<std::uint8_t>& rgb, int height, int width) {
  Image img(height, width);
  const std::size_t plane = img.pixels.plane();
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      img.pixels.data[c * plane + i] = static_cast<float>(rgb[i * 3 + c]) / 255.0f;
  return img;
}

Image read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    io_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    io_error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return from_interleaved(buffer, static_cast<int>(image.height),
                          static_cast<int>(image.width));
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "rb"),
                                                        &std::fclose);
  if (!file) io_error("cannot open " + path.string());
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_jpeg_error;
  std::vector<std::uint8_t> rgb;
  int height = 0, width = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    io_error("cannot decode JPEG " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  height = static_cast<int>(cinfo.output_height);
  width = static_cast<int>(cinfo.output_width);
  rgb.resize(static_cast<std::size_t>(height) * width * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_interleaved(rgb, height, width);
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Box-filter weights mapping `src` samples onto `dst` samples.
std::vector<std::vector<std::pair<int, double>>> area_weights(int src, int dst) {
  std::vector<std::vector<std::pair<int, double>>> w(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    const double lo = i * scale;
    const double hi = (i + 1) * scale;
    for (int s = static_cast<int>(std::floor(lo)); s < static_cast<int>(std::ceil(hi)); ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (overlap > 0.0) w[i].emplace_back(std::min(s, src - 1), overlap / scale);
    }
  }
  return w;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error("cannot open " + path.string());
  unsigned char magic[4] = {};
  in.read(reinterpret_cast<char*>(magic), 4);
  if (in.gcount() == 4 && magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' &&
      magic[3] == 'G')
    return read_png(path);
  if (in.gcount() >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return read_jpeg(path);
  fail(ErrorKind::kFormat, ErrorCode::kGeneric,
       "unsupported image format (expected PNG or JPEG): " + path.string());
}

void write_png(const Image& img, const std::filesystem::path& path) {
  const std::size_t plane = img.pixels.plane();
  std::vector<std::uint8_t> rgb(plane * 3);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) rgb[i * 3 + c] = to_byte(img.pixels.data[c * plane + i]);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    io_error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

void write_gray_png(const std::vector<std::uint8_t>& pixels, int height, int width,
                    const std::filesystem::path& path) {
  if (pixels.size() != static_cast<std::size_t>(height) * width) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch, "gray image size mismatch");
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    io_error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

Image limit_size(const Image& img, int max_side) {
  const int longest = std::max(img.height(), img.width());
  if (max_side <= 0 || longest <= max_side) return img;
  const double scale = static_cast<double>(max_side) / longest;
  const int h = std::max(1, static_cast<int>(std::lround(img.height() * scale)));
  const int w = std::max(1, static_cast<int>(std::lround(img.width() * scale)));
  const auto wy = area_weights(img.height(), h);
  const auto wx = area_weights(img.width(), w);
  Image out(h, w);
  std::vector<double> rows(static_cast<std::size_t>(h) * img.width());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < img.width(); ++x) {
        double acc = 0.0;
        for (auto [sy, wt] : wy[y]) acc += wt * img.pixels.at(c, sy, x);
        rows[static_cast<std::size_t>(y) * img.width() + x] = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (auto [sx, wt] : wx[x]) acc += wt * rows[static_cast<std::size_t>(y) * img.width() + sx];
        out.pixels.at(c, y, x) = static_cast<float>(acc);
      }
  }
  return clamp01(std::move(out));
}

}  // namespace substyle::cnn
