#include "fer/image.hpp"

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <csetjmp>
#include <fstream>
#include <iterator>

#include "fer/errors.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {
namespace {

bool starts_with(std::span<const std::uint8_t> bytes, std::initializer_list<std::uint8_t> prefix) {
  if (bytes.size() < prefix.size()) return false;
  return std::equal(prefix.begin(), prefix.end(), bytes.begin());
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw DataError(std::string("PNG decode failed: ") + png.message);
  }
  Image out;
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  out.width = png.width;
  out.height = png.height;
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw DataError("PNG decode failed: " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  Image out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError(std::string("JPEG decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.channels = static_cast<std::size_t>(cinfo.output_components);
  out.pixels.resize(out.width * out.height * out.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + cinfo.output_scanline * out.width * out.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

// Netpbm graymap, P2 (ASCII) or P5 (binary), maxval up to 65535.
Image decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    unsigned value = 0;
    const char* begin = reinterpret_cast<const char*>(bytes.data()) + pos;
    const char* end = reinterpret_cast<const char*>(bytes.data()) + bytes.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr == begin) throw DataError("PGM: malformed header");
    pos += static_cast<std::size_t>(ptr - begin);
    return value;
  };
  const bool binary = bytes[1] == '5';
  Image out;
  out.width = read_int();
  out.height = read_int();
  const unsigned maxval = read_int();
  if (out.width == 0 || out.height == 0 || maxval == 0 || maxval > 65535) {
    throw DataError("PGM: invalid dimensions or maxval");
  }
  const std::size_t count = out.width * out.height;
  out.pixels.resize(count);
  auto scale = [&](unsigned v) {
    if (v > maxval) throw DataError("PGM: sample exceeds maxval");
    return static_cast<std::uint8_t>(std::lround(255.0 * v / maxval));
  };
  if (binary) {
    ++pos;  // single whitespace after maxval
    const std::size_t bps = maxval < 256 ? 1 : 2;
    if (bytes.size() < pos + count * bps) throw DataError("PGM: truncated raster");
    for (std::size_t i = 0; i < count; ++i) {
      unsigned v = bytes[pos + i * bps];
      if (bps == 2) v = (v << 8) | bytes[pos + i * bps + 1];
      out.pixels[i] = scale(v);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) out.pixels[i] = scale(read_int());
  }
  return out;
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (starts_with(bytes, {0x89, 'P', 'N', 'G'})) return decode_png(bytes);
  if (starts_with(bytes, {0xFF, 0xD8, 0xFF})) return decode_jpeg(bytes);
  if (starts_with(bytes, {'P', '5'}) || starts_with(bytes, {'P', '2'})) return decode_pgm(bytes);
  throw DataError("unrecognized image format");
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_image(bytes);
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw DataError("PNG encode: 1 or 3 channels");
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw DataError("PNG encode: pixel buffer size mismatch");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(png, size, 0, image.pixels.data(), 0, nullptr)) {
    throw DataError(std::string("PNG encode failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw DataError(std::string("PNG encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

GrayImage to_gray(const Image& image) {
  GrayImage gray(image.width, image.height);
  const std::size_t count = image.width * image.height;
  for (std::size_t i = 0; i < count; ++i) {
    double v;
    if (image.channels >= 3) {
      const std::uint8_t* p = &image.pixels[i * image.channels];
      v = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    } else {
      v = image.pixels[i * image.channels];
    }
    gray.values[i] = static_cast<Scalar>(std::clamp(v / 255.0, 0.0, 1.0));
  }
  return gray;
}

GrayImage resize_bilinear(const GrayImage& image, std::size_t width, std::size_t height) {
  if (image.width == width && image.height == height) return image;
  GrayImage out(width, height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double max_x = static_cast<double>(image.width - 1);
  const double max_y = static_cast<double>(image.height - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = std::lerp<double>(image.at(x0, y0), image.at(x1, y0), tx);
      const double bottom = std::lerp<double>(image.at(x0, y1), image.at(x1, y1), tx);
      out.at(x, y) = static_cast<Scalar>(std::lerp(top, bottom, ty));
    }
  }
  return out;
}

Image to_image(const GrayImage& gray) {
  Image out;
  out.width = gray.width;
  out.height = gray.height;
  out.channels = 1;
  out.pixels.resize(gray.values.size());
  for (std::size_t i = 0; i < gray.values.size(); ++i) {
    const double v = std::clamp(static_cast<double>(gray.values[i]), 0.0, 1.0);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

GrayImage flip_horizontal(const GrayImage& image) {
  GrayImage out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      out.at(x, y) = image.at(image.width - 1 - x, y);
    }
  }
  return out;
}

}  // namespace FER_PRECISION_NS
}  // namespace fer
