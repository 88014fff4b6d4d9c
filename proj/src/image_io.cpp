#include "patchssl/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "patchssl/error.hpp"

namespace patchssl {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

struct Decoded {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;  // after expansion, 1..4
  int bit_depth = 8;
  int color_type = 0;
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

Decoded decode(const std::filesystem::path& path) {
  File file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  Decoded d;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG data in " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  d.width = png_get_image_width(png, info);
  d.height = png_get_image_height(png, info);
  d.color_type = png_get_color_type(png, info);
  d.bit_depth = png_get_bit_depth(png, info);
  if (d.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (d.color_type == PNG_COLOR_TYPE_GRAY && d.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (d.bit_depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  d.channels = png_get_channels(png, info);
  const int depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * d.height);
  rows.resize(d.height);
  for (std::size_t y = 0; y < d.height; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = d.height * d.width * d.channels;
  d.samples.resize(n);
  if (depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint16_t v;
      std::memcpy(&v, buffer.data() + 2 * i, 2);
      d.samples[i] = v;
    }
    d.bit_depth = 16;
  } else {
    for (std::size_t i = 0; i < n; ++i) d.samples[i] = buffer[i];
    d.bit_depth = 8;
  }
  return d;
}

}  // namespace

Tensor<float> read_png_rgb(const std::filesystem::path& path) {
  const Decoded d = decode(path);
  if (d.color_type == PNG_COLOR_TYPE_GRAY || d.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    throw FormatError(path.string() + " is not an RGB image");
  }
  if (d.color_type == PNG_COLOR_TYPE_PALETTE) {
    throw FormatError(path.string() + " is a palette image; expected 8- or 16-bit RGB");
  }
  const float full = d.bit_depth == 16 ? 65535.0f : 255.0f;
  Tensor<float> out({d.height, d.width, 3});
  for (std::size_t p = 0; p < d.height * d.width; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      out[p * 3 + c] = static_cast<float>(d.samples[p * d.channels + c]) / full;
    }
  }
  return out;
}

Tensor<std::uint8_t> read_png_mask(const std::filesystem::path& path) {
  const Decoded d = decode(path);
  const bool has_alpha = d.channels == 2 || d.channels == 4;
  const std::size_t colour = has_alpha ? d.channels - 1 : d.channels;
  Tensor<std::uint8_t> out({d.height, d.width});
  for (std::size_t p = 0; p < d.height * d.width; ++p) {
    bool on = false;
    for (std::size_t c = 0; c < colour; ++c) on = on || d.samples[p * d.channels + c] != 0;
    out[p] = on ? 1 : 0;
  }
  return out;
}

namespace {

struct EncodeJob {
  std::FILE* file;
  png_uint_32 width;
  png_uint_32 height;
  int color_type;
  png_bytep* rows;
};

// Returns false when libpng reports an error.
bool encode(const EncodeJob* job) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, job->file);
  png_set_IHDR(png, info, job->width, job->height, 8, job->color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, job->rows);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor<std::uint8_t>& pixels) {
  if (pixels.rank() != 2 && !(pixels.rank() == 3 && pixels.dim(2) == 3)) {
    throw ShapeError("write_png expects [H, W] or [H, W, 3], got " +
                     shape_string(pixels.shape()));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  File file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write " + path.string());
  const std::size_t h = pixels.dim(0);
  const std::size_t w = pixels.dim(1);
  const std::size_t channels = pixels.rank() == 3 ? 3 : 1;
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) {
    rows[y] = const_cast<png_bytep>(pixels.data() + y * w * channels);
  }
  const EncodeJob job{file.get(), static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
                      channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, rows.data()};
  if (!encode(&job)) throw IoError("libpng failed writing " + path.string());
}

Tensor<std::uint8_t> to_u8(const Tensor<float>& pixels) {
  Tensor<std::uint8_t> out(pixels.shape());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const float v = std::clamp(pixels[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear expects [H, W, C]");
  const std::size_t in_h = image.dim(0);
  const std::size_t in_w = image.dim(1);
  const std::size_t ch = image.dim(2);
  if (in_h == out_h && in_w == out_w) return image;
  if (in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) {
    throw GeometryError("cannot resize an empty image");
  }
  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(s);
      t[o] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(in_h, out_h);
  const auto tx = taps(in_w, out_w);
  Tensor<float> out({out_h, out_w, ch});
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      for (std::size_t c = 0; c < ch; ++c) {
        auto at = [&](std::size_t yy, std::size_t xx) {
          return static_cast<double>(image[(yy * in_w + xx) * ch + c]);
        };
        const double top = at(ty[y].i0, tx[x].i0) * (1 - tx[x].f) + at(ty[y].i0, tx[x].i1) * tx[x].f;
        const double bot = at(ty[y].i1, tx[x].i0) * (1 - tx[x].f) + at(ty[y].i1, tx[x].i1) * tx[x].f;
        out[(y * out_w + x) * ch + c] = static_cast<float>(top * (1 - ty[y].f) + bot * ty[y].f);
      }
    }
  }
  return out;
}

Tensor<std::uint8_t> resize_nearest(const Tensor<std::uint8_t>& map, std::size_t out_h,
                                    std::size_t out_w) {
  if (map.rank() != 2) throw ShapeError("resize_nearest expects [H, W]");
  const std::size_t in_h = map.dim(0);
  const std::size_t in_w = map.dim(1);
  if (in_h == out_h && in_w == out_w) return map;
  Tensor<std::uint8_t> out({out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(in_h - 1, (2 * y + 1) * in_h / (2 * out_h));
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(in_w - 1, (2 * x + 1) * in_w / (2 * out_w));
      out[y * out_w + x] = map[sy * in_w + sx];
    }
  }
  return out;
}

}  // namespace patchssl
