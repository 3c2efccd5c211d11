// Copyright 2026 The FGAes Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fgaes/imaging.h"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "fgaes/errors.h"

namespace fgaes {
namespace {

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

std::uint8_t ToByte(float v) {
  const double scaled = std::round(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(scaled);
}

bool IsPpmSpace(std::uint8_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
         c == '\f';
}

// Reads one unsigned header integer, skipping whitespace and comments.
int ReadPpmInt(std::span<const std::uint8_t> bytes, std::size_t& pos,
               const char* field) {
  while (pos < bytes.size()) {
    if (IsPpmSpace(bytes[pos])) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
    throw ImageParseError(std::string("ppm: expected ") + field, pos);
  }
  long value = 0;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) {
    value = value * 10 + (bytes[pos] - '0');
    if (value > (1 << 24)) {
      throw ImageParseError(std::string("ppm: ") + field + " too large", pos);
    }
    ++pos;
  }
  return static_cast<int>(value);
}

ImageBuf DecodePpm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  const int width = ReadPpmInt(bytes, pos, "width");
  const int height = ReadPpmInt(bytes, pos, "height");
  const int maxval = ReadPpmInt(bytes, pos, "maxval");
  if (width <= 0 || height <= 0) {
    throw ImageParseError("ppm: non-positive dimensions", pos);
  }
  if (maxval != 255) {
    throw ImageParseError("ppm: only maxval 255 is supported", pos);
  }
  if (pos >= bytes.size() || !IsPpmSpace(bytes[pos])) {
    throw ImageParseError("ppm: missing whitespace before raster", pos);
  }
  ++pos;
  const std::size_t need =
      static_cast<std::size_t>(width) * height * ImageBuf::kChannels;
  if (bytes.size() - pos < need) {
    throw ImageParseError("ppm: truncated raster", bytes.size());
  }
  std::vector<float> px(need);
  for (std::size_t i = 0; i < need; ++i) px[i] = bytes[pos + i] / 255.0f;
  return ImageBuf(width, height, std::move(px));
}

Bytes EncodePpm(const ImageBuf& img) {
  const std::string header = "P6\n" + std::to_string(img.width()) + " " +
                             std::to_string(img.height()) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.reserve(out.size() + img.pixels().size());
  for (float v : img.pixels()) out.push_back(ToByte(v));
  return out;
}

struct PngReadState {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
  std::string error;
};

void PngReadFn(png_structp png, png_bytep out, png_size_t length) {
  auto* state = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (state->bytes.size() - state->pos < length) {
    state->error = "png: unexpected end of data";
    state->pos = state->bytes.size();
    png_longjmp(png, 1);
  }
  std::memcpy(out, state->bytes.data() + state->pos, length);
  state->pos += length;
}

void PngErrorFn(png_structp png, png_const_charp msg) {
  auto* state = static_cast<PngReadState*>(png_get_error_ptr(png));
  if (state->error.empty()) state->error = std::string("png: ") + msg;
  png_longjmp(png, 1);
}

void PngWarningFn(png_structp, png_const_charp) {}

ImageBuf DecodePng(std::span<const std::uint8_t> bytes) {
  PngReadState state{bytes, 0, {}};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &state,
                                           PngErrorFn, PngWarningFn);
  if (png == nullptr) throw ImageParseError("png: cannot allocate reader", 0);
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageParseError("png: cannot allocate info", 0);
  }
  // Storage touched after setjmp lives behind pointers owned outside it.
  auto* rows = new std::vector<std::uint8_t>();
  png_uint_32 width = 0, height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    delete rows;
    throw ImageParseError(state.error.empty() ? "png: decode failed"
                                              : state.error,
                          state.pos);
  }
  png_set_read_fn(png, &state, PngReadFn);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != static_cast<std::size_t>(width) * 3) {
    state.error = "png: unsupported pixel layout";
    png_longjmp(png, 1);
  }
  rows->resize(stride * height);
  std::vector<png_bytep> row_ptrs(height);
  for (png_uint_32 y = 0; y < height; ++y) {
    row_ptrs[y] = rows->data() + y * stride;
  }
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  std::vector<float> px(rows->size());
  for (std::size_t i = 0; i < rows->size(); ++i) px[i] = (*rows)[i] / 255.0f;
  delete rows;
  return ImageBuf(static_cast<int>(width), static_cast<int>(height),
                  std::move(px));
}

void PngWriteFn(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void PngFlushFn(png_structp) {}

Bytes EncodePng(const ImageBuf& img) {
  Bytes out;
  std::vector<std::uint8_t> raster(img.pixels().size());
  for (std::size_t i = 0; i < raster.size(); ++i) {
    raster[i] = ToByte(img.pixels()[i]);
  }
  PngReadState errors;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &errors,
                                            PngErrorFn, PngWarningFn);
  if (png == nullptr) throw std::runtime_error("png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error(errors.error);
  }
  png_set_write_fn(png, &out, PngWriteFn, PngFlushFn);
  png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width()) * 3;
  for (int y = 0; y < img.height(); ++y) {
    png_write_row(png, raster.data() + y * stride);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

ImageBuf::ImageBuf(int width, int height, float fill)
    : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  pixels_.assign(static_cast<std::size_t>(width) * height * kChannels, fill);
}

ImageBuf::ImageBuf(int width, int height, std::vector<float> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  if (pixels_.size() != static_cast<std::size_t>(width) * height * kChannels) {
    throw std::invalid_argument("pixel buffer does not match dimensions");
  }
}

float ImageBuf::clamped(int x, int y, int c) const {
  return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1), c);
}

Box Box::Make(double x0, double y0, double x1, double y1) {
  if (!(x0 < x1) || !(y0 < y1)) {
    throw std::invalid_argument("box must have positive area");
  }
  return Box{x0, y0, x1, y1};
}

ImageParseError::ImageParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " at byte " + std::to_string(offset)),
      offset_(offset) {}

ImageBuf DecodeImage(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P',  'N',  'G',
                                                '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
    return DecodePpm(bytes);
  }
  if (bytes.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, bytes.begin())) {
    return DecodePng(bytes);
  }
  throw ImageParseError("unrecognized image format", 0);
}

Bytes EncodeImage(const ImageBuf& img, ImageFormat format) {
  return format == ImageFormat::kPng ? EncodePng(img) : EncodePpm(img);
}

ImageBuf ReadImage(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path);
  Bytes bytes((std::istreambuf_iterator<char>(in)),
              std::istreambuf_iterator<char>());
  try {
    return DecodeImage(bytes);
  } catch (const ImageParseError& e) {
    throw ImageParseError(path.string() + ": " + e.what(), e.offset());
  }
}

void WriteImage(const ImageBuf& img, const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  const Bytes bytes =
      EncodeImage(img, ext == ".ppm" ? ImageFormat::kPpm : ImageFormat::kPng);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void Quantize8(ImageBuf& img) {
  for (float& v : img.mutable_pixels()) v = ToByte(v) / 255.0f;
}

ImageBuf ResizeBilinear(const ImageBuf& img, int new_width, int new_height) {
  if (new_width < 1 || new_height < 1) {
    throw std::invalid_argument("resize target extent must be at least 1");
  }
  const double sx = static_cast<double>(img.width()) / new_width;
  const double sy = static_cast<double>(img.height()) / new_height;
  struct Tap {
    int i0, i1;
    double f;
  };
  auto taps = [](int n_out, int n_in, double scale) {
    std::vector<Tap> t(n_out);
    for (int o = 0; o < n_out; ++o) {
      const double src =
          std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(n_in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      t[o] = {i0, std::min(i0 + 1, n_in - 1), src - i0};
    }
    return t;
  };
  const auto tx = taps(new_width, img.width(), sx);
  const auto ty = taps(new_height, img.height(), sy);
  ImageBuf out(new_width, new_height);
  for (int y = 0; y < new_height; ++y) {
    const Tap& vy = ty[y];
    for (int x = 0; x < new_width; ++x) {
      const Tap& vx = tx[x];
      for (int c = 0; c < ImageBuf::kChannels; ++c) {
        const double top = img.at(vx.i0, vy.i0, c) * (1.0 - vx.f) +
                           img.at(vx.i1, vy.i0, c) * vx.f;
        const double bottom = img.at(vx.i0, vy.i1, c) * (1.0 - vx.f) +
                              img.at(vx.i1, vy.i1, c) * vx.f;
        const double v = top * (1.0 - vy.f) + bottom * vy.f;
        out.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

ImageBuf ExtractPatch(const ImageBuf& img, int x0, int y0, int w, int h) {
  ImageBuf out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ImageBuf::kChannels; ++c) {
        out.at(x, y, c) = img.clamped(x0 + x, y0 + y, c);
      }
    }
  }
  return out;
}

void PastePatch(ImageBuf& dst, const ImageBuf& src, int x0, int y0) {
  for (int y = 0; y < src.height(); ++y) {
    const int dy = y0 + y;
    if (dy < 0 || dy >= dst.height()) continue;
    for (int x = 0; x < src.width(); ++x) {
      const int dx = x0 + x;
      if (dx < 0 || dx >= dst.width()) continue;
      for (int c = 0; c < ImageBuf::kChannels; ++c) {
        dst.at(dx, dy, c) = src.at(x, y, c);
      }
    }
  }
}

double SsimRgb(const ImageBuf& a, const ImageBuf& b) {
  if (a.width() != b.width() || a.height() != b.height() || a.empty()) {
    throw std::invalid_argument(
        "ssim: patch shapes differ (" + std::to_string(a.width()) + "x" +
        std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
        std::to_string(b.height()) + ")");
  }
  const std::size_t n = static_cast<std::size_t>(a.width()) * a.height();
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  double total = 0.0;
  for (int c = 0; c < ImageBuf::kChannels; ++c) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ma += pa[i * 3 + c];
      mb += pb[i * 3 + c];
    }
    ma /= n;
    mb /= n;
    double va = 0.0, vb = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double da = pa[i * 3 + c] - ma;
      const double db = pb[i * 3 + c] - mb;
      va += da * da;
      vb += db * db;
      cov += da * db;
    }
    va /= n;
    vb /= n;
    cov /= n;
    total += ((2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2)) /
             ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
  }
  return total / ImageBuf::kChannels;
}

double Iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<double> Luminance(const ImageBuf& img) {
  const std::size_t n = static_cast<std::size_t>(img.width()) * img.height();
  std::vector<double> out(n);
  const auto p = img.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = 0.299 * p[i * 3] + 0.587 * p[i * 3 + 1] + 0.114 * p[i * 3 + 2];
  }
  return out;
}

}  // namespace fgaes
