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

#ifndef FGAES_IMAGING_H_
#define FGAES_IMAGING_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgaes {

// RGB raster, row-major and channel-interleaved, values in [0, 1].
class ImageBuf {
 public:
  static constexpr int kChannels = 3;

  ImageBuf() = default;
  ImageBuf(int width, int height, float fill = 0.0f);
  ImageBuf(int width, int height, std::vector<float> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }

  float at(int x, int y, int c) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }
  float& at(int x, int y, int c) {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }
  // Clamped (edge-replicating) read.
  float clamped(int x, int y, int c) const;

  std::span<const float> pixels() const { return pixels_; }
  std::span<float> mutable_pixels() { return pixels_; }

  friend bool operator==(const ImageBuf&, const ImageBuf&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> pixels_;
};

// Axis-aligned box in pixel coordinates; x0 < x1 and y0 < y1.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  static Box Make(double x0, double y0, double x1, double y1);
  double area() const { return (x1 - x0) * (y1 - y0); }
  friend bool operator==(const Box&, const Box&) = default;
};

class ImageParseError : public std::runtime_error {
 public:
  ImageParseError(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

enum class ImageFormat { kPng, kPpm };

using Bytes = std::vector<std::uint8_t>;

// Accepts binary PPM (P6, maxval 255) and 8-bit PNG. Pixel values map to
// [0, 1] by v / 255.
ImageBuf DecodeImage(std::span<const std::uint8_t> bytes);
Bytes EncodeImage(const ImageBuf& img, ImageFormat format);

ImageBuf ReadImage(const std::filesystem::path& path);
void WriteImage(const ImageBuf& img, const std::filesystem::path& path);

// Rounds every pixel to the nearest v / 255.
void Quantize8(ImageBuf& img);

// Bilinear resampling with half-pixel center alignment, edge clamped.
ImageBuf ResizeBilinear(const ImageBuf& img, int new_width, int new_height);

// Copies a w x h window at (x0, y0); samples outside the image replicate
// the nearest edge pixel.
ImageBuf ExtractPatch(const ImageBuf& img, int x0, int y0, int w, int h);

// Writes src into dst with its top-left corner at (x0, y0), clipped.
void PastePatch(ImageBuf& dst, const ImageBuf& src, int x0, int y0);

// Whole-patch SSIM per channel with C1 = 0.01^2 and C2 = 0.03^2 on a unit
// dynamic range, averaged over the three channels.
double SsimRgb(const ImageBuf& a, const ImageBuf& b);

double Iou(const Box& a, const Box& b);

// Rec. 601 luma.
std::vector<double> Luminance(const ImageBuf& img);

}  // namespace fgaes

#endif  // FGAES_IMAGING_H_
