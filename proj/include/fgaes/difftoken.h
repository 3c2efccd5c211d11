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

// Difference-preserving tokenization.
//
// A target image is compared against a reference from the same series on a
// grid of localization cells. Cells whose SSIM falls strictly below the
// p-th percentile of all cell similarities are "decisive": they are emitted
// as native-resolution base patches. Every other cell is downscaled to a
// single base patch. When the sequence exceeds the token budget, coarse
// tokens are dropped at random first and fine tokens only as a last resort.

#ifndef FGAES_DIFFTOKEN_H_
#define FGAES_DIFFTOKEN_H_

#include <cstdint>
#include <optional>
#include <utility>
#include <string>
#include <vector>

#include "fgaes/imaging.h"
#include "fgaes/ndiff.h"

namespace fgaes {

enum class PercentileMethod { kLinear, kNearestRank };

struct DiffTokenConfig {
  int base_patch = 16;
  int loc_patch = 32;
  double percentile_p = 0.5;
  int token_budget = 196;
  // Longer-edge cap applied to the target before tokenization.
  std::optional<int> max_side = 512;
  std::uint64_t seed = 0;
  PercentileMethod percentile_method = PercentileMethod::kLinear;

  // Throws std::invalid_argument on a violated invariant.
  void Validate() const;
};

double Percentile(std::vector<double> values, double p,
                  PercentileMethod method = PercentileMethod::kLinear);

struct Cell {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct SimilarityMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> s;  // row-major, rows * cols
  double tau = 0.0;

  double at(int r, int c) const { return s[static_cast<std::size_t>(r) * cols + c]; }
};

enum class TokenScale { kFine, kCoarse };

struct Token {
  std::vector<double> pixels;  // base_patch * base_patch * 3, interleaved
  double u = 0.0;              // normalized center x in [0, 1]
  double v = 0.0;              // normalized center y in [0, 1]
  TokenScale scale = TokenScale::kCoarse;

  friend bool operator==(const Token&, const Token&) = default;
};

struct TokenSeq {
  std::vector<Token> tokens;
  int source_width = 0;
  int source_height = 0;
  int base_patch = 16;

  std::size_t size() const { return tokens.size(); }
  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

// Result of tokenization with the bookkeeping needed for inspection.
struct Tokenization {
  TokenSeq seq;
  SimilarityMap map;             // empty (rows == 0) for plain tokenization
  std::vector<Cell> decisive;
  int dropped_coarse = 0;
  int dropped_fine = 0;
  bool fine_dropped() const { return dropped_fine > 0; }
};

// Scales y so its longer edge matches x's longer edge, then center-crops or
// edge-replicates to exactly x's dimensions.
ImageBuf AlignReference(const ImageBuf& x, const ImageBuf& y);

// Applies cfg.max_side to an image (aspect preserved).
ImageBuf CapImageSide(const ImageBuf& img, const DiffTokenConfig& cfg);

SimilarityMap ComputeSimilarityMap(const ImageBuf& x, const ImageBuf& y_aligned,
                                   const DiffTokenConfig& cfg);

// Cells with s < tau, row-major.
std::vector<Cell> SelectDecisive(const SimilarityMap& map);

Tokenization TokenizeDiff(const ImageBuf& x, const ImageBuf& y_ref,
                          const DiffTokenConfig& cfg);
Tokenization TokenizePlain(const ImageBuf& x, const DiffTokenConfig& cfg);

// Layout {tokens:[{u,v,scale}], grid:{rows,cols}, tau} over the capped image;
// tau is null for plain tokenization.
std::string TokenLayoutJson(const Tokenization& t, const DiffTokenConfig& cfg);
// The capped image with every decisive localization cell outlined.
ImageBuf RenderDecisiveOverlay(const ImageBuf& x, const Tokenization& t,
                               const DiffTokenConfig& cfg);

// Bilinear weights of the four nearest lattice entries of a G x G grid with
// half-pixel-centered lattice points. Returns (flat index, weight) pairs.
std::vector<std::pair<int, double>> PosInterpTaps(double u, double v, int grid);

// Row t holds the interpolation weights of position t over the G*G lattice.
nd::Tensor PosInterpMatrix(const std::vector<std::pair<double, double>>& pos,
                           int grid);

// Interpolated position embeddings, one row per position. grid_table has
// shape {G, G, d}; the result has shape {T, d} and is differentiable with
// respect to the table.
nd::Var InterpPosEmbed(nd::Var grid_table,
                       const std::vector<std::pair<double, double>>& pos);

// Single-position evaluation without a tape.
std::vector<double> InterpPosEmbed(const nd::Tensor& grid_table, double u,
                                   double v);

}  // namespace fgaes

#endif  // FGAES_DIFFTOKEN_H_
