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

#include "fgaes/difftoken.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>

#include "fgaes/random.h"
#include "json.hpp"

namespace fgaes {
namespace {

void Require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("difftoken: " + msg);
}

std::vector<double> ToDouble(const ImageBuf& patch) {
  return std::vector<double>(patch.pixels().begin(), patch.pixels().end());
}

// Applies the budget rule in place, keeping surviving tokens in order.
void ApplyBudget(Tokenization& out, const DiffTokenConfig& cfg) {
  auto& tokens = out.seq.tokens;
  const int total = static_cast<int>(tokens.size());
  if (total <= cfg.token_budget) return;
  int excess = total - cfg.token_budget;

  std::vector<std::size_t> coarse, fine;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    (tokens[i].scale == TokenScale::kCoarse ? coarse : fine).push_back(i);
  }
  Rng rng(MixSeed(cfg.seed, 0x746f6b656e));
  std::vector<bool> drop(tokens.size(), false);
  rng.Shuffle(std::span<std::size_t>(coarse));
  const int from_coarse = std::min<int>(excess, static_cast<int>(coarse.size()));
  for (int i = 0; i < from_coarse; ++i) drop[coarse[i]] = true;
  excess -= from_coarse;
  rng.Shuffle(std::span<std::size_t>(fine));
  for (int i = 0; i < excess; ++i) drop[fine[i]] = true;
  out.dropped_coarse = from_coarse;
  out.dropped_fine = excess;

  std::vector<Token> kept;
  kept.reserve(cfg.token_budget);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!drop[i]) kept.push_back(std::move(tokens[i]));
  }
  tokens = std::move(kept);
}

// Emits tokens for every cell of x given the decisive set.
Tokenization Build(const ImageBuf& x, const DiffTokenConfig& cfg,
                   SimilarityMap map, std::vector<Cell> decisive) {
  const int w = x.width(), h = x.height();
  const int loc = cfg.loc_patch, base = cfg.base_patch;
  const int rows = (h + loc - 1) / loc, cols = (w + loc - 1) / loc;
  const int k = loc / base;
  const std::set<Cell> d(decisive.begin(), decisive.end());

  Tokenization out;
  out.seq.source_width = w;
  out.seq.source_height = h;
  out.seq.base_patch = base;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int x0 = c * loc, y0 = r * loc;
      if (d.contains(Cell{r, c})) {
        for (int sr = 0; sr < k; ++sr) {
          for (int sc = 0; sc < k; ++sc) {
            const int fx = x0 + sc * base, fy = y0 + sr * base;
            if (fx >= w || fy >= h) continue;
            Token t;
            t.pixels = ToDouble(ExtractPatch(x, fx, fy, base, base));
            t.u = 0.5 * (fx + std::min(fx + base, w)) / w;
            t.v = 0.5 * (fy + std::min(fy + base, h)) / h;
            t.scale = TokenScale::kFine;
            out.seq.tokens.push_back(std::move(t));
          }
        }
      } else {
        Token t;
        t.pixels = ToDouble(
            ResizeBilinear(ExtractPatch(x, x0, y0, loc, loc), base, base));
        t.u = 0.5 * (x0 + std::min(x0 + loc, w)) / w;
        t.v = 0.5 * (y0 + std::min(y0 + loc, h)) / h;
        t.scale = TokenScale::kCoarse;
        out.seq.tokens.push_back(std::move(t));
      }
    }
  }
  std::stable_sort(out.seq.tokens.begin(), out.seq.tokens.end(),
                   [](const Token& a, const Token& b) {
                     return a.v != b.v ? a.v < b.v : a.u < b.u;
                   });
  out.map = std::move(map);
  out.decisive = std::move(decisive);
  ApplyBudget(out, cfg);
  return out;
}

void CheckImage(const ImageBuf& x, const DiffTokenConfig& cfg) {
  Require(!x.empty(), "empty image");
  Require(x.width() >= cfg.loc_patch && x.height() >= cfg.loc_patch,
          "image " + std::to_string(x.width()) + "x" + std::to_string(x.height()) +
              " is smaller than one " + std::to_string(cfg.loc_patch) +
              "-pixel cell");
}

}  // namespace

void DiffTokenConfig::Validate() const {
  Require(base_patch >= 1, "base_patch must be positive");
  Require(loc_patch % base_patch == 0, "loc_patch must be a multiple of base_patch");
  const int k = loc_patch / base_patch;
  Require(k == 2 || k == 4, "loc_patch / base_patch must be 2 or 4");
  Require(percentile_p > 0.0 && percentile_p < 1.0,
          "percentile_p must lie in (0, 1)");
  Require(token_budget >= 1, "token_budget must be at least 1");
  Require(!max_side || *max_side >= loc_patch,
          "max_side must be at least loc_patch");
}

double Percentile(std::vector<double> values, double p, PercentileMethod method) {
  Require(!values.empty(), "percentile of an empty list");
  Require(p >= 0.0 && p <= 1.0, "percentile fraction outside [0, 1]");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (method == PercentileMethod::kNearestRank) {
    const auto rank = static_cast<std::size_t>(std::ceil(p * n));
    return values[std::clamp<std::size_t>(rank, 1, n) - 1];
  }
  const double pos = p * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

ImageBuf AlignReference(const ImageBuf& x, const ImageBuf& y) {
  Require(!x.empty() && !y.empty(), "empty image");
  if (x.width() == y.width() && x.height() == y.height()) return y;
  const double scale = static_cast<double>(std::max(x.width(), x.height())) /
                       std::max(y.width(), y.height());
  const int nw = std::max(1, static_cast<int>(std::lround(y.width() * scale)));
  const int nh = std::max(1, static_cast<int>(std::lround(y.height() * scale)));
  const ImageBuf scaled = (nw == y.width() && nh == y.height())
                              ? y
                              : ResizeBilinear(y, nw, nh);
  const int off_x = static_cast<int>(std::floor((x.width() - nw) / 2.0));
  const int off_y = static_cast<int>(std::floor((x.height() - nh) / 2.0));
  ImageBuf out(x.width(), x.height());
  for (int py = 0; py < x.height(); ++py) {
    for (int px = 0; px < x.width(); ++px) {
      for (int c = 0; c < ImageBuf::kChannels; ++c) {
        out.at(px, py, c) = scaled.clamped(px - off_x, py - off_y, c);
      }
    }
  }
  return out;
}

ImageBuf CapImageSide(const ImageBuf& img, const DiffTokenConfig& cfg) {
  const int longer = std::max(img.width(), img.height());
  if (!cfg.max_side || longer <= *cfg.max_side) return img;
  const double scale = static_cast<double>(*cfg.max_side) / longer;
  const int nw = std::max(1, static_cast<int>(std::lround(img.width() * scale)));
  const int nh = std::max(1, static_cast<int>(std::lround(img.height() * scale)));
  return ResizeBilinear(img, nw, nh);
}

SimilarityMap ComputeSimilarityMap(const ImageBuf& x, const ImageBuf& y_aligned,
                                   const DiffTokenConfig& cfg) {
  cfg.Validate();
  CheckImage(x, cfg);
  Require(x.width() == y_aligned.width() && x.height() == y_aligned.height(),
          "reference is not aligned to the target");
  const int loc = cfg.loc_patch;
  SimilarityMap map;
  map.rows = (x.height() + loc - 1) / loc;
  map.cols = (x.width() + loc - 1) / loc;
  map.s.reserve(static_cast<std::size_t>(map.rows) * map.cols);
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      map.s.push_back(SsimRgb(ExtractPatch(x, c * loc, r * loc, loc, loc),
                              ExtractPatch(y_aligned, c * loc, r * loc, loc, loc)));
    }
  }
  map.tau = Percentile(map.s, cfg.percentile_p, cfg.percentile_method);
  return map;
}

std::vector<Cell> SelectDecisive(const SimilarityMap& map) {
  std::vector<Cell> d;
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      if (map.at(r, c) < map.tau) d.push_back(Cell{r, c});
    }
  }
  return d;
}

Tokenization TokenizeDiff(const ImageBuf& x, const ImageBuf& y_ref,
                          const DiffTokenConfig& cfg) {
  cfg.Validate();
  const ImageBuf target = CapImageSide(x, cfg);
  CheckImage(target, cfg);
  const ImageBuf ref = AlignReference(target, y_ref);
  SimilarityMap map = ComputeSimilarityMap(target, ref, cfg);
  std::vector<Cell> d = SelectDecisive(map);
  return Build(target, cfg, std::move(map), std::move(d));
}

Tokenization TokenizePlain(const ImageBuf& x, const DiffTokenConfig& cfg) {
  cfg.Validate();
  const ImageBuf target = CapImageSide(x, cfg);
  CheckImage(target, cfg);
  return Build(target, cfg, SimilarityMap{}, {});
}

std::string TokenLayoutJson(const Tokenization& t, const DiffTokenConfig& cfg) {
  const int loc = cfg.loc_patch;
  nlohmann::json j;
  nlohmann::json tokens = nlohmann::json::array();
  for (const Token& tok : t.seq.tokens) {
    tokens.push_back({{"u", tok.u},
                      {"v", tok.v},
                      {"scale", tok.scale == TokenScale::kFine ? "fine" : "coarse"}});
  }
  j["tokens"] = std::move(tokens);
  j["grid"] = {{"rows", (t.seq.source_height + loc - 1) / loc},
               {"cols", (t.seq.source_width + loc - 1) / loc}};
  j["tau"] = t.map.rows > 0 ? nlohmann::json(t.map.tau) : nlohmann::json(nullptr);
  nlohmann::json cells = nlohmann::json::array();
  for (const Cell& c : t.decisive) cells.push_back({c.row, c.col});
  j["decisive"] = std::move(cells);
  return j.dump(2);
}

ImageBuf RenderDecisiveOverlay(const ImageBuf& x, const Tokenization& t,
                               const DiffTokenConfig& cfg) {
  ImageBuf out = CapImageSide(x, cfg);
  const int loc = cfg.loc_patch;
  const float red[3] = {1.0f, 0.0f, 0.0f};
  auto paint = [&](int px, int py) {
    if (px < 0 || py < 0 || px >= out.width() || py >= out.height()) return;
    for (int c = 0; c < 3; ++c) out.at(px, py, c) = red[c];
  };
  for (const Cell& cell : t.decisive) {
    const int x0 = cell.col * loc, y0 = cell.row * loc;
    const int x1 = std::min(x0 + loc, out.width()) - 1, y1 = std::min(y0 + loc, out.height()) - 1;
    for (int px = x0; px <= x1; ++px) {
      paint(px, y0);
      paint(px, y1);
    }
    for (int py = y0; py <= y1; ++py) {
      paint(x0, py);
      paint(x1, py);
    }
  }
  return out;
}

std::vector<std::pair<int, double>> PosInterpTaps(double u, double v, int grid) {
  Require(grid >= 1, "position grid must be non-empty");
  Require(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0,
          "position (" + std::to_string(u) + ", " + std::to_string(v) +
              ") outside [0, 1]^2");
  auto axis = [grid](double t) {
    const double f = std::clamp(t * grid - 0.5, 0.0, grid - 1.0);
    const int i0 = static_cast<int>(std::floor(f));
    const int i1 = std::min(i0 + 1, grid - 1);
    return std::tuple{i0, i1, f - i0};
  };
  const auto [x0, x1, wx] = axis(u);
  const auto [y0, y1, wy] = axis(v);
  return {{y0 * grid + x0, (1 - wx) * (1 - wy)},
          {y0 * grid + x1, wx * (1 - wy)},
          {y1 * grid + x0, (1 - wx) * wy},
          {y1 * grid + x1, wx * wy}};
}

nd::Tensor PosInterpMatrix(const std::vector<std::pair<double, double>>& pos,
                           int grid) {
  const int g2 = grid * grid;
  nd::Tensor m({static_cast<int>(pos.size()), g2});
  for (std::size_t t = 0; t < pos.size(); ++t) {
    for (const auto& [idx, wgt] : PosInterpTaps(pos[t].first, pos[t].second, grid)) {
      m.mutable_values()[t * g2 + idx] += wgt;
    }
  }
  return m;
}

nd::Var InterpPosEmbed(nd::Var grid_table,
                       const std::vector<std::pair<double, double>>& pos) {
  const nd::Shape& s = grid_table.shape();
  if (s.size() != 3 || s[0] != s[1]) {
    throw nd::ShapeError("interp_pos_embed", {s}, "expected a {G, G, d} table");
  }
  const int grid = s[0];
  nd::Var flat = nd::Reshape(grid_table, {grid * grid, s[2]});
  nd::Var weights = grid_table.tape->Constant(PosInterpMatrix(pos, grid));
  return nd::MatMul(weights, flat);
}

std::vector<double> InterpPosEmbed(const nd::Tensor& grid_table, double u,
                                   double v) {
  const nd::Shape& s = grid_table.shape();
  if (s.size() != 3 || s[0] != s[1]) {
    throw nd::ShapeError("interp_pos_embed", {s}, "expected a {G, G, d} table");
  }
  const int d = s[2];
  std::vector<double> out(d, 0.0);
  for (const auto& [idx, wgt] : PosInterpTaps(u, v, s[0])) {
    for (int j = 0; j < d; ++j) {
      out[j] += wgt * grid_table.values()[static_cast<std::size_t>(idx) * d + j];
    }
  }
  return out;
}

}  // namespace fgaes
