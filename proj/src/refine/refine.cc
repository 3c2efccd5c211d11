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

#include "fgaes/refine.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "fgaes/difftoken.h"
#include "json.hpp"

namespace fgaes {

std::array<double, kOrientationBins> OrientationHistogram(const ImageBuf& img) {
  const int w = img.width(), h = img.height();
  const std::vector<double> luma = Luminance(img);
  auto at = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return luma[static_cast<std::size_t>(y) * w + x];
  };
  std::array<double, kOrientationBins> hist{};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
      const double gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double theta = std::atan2(gy, gx);
      if (theta < 0) theta += 2 * std::numbers::pi;
      int bin = static_cast<int>(theta / (2 * std::numbers::pi) * kOrientationBins);
      hist[std::min(bin, kOrientationBins - 1)] += mag;
    }
  }
  return hist;
}

double HistogramCosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("histogram sizes differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

double PairSimilarity(const ImageBuf& a, const ImageBuf& b) {
  const auto ha = OrientationHistogram(a), hb = OrientationHistogram(b);
  return 0.5 * SsimRgb(a, b) + 0.5 * HistogramCosine(ha, hb);
}

std::pair<int, int> WorkingSize(std::span<const ImageBuf> images, int max_side) {
  if (images.empty()) throw std::invalid_argument("no images");
  if (max_side < 1) throw std::invalid_argument("max_side must be positive");
  int w = images[0].width(), h = images[0].height();
  for (const ImageBuf& img : images) {
    w = std::min(w, img.width());
    h = std::min(h, img.height());
  }
  if (std::max(w, h) > max_side) {
    const double s = static_cast<double>(max_side) / std::max(w, h);
    w = std::max(1, static_cast<int>(std::lround(w * s)));
    h = std::max(1, static_cast<int>(std::lround(h * s)));
  }
  return {w, h};
}

std::vector<double> SeriesGenericScores(std::span<const ImageBuf> images, int max_side) {
  const int n = static_cast<int>(images.size());
  if (n < 2) throw std::invalid_argument("generic scores need at least two images per series");
  const auto [w, h] = WorkingSize(images, max_side);
  std::vector<ImageBuf> work;
  std::vector<std::array<double, kOrientationBins>> hists;
  for (const ImageBuf& img : images) {
    work.push_back(img.width() == w && img.height() == h ? img : ResizeBilinear(img, w, h));
    hists.push_back(OrientationHistogram(work.back()));
  }
  std::vector<double> scores(n, 0.0);
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      const double s = 0.5 * SsimRgb(work[a], work[b]) + 0.5 * HistogramCosine(hists[a], hists[b]);
      scores[a] += s;
      scores[b] += s;
    }
  }
  for (double& s : scores) s /= n - 1;
  return scores;
}

GenericScoreResult GenericScores(std::span<const std::vector<ImageBuf>> series,
                                 std::span<const std::string> categories,
                                 double fraction, bool per_category, int max_side) {
  if (categories.size() != series.size()) {
    throw std::invalid_argument("one category label per series required");
  }
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("fraction must lie in (0, 1)");
  GenericScoreResult out;
  std::map<std::string, std::vector<double>> pools;
  for (std::size_t s = 0; s < series.size(); ++s) {
    out.scores.push_back(SeriesGenericScores(series[s], max_side));
    auto& pool = pools[per_category ? categories[s] : "all"];
    pool.insert(pool.end(), out.scores.back().begin(), out.scores.back().end());
  }
  for (auto& [key, pool] : pools) out.cutoffs[key] = Percentile(std::move(pool), fraction);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double cutoff = out.cutoffs.at(per_category ? categories[s] : "all");
    std::vector<bool> flags;
    for (double v : out.scores[s]) flags.push_back(v < cutoff);
    out.flagged.push_back(std::move(flags));
  }
  return out;
}

const char* DropReasonName(DropReason r) {
  switch (r) {
    case DropReason::kOutlier: return "outlier";
    case DropReason::kIouHigh: return "iou_high";
    case DropReason::kIouLow: return "iou_low";
    case DropReason::kT2iLow: return "t2i_low";
  }
  return "outlier";
}

IouFilterResult IouFilter(std::span<const Box> boxes, double high, double low) {
  if (!(low >= 0.0 && low <= high && high <= 1.0)) {
    throw std::invalid_argument("IoU band must satisfy 0 <= low <= high <= 1");
  }
  IouFilterResult out;
  std::vector<int> pass1;
  for (int k = 0; k < static_cast<int>(boxes.size()); ++k) {
    double worst = 0.0;
    for (int kept : pass1) worst = std::max(worst, Iou(boxes[k], boxes[kept]));
    if (worst > high) {
      out.dropped.push_back({k, DropReason::kIouHigh, worst});
    } else {
      pass1.push_back(k);
    }
  }
  for (std::size_t pos = 0; pos < pass1.size(); ++pos) {
    const int k = pass1[pos];
    if (out.kept.empty()) {
      out.kept.push_back(k);
      continue;
    }
    double best = 0.0;
    for (int kept : out.kept) best = std::max(best, Iou(boxes[k], boxes[kept]));
    if (best < low) {
      out.dropped.push_back({k, DropReason::kIouLow, best});
    } else {
      out.kept.push_back(k);
    }
  }
  std::sort(out.dropped.begin(), out.dropped.end(),
            [](const IouDrop& a, const IouDrop& b) { return a.index < b.index; });
  return out;
}

std::optional<SeriesRecord> SubsetSeries(const SeriesRecord& r, std::span<const int> kept) {
  if (kept.size() < 2) return std::nullopt;
  std::vector<int> remap(r.size(), -1);
  for (std::size_t k = 0; k < kept.size(); ++k) {
    if (kept[k] < 0 || kept[k] >= r.size() || (k > 0 && kept[k] <= kept[k - 1])) {
      throw std::invalid_argument("kept indices must be ascending and in range");
    }
    remap[kept[k]] = static_cast<int>(k);
  }
  SeriesRecord out;
  out.series_id = r.series_id;
  out.source = r.source;
  for (int k : kept) out.images.push_back(r.images[k]);
  for (int k : r.gt_ranking) {
    if (remap[k] >= 0) out.gt_ranking.push_back(remap[k]);
  }
  for (const PairProb& pp : r.pair_probs) {
    if (remap[pp.i] >= 0 && remap[pp.j] >= 0) out.pair_probs.push_back({remap[pp.i], remap[pp.j], pp.p});
  }
  for (const TextRef& t : r.texts) {
    if (remap[t.i] >= 0 && remap[t.j] >= 0) out.texts.push_back({remap[t.i], remap[t.j], t.ref});
  }
  if (r.boxes) {
    out.boxes.emplace();
    for (int k : kept) out.boxes->push_back((*r.boxes)[k]);
  }
  if (r.t2i_scores) {
    out.t2i_scores.emplace();
    for (int k : kept) out.t2i_scores->push_back((*r.t2i_scores)[k]);
  }
  return out;
}

RefineReport Refine(std::span<const SeriesRecord> records,
                    const std::filesystem::path& manifest, const RefineConfig& cfg) {
  std::vector<std::vector<ImageBuf>> images;
  std::vector<std::string> categories;
  for (const SeriesRecord& r : records) {
    std::vector<ImageBuf> imgs;
    for (const std::string& path : r.images) imgs.push_back(ReadImage(ResolvePath(manifest, path)));
    images.push_back(std::move(imgs));
    categories.push_back(SourceName(r.source));
  }
  const GenericScoreResult generic =
      GenericScores(images, categories, cfg.fraction, cfg.per_category, cfg.max_side);

  RefineReport report;
  report.cutoffs = generic.cutoffs;
  for (std::size_t s = 0; s < records.size(); ++s) {
    const SeriesRecord& r = records[s];
    const double cutoff = generic.cutoffs.at(cfg.per_category ? categories[s] : "all");
    std::vector<RefineEntry> entries;
    for (int k = 0; k < r.size(); ++k) {
      RefineEntry e{r.series_id, k, r.images[k], generic.scores[s][k], cutoff, {}, {}};
      if (generic.flagged[s][k]) e.reason = DropReason::kOutlier;
      entries.push_back(std::move(e));
    }
    if (r.boxes) {
      std::vector<int> alive;
      std::vector<Box> boxes;
      for (int k = 0; k < r.size(); ++k) {
        if (!entries[k].reason) {
          alive.push_back(k);
          boxes.push_back((*r.boxes)[k]);
        }
      }
      for (const IouDrop& d : IouFilter(boxes, cfg.iou_high, cfg.iou_low).dropped) {
        entries[alive[d.index]].reason = d.reason;
        entries[alive[d.index]].iou = d.iou;
      }
    }
    if (r.t2i_scores && cfg.t2i_threshold) {
      for (int k = 0; k < r.size(); ++k) {
        if (!entries[k].reason && (*r.t2i_scores)[k] < *cfg.t2i_threshold) {
          entries[k].reason = DropReason::kT2iLow;
        }
      }
    }
    std::vector<int> kept;
    for (int k = 0; k < r.size(); ++k) {
      if (!entries[k].reason) kept.push_back(k);
    }
    if (auto sub = SubsetSeries(r, kept)) {
      report.refined.push_back(std::move(*sub));
    } else {
      report.dropped_series.push_back(r.series_id);
    }
    report.entries.insert(report.entries.end(), entries.begin(), entries.end());
  }
  return report;
}

void WriteRefineReport(const RefineReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const RefineEntry& e : report.entries) {
    nlohmann::json j{{"series_id", e.series_id}, {"index", e.index},   {"image", e.image},
                     {"score", e.score},         {"cutoff", e.cutoff}, {"removed", e.reason.has_value()}};
    j["reason"] = e.reason ? nlohmann::json(DropReasonName(*e.reason)) : nlohmann::json(nullptr);
    if (e.iou) j["iou"] = *e.iou;
    out << j.dump() << '\n';
  }
}

}  // namespace fgaes
