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

// Series refinement filters: similarity outliers, crop IoU bands and an
// optional text-to-image score threshold.

#ifndef FGAES_REFINE_H_
#define FGAES_REFINE_H_

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fgaes/data.h"
#include "fgaes/imaging.h"

namespace fgaes {

inline constexpr int kOrientationBins = 36;

// Magnitude-weighted histogram of luma gradient orientations over [0, 2pi),
// central differences with edge replication.
std::array<double, kOrientationBins> OrientationHistogram(const ImageBuf& img);

// Cosine of two histograms; two all-zero histograms count as identical and
// a single all-zero histogram as orthogonal.
double HistogramCosine(std::span<const double> a, std::span<const double> b);

// 0.5 * SsimRgb + 0.5 * HistogramCosine of two same-size images.
double PairSimilarity(const ImageBuf& a, const ImageBuf& b);

// Working size for a series: the smallest width and height present, scaled
// down so the longer side is at most `max_side`.
std::pair<int, int> WorkingSize(std::span<const ImageBuf> images, int max_side);

// Per image: mean PairSimilarity with every other image of the series after
// resizing all to the working size. Requires at least two images.
std::vector<double> SeriesGenericScores(std::span<const ImageBuf> images,
                                        int max_side = 128);

struct GenericScoreResult {
  std::vector<std::vector<double>> scores;  // [series][image]
  // Cutoff per category; the key "all" when computed dataset-wide.
  std::map<std::string, double> cutoffs;
  std::vector<std::vector<bool>> flagged;   // score strictly below cutoff
};

// Scores every series and flags images below the `fraction` percentile
// (linear interpolation), dataset-wide or per category label.
GenericScoreResult GenericScores(std::span<const std::vector<ImageBuf>> series,
                                 std::span<const std::string> categories,
                                 double fraction = 0.30, bool per_category = false,
                                 int max_side = 128);

enum class DropReason { kOutlier, kIouHigh, kIouLow, kT2iLow };
const char* DropReasonName(DropReason r);

struct IouDrop {
  int index = 0;
  DropReason reason = DropReason::kIouHigh;
  double iou = 0.0;  // offending (high) or best available (low) IoU
};

struct IouFilterResult {
  std::vector<int> kept;  // input order
  std::vector<IouDrop> dropped;
};

// Pass 1 scans in input order and drops a box whose IoU with any kept box
// exceeds `high`. Pass 2 keeps the first survivor and drops each later one
// whose best IoU with the survivors before it is below `low`.
IouFilterResult IouFilter(std::span<const Box> boxes, double high = 0.8,
                          double low = 0.2);

// Restricts a record to `kept` image indices (ascending), remapping every
// index field. Returns nothing if fewer than two images remain.
std::optional<SeriesRecord> SubsetSeries(const SeriesRecord& r, std::span<const int> kept);

struct RefineConfig {
  double fraction = 0.30;
  bool per_category = false;
  double iou_high = 0.8;
  double iou_low = 0.2;
  std::optional<double> t2i_threshold;
  int max_side = 128;
};

struct RefineEntry {
  std::string series_id;
  int index = 0;
  std::string image;
  double score = 0.0;
  double cutoff = 0.0;
  std::optional<DropReason> reason;
  std::optional<double> iou;
};

struct RefineReport {
  std::vector<RefineEntry> entries;
  std::map<std::string, double> cutoffs;
  std::vector<SeriesRecord> refined;        // series with >= 2 images left
  std::vector<std::string> dropped_series;  // fell below two images
};

// Runs all filters on a loaded manifest. Outliers are flagged first; IoU
// bands apply to the remaining images of series with boxes; the T2I
// threshold drops images whose score is below it.
RefineReport Refine(std::span<const SeriesRecord> records,
                    const std::filesystem::path& manifest, const RefineConfig& cfg);

// One JSON object per image.
void WriteRefineReport(const RefineReport& report, const std::filesystem::path& path);

}  // namespace fgaes

#endif  // FGAES_REFINE_H_
