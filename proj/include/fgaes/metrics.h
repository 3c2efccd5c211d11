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

// Evaluation metrics: pair-level accuracy and F1, length-weighted series
// accuracy and Spearman correlation, and coarse SRCC / PLCC.

#ifndef FGAES_METRICS_H_
#define FGAES_METRICS_H_

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fgaes {

// One evaluated series: predicted score per image and the ground-truth
// ranking (best first) over image indices. Images absent from the ranking
// are ignored.
struct SeriesEval {
  std::string source;
  std::vector<double> scores;
  std::vector<int> ranking;
};

struct PairMetrics {
  double acc = 0.0;
  double f1 = 0.0;
  long correct = 0;
  long total = 0;
};

// Every ground-truth ordered pair (better, worse) is correct iff
// score(better) > score(worse); ties are wrong. F1 is macro over the label
// "first-listed image wins" with each pair materialized in both orders, a
// tie predicting the wrong label in both. Throws on a missing (out of range
// or NaN) score.
PairMetrics ComputePairMetrics(std::span<const SeriesEval> series);

enum class LengthWeight { kImages, kPairs };  // w = n or w = n - 1
const char* LengthWeightName(LengthWeight w);

struct SeriesMetrics {
  double s_acc = 0.0;
  double s_srcc = 0.0;
  double weight = 0.0;
};

// Per series: hit iff the unique argmax is the ground-truth best; rho is
// Spearman (average ranks) between scores and ground-truth order, 0 when
// the predictions are all tied. Both are averaged with weight w.
SeriesMetrics ComputeSeriesMetrics(std::span<const SeriesEval> series,
                                   LengthWeight weight = LengthWeight::kImages);

// 1-based ranks with ties sharing their average rank.
std::vector<double> AverageRanks(std::span<const double> v);
// Undefined (NaN) for constant inputs.
double PearsonRaw(std::span<const double> a, std::span<const double> b);
double SpearmanRaw(std::span<const double> a, std::span<const double> b);

struct CorrResult {
  double srcc = 0.0;
  double plcc = 0.0;
};

// Requires >= 3 finite samples and non-constant vectors; errors name the
// offending input.
CorrResult Corr(std::span<const double> pred, std::span<const double> gt);

struct BucketMetrics {
  PairMetrics pair;
  SeriesMetrics series;
  int n_series = 0;
  int n_images = 0;
};

struct EvalReport {
  LengthWeight weight = LengthWeight::kImages;
  std::map<std::string, BucketMetrics> buckets;  // per source plus "overall"
  std::optional<CorrResult> coarse;
  int n_coarse = 0;

  std::string ToJson() const;
  // Aligned plain-text table, one row per bucket.
  std::string ToTable() const;
};

EvalReport BuildEvalReport(std::span<const SeriesEval> series,
                           std::span<const double> coarse_pred,
                           std::span<const double> coarse_gt,
                           LengthWeight weight = LengthWeight::kImages);

}  // namespace fgaes

#endif  // FGAES_METRICS_H_
