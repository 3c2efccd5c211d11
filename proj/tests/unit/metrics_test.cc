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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "fgaes/metrics.h"
#include "fgaes/random.h"
#include "json.hpp"

using fgaes::SeriesEval;

namespace {

// From tests/oracles/correlations.py.
constexpr double kPermutedSpearman = 0.6;
constexpr double kPermutedPearson = 0.2533680516245896;
constexpr double kTiedSpearman = 0.5821543981758688;

// Series whose scores follow the ranking exactly.
SeriesEval Perfect(int n, const char* source = "natural") {
  SeriesEval s{source, {}, {}};
  for (int k = 0; k < n; ++k) {
    s.scores.push_back(k);  // image k has score k
    s.ranking.push_back(n - 1 - k);
  }
  return s;
}

std::vector<SeriesEval> RandomSeries(fgaes::Rng& rng, int count) {
  std::vector<SeriesEval> out;
  for (int c = 0; c < count; ++c) {
    const int n = rng.UniformInt(2, 7);
    SeriesEval s{"natural", {}, {}};
    for (int k = 0; k < n; ++k) s.scores.push_back(std::round(rng.Uniform(0, 4) * 2) / 2);
    s.ranking.resize(n);
    std::iota(s.ranking.begin(), s.ranking.end(), 0);
    rng.Shuffle(std::span<int>(s.ranking));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("pair metrics examples") {
  const std::vector<SeriesEval> perfect = {Perfect(3), Perfect(5)};
  auto m = fgaes::ComputePairMetrics(perfect);
  CHECK(m.acc == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.total == 3 + 10);

  std::vector<SeriesEval> tied = {Perfect(4)};
  std::fill(tied[0].scores.begin(), tied[0].scores.end(), 0.3);
  m = fgaes::ComputePairMetrics(tied);
  CHECK(m.acc == 0.0);
  CHECK(m.f1 == 0.0);

  // Three two-image series, the last one predicted backwards.
  const std::vector<SeriesEval> toy = {{"natural", {0.9, 0.1}, {0, 1}},
                                       {"aigc", {0.2, 0.7}, {1, 0}},
                                       {"cropping", {0.6, 0.4}, {1, 0}}};
  m = fgaes::ComputePairMetrics(toy);
  CHECK(m.acc == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(std::abs(m.acc - 0.6667) <= 1e-4);
  CHECK(m.f1 == doctest::Approx(2.0 / 3).epsilon(1e-12));
}

TEST_CASE("pair metrics reject missing scores") {
  const std::vector<SeriesEval> short_scores = {{"natural", {0.1, 0.2}, {0, 1, 2}}};
  CHECK_THROWS(fgaes::ComputePairMetrics(short_scores));
  const std::vector<SeriesEval> nan_score = {{"natural", {0.1, std::nan("")}, {0, 1}}};
  CHECK_THROWS(fgaes::ComputePairMetrics(nan_score));
}

TEST_CASE("series metrics examples") {
  const std::vector<SeriesEval> perfect = {Perfect(2), Perfect(6)};
  auto m = fgaes::ComputeSeriesMetrics(perfect);
  CHECK(m.s_acc == 1.0);
  CHECK(m.s_srcc == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<SeriesEval> reversed = {Perfect(3), Perfect(5)};
  for (auto& s : reversed) std::reverse(s.ranking.begin(), s.ranking.end());
  m = fgaes::ComputeSeriesMetrics(reversed);
  CHECK(m.s_acc == 0.0);
  CHECK(m.s_srcc == doctest::Approx(-1.0).epsilon(1e-12));

  // n = 2 correct; n = 4 with the top two swapped: rho = 1 - 6*2/(4*15) = 0.8.
  const std::vector<SeriesEval> two = {{"natural", {1.0, 0.0}, {0, 1}},
                                       {"natural", {3.0, 4.0, 2.0, 1.0}, {0, 1, 2, 3}}};
  m = fgaes::ComputeSeriesMetrics(two);
  CHECK(m.s_acc == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(m.s_srcc == doctest::Approx((2 * 1.0 + 4 * 0.8) / 6).epsilon(1e-12));
  CHECK(std::abs(m.s_srcc - 0.8667) <= 1e-4);
  m = fgaes::ComputeSeriesMetrics(two, fgaes::LengthWeight::kPairs);
  CHECK(m.s_acc == doctest::Approx(1.0 / 4).epsilon(1e-12));
  CHECK(m.s_srcc == doctest::Approx((1.0 + 3 * 0.8) / 4).epsilon(1e-12));

  const std::vector<SeriesEval> single = {{"natural", {1.0}, {0}}};
  CHECK_THROWS(fgaes::ComputeSeriesMetrics(single));
}

TEST_CASE("series metrics argmax ties are misses") {
  const std::vector<SeriesEval> tie = {{"natural", {0.5, 0.5, 0.1}, {0, 1, 2}}};
  const auto m = fgaes::ComputeSeriesMetrics(tie);
  CHECK(m.s_acc == 0.0);
  const std::vector<SeriesEval> flat = {{"natural", {0.5, 0.5, 0.5}, {0, 1, 2}}};
  CHECK(fgaes::ComputeSeriesMetrics(flat).s_srcc == 0.0);
}

TEST_CASE("equal lengths reduce to unweighted means") {
  const std::vector<SeriesEval> s = {{"natural", {3.0, 2.0, 1.0}, {0, 1, 2}},
                                     {"natural", {1.0, 3.0, 2.0}, {0, 1, 2}}};
  const double rho1 = 1.0, rho2 = fgaes::SpearmanRaw(std::vector<double>{1, 3, 2},
                                                     std::vector<double>{3, 2, 1});
  const auto m = fgaes::ComputeSeriesMetrics(s);
  CHECK(m.s_acc == 0.5);
  CHECK(m.s_srcc == doctest::Approx((rho1 + rho2) / 2).epsilon(1e-12));
}

TEST_CASE("correlation examples and errors") {
  const std::vector<double> gt = {1.5, 2.0, 3.7, 4.1, 9.0};
  auto r = fgaes::Corr(gt, gt);
  CHECK(r.srcc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.plcc == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> neg(gt);
  for (double& v : neg) v = -v;
  r = fgaes::Corr(neg, gt);
  CHECK(r.srcc == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(r.plcc == doctest::Approx(-1.0).epsilon(1e-12));
  const std::vector<double> pred = {2.0, 1.5, 4.1, 9.0, 3.7};
  r = fgaes::Corr(pred, gt);
  CHECK(std::abs(r.srcc - kPermutedSpearman) <= 1e-12);
  CHECK(std::abs(r.plcc - kPermutedPearson) <= 1e-12);
  const std::vector<double> a = {1.0, 2.0, 2.0, 3.0, 5.0, 5.0}, b = {2.0, 1.0, 4.0, 4.0, 6.0, 3.0};
  CHECK(std::abs(fgaes::Corr(a, b).srcc - kTiedSpearman) <= 1e-12);

  CHECK_THROWS_WITH(fgaes::Corr(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}),
                    doctest::Contains("pred is constant"));
  CHECK_THROWS_WITH(fgaes::Corr(std::vector<double>{1, 2, 3}, std::vector<double>{4, 4, 4}),
                    doctest::Contains("gt is constant"));
  CHECK_THROWS(fgaes::Corr(std::vector<double>{1, 2}, std::vector<double>{1, 2}));
  CHECK_THROWS(fgaes::Corr(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}));
}

TEST_CASE("average ranks share ties") {
  CHECK(fgaes::AverageRanks(std::vector<double>{3, 1, 3, 2}) ==
        std::vector<double>{3.5, 1, 3.5, 2});
}

TEST_CASE("metrics are invariant under increasing transforms") {
  fgaes::Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto series = RandomSeries(rng, 8);
    const auto pair = fgaes::ComputePairMetrics(series);
    const auto ser = fgaes::ComputeSeriesMetrics(series);
    std::vector<double> pred, gt;
    for (const auto& s : series) {
      for (double v : s.scores) {
        pred.push_back(v + 0.01 * pred.size());
        gt.push_back(rng.Uniform());
      }
    }
    const auto corr = fgaes::Corr(pred, gt);
    auto transformed = series;
    for (auto& s : transformed) {
      for (double& v : s.scores) v = std::exp(3 * v) - 7;
    }
    std::vector<double> tpred;
    for (double v : pred) tpred.push_back(std::atan(v));
    const auto pair2 = fgaes::ComputePairMetrics(transformed);
    const auto ser2 = fgaes::ComputeSeriesMetrics(transformed);
    CHECK(pair2.acc == pair.acc);
    CHECK(pair2.f1 == pair.f1);
    CHECK(ser2.s_acc == ser.s_acc);
    CHECK(ser2.s_srcc == doctest::Approx(ser.s_srcc).epsilon(1e-12));
    CHECK(fgaes::Corr(tpred, gt).srcc == doctest::Approx(corr.srcc).epsilon(1e-12));
    std::vector<double> affine;
    for (double v : pred) affine.push_back(2.5 * v + 4);
    CHECK(fgaes::Corr(affine, gt).plcc == doctest::Approx(corr.plcc).epsilon(1e-9));
    for (double& v : affine) v = -v;
    CHECK(fgaes::Corr(affine, gt).plcc == doctest::Approx(-corr.plcc).epsilon(1e-9));
  }
}

TEST_CASE("pair accuracy is 1 exactly when s_srcc is 1 without ties") {
  fgaes::Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    auto series = RandomSeries(rng, 2);
    for (auto& s : series) {
      for (std::size_t k = 0; k < s.scores.size(); ++k) s.scores[k] = rng.Uniform();
      if (rng.Bernoulli(0.5)) {
        std::vector<double> sorted(s.scores);
        std::sort(sorted.rbegin(), sorted.rend());
        for (std::size_t k = 0; k < s.ranking.size(); ++k) s.scores[s.ranking[k]] = sorted[k];
      }
    }
    const bool acc1 = fgaes::ComputePairMetrics(series).acc == 1.0;
    const bool srcc1 = std::abs(fgaes::ComputeSeriesMetrics(series).s_srcc - 1.0) < 1e-12;
    CHECK(acc1 == srcc1);
  }
}

TEST_CASE("eval report buckets and rendering") {
  const std::vector<SeriesEval> series = {Perfect(3, "natural"), Perfect(4, "aigc"),
                                          Perfect(2, "cropping")};
  const std::vector<double> pred = {1, 2, 3, 4}, gt = {2, 4, 6, 8};
  const auto report = fgaes::BuildEvalReport(series, pred, gt);
  CHECK(report.buckets.size() == 4);
  for (const auto& [name, m] : report.buckets) {
    CHECK(m.pair.acc == 1.0);
    CHECK(m.pair.f1 == 1.0);
    CHECK(m.series.s_acc == 1.0);
    CHECK(m.series.s_srcc == doctest::Approx(1.0));
  }
  CHECK(report.buckets.at("overall").n_series == 3);
  REQUIRE(report.coarse.has_value());
  CHECK(report.coarse->plcc == doctest::Approx(1.0));
  const auto j = nlohmann::json::parse(report.ToJson());
  CHECK(j["header"]["length_weight"] == "n");
  CHECK(j["buckets"]["overall"]["acc"] == 1.0);
  CHECK(j["coarse"]["n"] == 4);
  const std::string table = report.ToTable();
  CHECK(table.find("overall") != std::string::npos);
  CHECK(table.find("s-SRCC") != std::string::npos);
  CHECK(table.find("length weight") != std::string::npos);
  const auto no_coarse = fgaes::BuildEvalReport(series, {}, {});
  CHECK(!no_coarse.coarse.has_value());
}
