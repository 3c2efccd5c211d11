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

#include "fgaes/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fgaes {
namespace {

double ScoreOf(const SeriesEval& s, int idx) {
  if (idx < 0 || idx >= static_cast<int>(s.scores.size()) || std::isnan(s.scores[idx])) {
    throw std::invalid_argument("missing score for image " + std::to_string(idx));
  }
  return s.scores[idx];
}

void CheckRanking(const SeriesEval& s) {
  std::set<int> seen;
  for (int idx : s.ranking) {
    ScoreOf(s, idx);
    if (!seen.insert(idx).second) throw std::invalid_argument("ranking repeats an image");
  }
}

double F1(long tp, long fp, long fn) {
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * tp / denom;
}

}  // namespace

PairMetrics ComputePairMetrics(std::span<const SeriesEval> series) {
  PairMetrics out;
  // Confusion counts over the symmetric materialization; label 1 means the
  // first-listed image wins.
  long tp = 0, fp = 0, tn = 0, fn = 0;
  for (const SeriesEval& s : series) {
    CheckRanking(s);
    const int n = static_cast<int>(s.ranking.size());
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        const double better = ScoreOf(s, s.ranking[a]), worse = ScoreOf(s, s.ranking[b]);
        ++out.total;
        // (better, worse), label 1. A tie predicts 0.
        if (better > worse) {
          ++tp;
          ++out.correct;
        } else {
          ++fn;
        }
        // (worse, better), label 0. A tie predicts 1.
        (worse < better ? tn : fp) += 1;
      }
    }
  }
  if (out.total == 0) return out;
  out.acc = static_cast<double>(out.correct) / out.total;
  out.f1 = 0.5 * (F1(tp, fp, fn) + F1(tn, fn, fp));
  return out;
}

const char* LengthWeightName(LengthWeight w) {
  return w == LengthWeight::kImages ? "n" : "n-1";
}

std::vector<double> AverageRanks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start + 1;
    while (end < n && v[idx[end]] == v[idx[start]]) ++end;
    const double avg = 0.5 * (start + 1 + end);
    for (std::size_t k = start; k < end; ++k) ranks[idx[k]] = avg;
    start = end;
  }
  return ranks;
}

double PearsonRaw(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("correlation inputs differ in length");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nan("");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double SpearmanRaw(std::span<const double> a, std::span<const double> b) {
  const std::vector<double> ra = AverageRanks(a), rb = AverageRanks(b);
  return PearsonRaw(ra, rb);
}

SeriesMetrics ComputeSeriesMetrics(std::span<const SeriesEval> series, LengthWeight weight) {
  SeriesMetrics out;
  double hits = 0.0, rho_sum = 0.0;
  for (const SeriesEval& s : series) {
    CheckRanking(s);
    const int n = static_cast<int>(s.ranking.size());
    if (n < 2) throw std::invalid_argument("series metrics need at least two ranked images");
    std::vector<double> pred, gt;
    for (int k = 0; k < n; ++k) {
      pred.push_back(ScoreOf(s, s.ranking[k]));
      gt.push_back(n - k);  // best gets the largest value
    }
    const double top = *std::max_element(pred.begin(), pred.end());
    const bool hit = pred[0] == top && std::count(pred.begin(), pred.end(), top) == 1;
    double rho = SpearmanRaw(pred, gt);
    if (std::isnan(rho)) rho = 0.0;
    const double w = weight == LengthWeight::kImages ? n : n - 1;
    hits += w * hit;
    rho_sum += w * rho;
    out.weight += w;
  }
  if (out.weight > 0) {
    out.s_acc = hits / out.weight;
    out.s_srcc = rho_sum / out.weight;
  }
  return out;
}

CorrResult Corr(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("pred and gt differ in length");
  if (pred.size() < 3) throw std::invalid_argument("correlation needs at least 3 samples");
  auto check = [](std::span<const double> v, const char* name) {
    for (double x : v) {
      if (!std::isfinite(x)) throw std::invalid_argument(std::string(name) + " has a non-finite value");
    }
    if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; })) {
      throw std::invalid_argument(std::string(name) + " is constant; correlation undefined");
    }
  };
  check(pred, "pred");
  check(gt, "gt");
  return CorrResult{SpearmanRaw(pred, gt), PearsonRaw(pred, gt)};
}

EvalReport BuildEvalReport(std::span<const SeriesEval> series,
                           std::span<const double> coarse_pred,
                           std::span<const double> coarse_gt, LengthWeight weight) {
  EvalReport report;
  report.weight = weight;
  std::map<std::string, std::vector<SeriesEval>> groups;
  for (const SeriesEval& s : series) {
    groups[s.source].push_back(s);
    groups["overall"].push_back(s);
  }
  for (const auto& [name, members] : groups) {
    BucketMetrics b;
    b.pair = ComputePairMetrics(members);
    b.series = ComputeSeriesMetrics(members, weight);
    b.n_series = static_cast<int>(members.size());
    for (const SeriesEval& s : members) b.n_images += static_cast<int>(s.ranking.size());
    report.buckets[name] = b;
  }
  if (!coarse_pred.empty() || !coarse_gt.empty()) {
    report.coarse = Corr(coarse_pred, coarse_gt);
    report.n_coarse = static_cast<int>(coarse_pred.size());
  }
  return report;
}

std::string EvalReport::ToJson() const {
  nlohmann::json j;
  j["header"] = {{"length_weight", LengthWeightName(weight)},
                 {"f1", "macro over both orders of each pair; ties count as wrong"},
                 {"ties", "incorrect"}};
  nlohmann::json b = nlohmann::json::object();
  for (const auto& [name, m] : buckets) {
    b[name] = {{"acc", m.pair.acc},       {"f1", m.pair.f1},
               {"s_acc", m.series.s_acc}, {"s_srcc", m.series.s_srcc},
               {"n_series", m.n_series},  {"n_images", m.n_images},
               {"n_pairs", m.pair.total}};
  }
  j["buckets"] = std::move(b);
  if (coarse) {
    j["coarse"] = {{"srcc", coarse->srcc}, {"plcc", coarse->plcc}, {"n", n_coarse}};
  } else {
    j["coarse"] = nullptr;
  }
  return j.dump(2);
}

std::string EvalReport::ToTable() const {
  std::ostringstream out;
  char line[160];
  out << "# length weight w = " << LengthWeightName(weight)
      << "; F1 macro over both pair orders; ties count as wrong\n";
  std::snprintf(line, sizeof line, "%-10s %8s %8s %8s %8s %8s %8s\n", "bucket", "Acc", "F1",
                "s-Acc", "s-SRCC", "series", "pairs");
  out << line;
  auto row = [&](const std::string& name, const BucketMetrics& m) {
    std::snprintf(line, sizeof line, "%-10s %8.4f %8.4f %8.4f %8.4f %8d %8ld\n", name.c_str(),
                  m.pair.acc, m.pair.f1, m.series.s_acc, m.series.s_srcc, m.n_series,
                  m.pair.total);
    out << line;
  };
  for (const auto& [name, m] : buckets) {
    if (name != "overall") row(name, m);
  }
  if (auto it = buckets.find("overall"); it != buckets.end()) row("overall", it->second);
  if (coarse) {
    std::snprintf(line, sizeof line, "%-10s %8s %8s %8s %8s\n", "coarse", "SRCC", "PLCC", "n", "");
    out << line;
    std::snprintf(line, sizeof line, "%-10s %8.4f %8.4f %8d\n", "", coarse->srcc, coarse->plcc,
                  n_coarse);
    out << line;
  }
  return out.str();
}

}  // namespace fgaes
