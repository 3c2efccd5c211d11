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

#include "fgaes/losses.h"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgaes {
namespace {

using nd::Tensor;
using nd::Var;

constexpr int kBins = 10;

void CheckPermutation(std::span<const int> ranking, int n) {
  if (static_cast<int>(ranking.size()) != n) {
    throw std::invalid_argument("ranking has " + std::to_string(ranking.size()) +
                                " entries for " + std::to_string(n) + " scores");
  }
  std::vector<bool> seen(n, false);
  for (int r : ranking) {
    if (r < 0 || r >= n || seen[r]) {
      throw std::invalid_argument("ranking is not a permutation of 0.." +
                                  std::to_string(n - 1));
    }
    seen[r] = true;
  }
}

int ScoreCount(Var scores, const char* op) {
  if (scores.shape().size() != 1 || scores.shape()[0] < 1) {
    throw nd::ShapeError(op, {scores.shape()}, "expected a non-empty vector");
  }
  return scores.shape()[0];
}

// Scores reordered by ranking, shape {1, n}.
Var Ordered(Var scores, std::span<const int> ranking) {
  const int n = static_cast<int>(ranking.size());
  Tensor perm({n, n});
  for (int i = 0; i < n; ++i) perm.at(ranking[i], i) = 1.0;
  return nd::MatMul(nd::Reshape(scores, {1, n}), scores.tape->Constant(perm));
}

}  // namespace

void TrainLossConfig::Validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  if (!(emd_r > 0.0)) throw std::invalid_argument("emd_r must be positive");
}

void ValidateScoreDist(std::span<const double> v) {
  if (v.size() != kBins) {
    throw std::invalid_argument("score distribution needs 10 bins, got " +
                                std::to_string(v.size()));
  }
  double total = 0.0;
  for (double p : v) {
    if (!(p >= 0.0)) throw std::invalid_argument("negative score probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("score distribution sums to " +
                                std::to_string(total));
  }
}

Var EmdLoss(Var pred, Var gt, double r) {
  ValidateScoreDist(pred.value().values());
  ValidateScoreDist(gt.value().values());
  if (!(r > 0.0)) throw std::invalid_argument("emd exponent must be positive");
  Tensor upper({kBins, kBins});
  for (int i = 0; i < kBins; ++i) {
    for (int j = i; j < kBins; ++j) upper.at(i, j) = 1.0;
  }
  const Var diff = nd::Reshape(nd::Sub(pred, gt), {1, kBins});
  const Var cdf = nd::MatMul(diff, pred.tape->Constant(std::move(upper)));
  const Var sq = nd::Power(cdf, 2.0);
  const Var powered = r == 2.0 ? sq : nd::Power(sq, r / 2.0);
  return nd::Power(nd::Mean(powered), 1.0 / r);
}

Var CtAlignLoss(Var ev_x, Var ev_y, Var et, bool literal_sign) {
  double norm = 0.0;
  for (double v : et.value().values()) norm += v * v;
  if (norm == 0.0) throw std::invalid_argument("text embedding has zero norm");
  const Var cos = nd::CosineSimilarity(nd::Sub(ev_x, ev_y), et);
  if (literal_sign) return cos;
  return nd::AddScalar(nd::Scale(cos, -1.0), 1.0);
}

Var BtProb(Var sx, Var sy) {
  const Var pair = nd::Concat(std::vector<Var>{nd::Reshape(sx, {1}),
                                               nd::Reshape(sy, {1})}, 0);
  return nd::Slice(nd::Softmax(pair, 0), 0, 0, 1);
}

double BtProb(double sx, double sy) {
  const double d = sx - sy;
  if (d >= 0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

Var ListMleLoss(Var scores, std::span<const int> ranking) {
  const int n = ScoreCount(scores, "listmle_loss");
  CheckPermutation(ranking, n);
  const Var ordered = Ordered(scores, ranking);
  std::vector<Var> terms;
  terms.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Var tail = nd::Slice(ordered, 1, i, n - i);
    terms.push_back(nd::Slice(nd::LogSoftmax(tail, 1), 1, 0, 1));
  }
  const Var all = n == 1 ? terms[0] : nd::Concat(terms, 1);
  return nd::Scale(nd::Sum(all), -1.0);
}

Var PairwiseLogisticLoss(Var scores, std::span<const int> ranking) {
  const int n = ScoreCount(scores, "pairwise_logistic_loss");
  CheckPermutation(ranking, n);
  if (n == 1) return nd::Scale(nd::Sum(scores), 0.0);
  const Var ordered = nd::Reshape(Ordered(scores, ranking), {n});
  std::vector<Var> terms;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Var pair = nd::Concat(
          std::vector<Var>{nd::Slice(ordered, 0, i, 1), nd::Slice(ordered, 0, j, 1)}, 0);
      terms.push_back(nd::Slice(nd::LogSoftmax(pair, 0), 0, 0, 1));
    }
  }
  const Var all = terms.size() == 1 ? terms[0] : nd::Concat(terms, 0);
  return nd::Scale(nd::Mean(all), -1.0);
}

Var JointLoss(int delta, const JointParts& parts, const TrainLossConfig& cfg) {
  cfg.Validate();
  if (delta == 0) {
    if (!parts.emd) throw std::invalid_argument("joint loss: delta=0 needs emd");
    return *parts.emd;
  }
  if (delta != 1) throw std::invalid_argument("joint loss: delta must be 0 or 1");
  if (!parts.rankreg) throw std::invalid_argument("joint loss: delta=1 needs rankreg");
  if (cfg.lambda == 0.0) return *parts.rankreg;
  if (!parts.align) throw std::invalid_argument("joint loss: lambda>0 needs align");
  return nd::Add(nd::Scale(*parts.align, cfg.lambda), *parts.rankreg);
}

}  // namespace fgaes
