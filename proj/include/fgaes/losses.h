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

// Training objectives. Every loss is built from closed tape ops so its
// gradient comes from the same reverse pass as the encoder's.

#ifndef FGAES_LOSSES_H_
#define FGAES_LOSSES_H_

#include <optional>
#include <span>

#include "fgaes/ndiff.h"

namespace fgaes {

struct TrainLossConfig {
  double lambda = 10.0;  // text-alignment weight
  double emd_r = 2.0;
  // Minimizes cos(ev_x - ev_y, et) itself instead of 1 - cos.
  bool literal_ctalign_sign = false;

  void Validate() const;
};

// Throws std::invalid_argument unless v holds 10 non-negative entries
// summing to 1 within 1e-9.
void ValidateScoreDist(std::span<const double> v);

// ((1/10) sum_k |CDF_pred(k) - CDF_gt(k)|^r)^(1/r) over 10 bins.
nd::Var EmdLoss(nd::Var pred, nd::Var gt, double r = 2.0);

// 1 - cos(ev_x - ev_y, et), or cos(...) with the literal sign.
nd::Var CtAlignLoss(nd::Var ev_x, nd::Var ev_y, nd::Var et,
                    bool literal_sign = false);

// P(x preferred over y) = e^sx / (e^sx + e^sy), shape {1}.
nd::Var BtProb(nd::Var sx, nd::Var sy);
double BtProb(double sx, double sy);

// Negative Plackett-Luce log-likelihood of ranking (best first) under
// scores of shape {n}.
nd::Var ListMleLoss(nd::Var scores, std::span<const int> ranking);

// Mean of -log BtProb(s_a, s_b) over every pair with a ranked before b.
nd::Var PairwiseLogisticLoss(nd::Var scores, std::span<const int> ranking);

struct JointParts {
  std::optional<nd::Var> align;
  std::optional<nd::Var> rankreg;
  std::optional<nd::Var> emd;
};

// delta * (lambda * align + rankreg) + (1 - delta) * emd with delta in {0, 1}.
// align may be absent when lambda == 0.
nd::Var JointLoss(int delta, const JointParts& parts, const TrainLossConfig& cfg);

}  // namespace fgaes

#endif  // FGAES_LOSSES_H_
