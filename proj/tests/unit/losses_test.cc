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
#include "fgaes/losses.h"
#include "fgaes/random.h"

namespace nd = fgaes::nd;
using nd::Tape;
using nd::Tensor;
using nd::Var;

namespace {

Tensor PointMass(int bin) {
  Tensor t({10});
  t[bin] = 1.0;
  return t;
}

Tensor RandomDist(fgaes::Rng& rng) {
  Tensor t({10});
  double total = 0.0;
  for (double& v : t.mutable_values()) total += (v = rng.Uniform(0.01, 1.0));
  for (double& v : t.mutable_values()) v /= total;
  return t;
}

double Loss(Var v) { return v.value().item(); }

double ListMle(const std::vector<double>& s, const std::vector<int>& r) {
  Tape tape;
  return Loss(fgaes::ListMleLoss(tape.Constant(Tensor::Vector(s)), r));
}

// Probability of drawing r in order when each remaining item is picked
// with probability proportional to exp(score).
double SequentialDrawProbability(const std::vector<double>& s,
                                 const std::vector<int>& r) {
  std::vector<int> remaining(s.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  double prob = 1.0;
  for (int pick : r) {
    double total = 0.0;
    for (int j : remaining) total += std::exp(s[j]);
    prob *= std::exp(s[pick]) / total;
    remaining.erase(std::find(remaining.begin(), remaining.end(), pick));
  }
  return prob;
}

}  // namespace

TEST_CASE("emd examples") {
  Tape tape;
  const Var a = tape.Constant(PointMass(0));
  const Var b = tape.Constant(PointMass(9));
  CHECK(Loss(fgaes::EmdLoss(a, a)) == 0.0);
  CHECK(std::abs(Loss(fgaes::EmdLoss(a, b)) - 0.9487) < 1e-4);
  CHECK(std::abs(Loss(fgaes::EmdLoss(a, b)) - std::sqrt(0.9)) < 1e-12);
  CHECK(std::abs(Loss(fgaes::EmdLoss(a, b, 1.0)) - 0.9) < 1e-12);

  CHECK_THROWS(fgaes::EmdLoss(a, tape.Constant(Tensor({10}, 0.2))));
  CHECK_THROWS(fgaes::EmdLoss(a, tape.Constant(Tensor({9}, 1.0 / 9))));
}

TEST_CASE("emd is symmetric and differentiable") {
  fgaes::Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    const Var p = tape.Constant(RandomDist(rng));
    const Var g = tape.Constant(RandomDist(rng));
    CHECK(std::abs(Loss(fgaes::EmdLoss(p, g)) - Loss(fgaes::EmdLoss(g, p))) < 1e-15);
    CHECK(Loss(fgaes::EmdLoss(p, g)) >= 0.0);
  }
  const Tensor gt = RandomDist(rng);
  for (double r : {2.0, 1.5, 3.0}) {
    CAPTURE(r);
    Tensor logits({10});
    for (double& v : logits.mutable_values()) v = rng.Uniform(-2, 2);
    auto fn = [&](Tape& tape, std::span<const Var> v) {
      return fgaes::EmdLoss(nd::Softmax(v[0], 0), tape.Constant(gt), r);
    };
    CHECK(nd::GradCheck(fn, {logits}).max_rel_error < 1e-6);
  }
}

TEST_CASE("ctalign examples") {
  Tape tape;
  auto vec = [&](std::vector<double> v) { return tape.Constant(Tensor::Vector(v)); };
  const Var zero = vec({0, 0, 0});
  CHECK(std::abs(Loss(fgaes::CtAlignLoss(vec({2, 0, 0}), zero, vec({1, 0, 0})))) < 1e-8);
  CHECK(std::abs(Loss(fgaes::CtAlignLoss(vec({0, 1, 0}), zero, vec({1, 0, 0}))) - 1.0) <
        1e-12);
  CHECK(std::abs(Loss(fgaes::CtAlignLoss(vec({1, 2, 3}), vec({2, 2, 3}), vec({1, 0, 0}))) -
                 2.0) < 1e-8);
  CHECK(std::abs(Loss(fgaes::CtAlignLoss(vec({0, 1, 0}), zero, vec({0, 1, 0}), true)) -
                 1.0) < 1e-8);
  CHECK_THROWS(fgaes::CtAlignLoss(vec({1, 0, 0}), zero, zero));
}

TEST_CASE("bt_prob examples and properties") {
  CHECK(fgaes::BtProb(0.3, 0.3) == 0.5);
  CHECK(std::abs(fgaes::BtProb(1.0, 0.0) - 0.731059) < 1e-6);
  fgaes::Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = rng.Uniform(-10, 10), b = rng.Uniform(-10, 10);
    CHECK(std::abs(fgaes::BtProb(a, b) + fgaes::BtProb(b, a) - 1.0) < 1e-12);
    const double c = rng.Uniform(-5, 5);
    CHECK(std::abs(fgaes::BtProb(a + c, b + c) - fgaes::BtProb(a, b)) < 1e-12);
    CHECK(fgaes::BtProb(a + 0.1, b) > fgaes::BtProb(a, b));

    Tape tape;
    const Var p = fgaes::BtProb(tape.Constant(Tensor::Scalar(a)),
                                tape.Constant(Tensor::Scalar(b)));
    CHECK(std::abs(p.value().item() - fgaes::BtProb(a, b)) < 1e-12);
  }
  CHECK(fgaes::BtProb(800.0, 0.0) == 1.0);
  CHECK(fgaes::BtProb(-800.0, 0.0) >= 0.0);
}

TEST_CASE("listmle examples") {
  CHECK(ListMle({2.5}, {0}) == 0.0);
  CHECK(std::abs(ListMle({0.4, 0.4}, {1, 0}) - 0.693147) < 1e-6);
  CHECK_THROWS(ListMle({0.1, 0.2}, {0, 0}));
  CHECK_THROWS(ListMle({0.1, 0.2}, {0, 2}));
  CHECK_THROWS(ListMle({0.1, 0.2}, {0}));
}

TEST_CASE("listmle matches sequential sampling over all permutations") {
  fgaes::Rng rng(3);
  for (int n = 1; n <= 4; ++n) {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> s(n);
      for (double& v : s) v = rng.Uniform(-3, 3);
      std::vector<int> r(n);
      std::iota(r.begin(), r.end(), 0);
      double total = 0.0;
      do {
        const double p = std::exp(-ListMle(s, r));
        CHECK(std::abs(p - SequentialDrawProbability(s, r)) < 1e-12);
        total += p;
      } while (std::next_permutation(r.begin(), r.end()));
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("listmle shift invariance and concordance") {
  fgaes::Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(3);
    for (double& v : s) v = rng.Uniform(-3, 3);
    std::vector<int> r = {0, 1, 2};
    rng.Shuffle(std::span<int>(r));
    std::vector<double> shifted = s;
    const double c = rng.Uniform(-50, 50);
    for (double& v : shifted) v += c;
    CHECK(std::abs(ListMle(s, r) - ListMle(shifted, r)) < 1e-9);

    // Swap the scores of two ranked items whenever the later one scores
    // higher; the loss must not increase.
    for (int i = 0; i < 3; ++i) {
      for (int j = i + 1; j < 3; ++j) {
        if (s[r[j]] > s[r[i]]) {
          std::vector<double> fixed = s;
          std::swap(fixed[r[i]], fixed[r[j]]);
          CHECK(ListMle(fixed, r) <= ListMle(s, r) + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("rank losses have matching gradients") {
  fgaes::Rng rng(5);
  for (int n : {1, 2, 5, 8}) {
    Tensor s({n});
    for (double& v : s.mutable_values()) v = rng.Uniform(-2, 2);
    std::vector<int> r(n);
    std::iota(r.begin(), r.end(), 0);
    rng.Shuffle(std::span<int>(r));
    auto mle = [&](Tape&, std::span<const Var> v) { return fgaes::ListMleLoss(v[0], r); };
    auto pair = [&](Tape&, std::span<const Var> v) {
      return fgaes::PairwiseLogisticLoss(v[0], r);
    };
    CHECK(nd::GradCheck(mle, {s}).max_rel_error < 1e-5);
    CHECK(nd::GradCheck(pair, {s}).max_rel_error < 1e-5);
  }
  const Tensor et = Tensor::Vector({0.3, -0.2, 0.9, 0.1});
  auto align = [&](Tape& tape, std::span<const Var> v) {
    return fgaes::CtAlignLoss(v[0], v[1], tape.Constant(et));
  };
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x({4}), y({4});
    for (double& v : x.mutable_values()) v = rng.Uniform(-1, 1);
    for (double& v : y.mutable_values()) v = rng.Uniform(-1, 1);
    CHECK(nd::GradCheck(align, {x, y}).max_rel_error < 1e-5);
  }
}

TEST_CASE("pairwise logistic loss value") {
  Tape tape;
  const Var s = tape.Constant(Tensor::Vector({0.0, 1.0, 0.5}));
  const std::vector<int> r = {1, 2, 0};
  const double expected = -(std::log(fgaes::BtProb(1.0, 0.5)) +
                            std::log(fgaes::BtProb(1.0, 0.0)) +
                            std::log(fgaes::BtProb(0.5, 0.0))) / 3;
  CHECK(std::abs(Loss(fgaes::PairwiseLogisticLoss(s, r)) - expected) < 1e-12);
}

TEST_CASE("joint loss combinations") {
  Tape tape;
  const Var emd = tape.Constant(Tensor::Scalar(0.37));
  const Var align = tape.Constant(Tensor::Scalar(0.2));
  const Var rank = tape.Constant(Tensor::Scalar(0.7));
  fgaes::TrainLossConfig cfg;
  CHECK(Loss(fgaes::JointLoss(0, {std::nullopt, std::nullopt, emd}, cfg)) == 0.37);
  CHECK(Loss(fgaes::JointLoss(1, {align, rank, std::nullopt}, cfg)) ==
        doctest::Approx(2.7).epsilon(1e-15));
  cfg.lambda = 0.0;
  CHECK(Loss(fgaes::JointLoss(1, {align, rank, std::nullopt}, cfg)) == 0.7);
  CHECK(Loss(fgaes::JointLoss(1, {std::nullopt, rank, std::nullopt}, cfg)) == 0.7);
  cfg.lambda = 10.0;
  CHECK_THROWS(fgaes::JointLoss(1, {std::nullopt, rank, std::nullopt}, cfg));
  CHECK_THROWS(fgaes::JointLoss(1, {align, std::nullopt, emd}, cfg));
  CHECK_THROWS(fgaes::JointLoss(0, {align, rank, std::nullopt}, cfg));
  CHECK_THROWS(fgaes::JointLoss(2, {align, rank, emd}, cfg));
  cfg.lambda = -1.0;
  CHECK_THROWS(fgaes::JointLoss(0, {std::nullopt, std::nullopt, emd}, cfg));
}
