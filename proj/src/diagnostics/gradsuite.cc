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

#include "fgaes/gradsuite.h"

#include <algorithm>
#include <span>
#include <vector>

#include "fgaes/encoder.h"
#include "fgaes/losses.h"
#include "fgaes/ndiff.h"
#include "fgaes/random.h"

namespace fgaes {
namespace {

nd::Tensor RandomTensor(Rng& rng, nd::Shape shape, double lo = -1.0, double hi = 1.0) {
  nd::Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.Uniform(lo, hi);
  return t;
}

GradSuiteEntry Check(const std::string& name, const nd::ScalarFn& fn,
                     const std::vector<nd::Tensor>& params) {
  const nd::GradCheckResult r = nd::GradCheck(fn, params);
  return GradSuiteEntry{name, r.max_rel_error, r.coordinates};
}

TokenSeq RandomTokens(Rng& rng, int n, int base_patch) {
  TokenSeq seq;
  seq.base_patch = base_patch;
  seq.source_width = seq.source_height = 64;
  for (int i = 0; i < n; ++i) {
    Token t;
    t.pixels.resize(static_cast<std::size_t>(base_patch) * base_patch * 3);
    for (double& v : t.pixels) v = rng.Uniform();
    t.u = rng.Uniform();
    t.v = rng.Uniform();
    t.scale = rng.Bernoulli(0.5) ? TokenScale::kFine : TokenScale::kCoarse;
    seq.tokens.push_back(std::move(t));
  }
  return seq;
}

}  // namespace

std::vector<GradSuiteEntry> RunGradientSuite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradSuiteEntry> out;
  const std::vector<int> ranking{2, 0, 3, 1};

  const nd::Tensor gt = nd::Tensor::Vector({0.02, 0.05, 0.08, 0.12, 0.2, 0.2, 0.15, 0.1, 0.05, 0.03});
  out.push_back(Check(
      "emd",
      [&](nd::Tape& tape, std::span<const nd::Var> v) {
        return EmdLoss(nd::Softmax(v[0]), tape.Constant(gt));
      },
      {RandomTensor(rng, {10})}));

  out.push_back(Check(
      "ctalign",
      [](nd::Tape&, std::span<const nd::Var> v) { return CtAlignLoss(v[0], v[1], v[2]); },
      {RandomTensor(rng, {6}), RandomTensor(rng, {6}), RandomTensor(rng, {6})}));

  out.push_back(Check(
      "bt_logistic",
      [](nd::Tape&, std::span<const nd::Var> v) {
        return nd::Scale(nd::Log(BtProb(v[0], v[1])), -1.0);
      },
      {RandomTensor(rng, {1}), RandomTensor(rng, {1})}));

  out.push_back(Check(
      "listmle",
      [&](nd::Tape&, std::span<const nd::Var> v) { return ListMleLoss(v[0], ranking); },
      {RandomTensor(rng, {4}, -2.0, 2.0)}));

  out.push_back(Check(
      "pairwise_logistic",
      [&](nd::Tape&, std::span<const nd::Var> v) { return PairwiseLogisticLoss(v[0], ranking); },
      {RandomTensor(rng, {4}, -2.0, 2.0)}));

  TrainLossConfig loss_cfg;
  loss_cfg.lambda = 0.7;
  out.push_back(Check(
      "joint_fine",
      [&](nd::Tape&, std::span<const nd::Var> v) {
        JointParts parts;
        parts.rankreg = ListMleLoss(v[0], ranking);
        parts.align = CtAlignLoss(v[1], v[2], v[3]);
        return JointLoss(1, parts, loss_cfg);
      },
      {RandomTensor(rng, {4}), RandomTensor(rng, {5}), RandomTensor(rng, {5}),
       RandomTensor(rng, {5})}));

  out.push_back(Check(
      "joint_coarse",
      [&](nd::Tape& tape, std::span<const nd::Var> v) {
        JointParts parts;
        parts.emd = EmdLoss(nd::Softmax(v[0]), tape.Constant(gt));
        return JointLoss(0, parts, loss_cfg);
      },
      {RandomTensor(rng, {10})}));

  EncoderConfig enc;
  enc.d_model = 16;
  enc.n_heads = 2;
  enc.n_layers = 1;
  enc.mlp_ratio = 2;
  enc.pos_grid = 3;
  enc.embed_dim = 4;
  enc.base_patch = 2;
  enc.seed = seed;
  ModelParams params = InitParams(enc);
  std::vector<std::string> paths;
  std::vector<nd::Tensor> values;
  for (auto& [path, t] : params.tensors) {
    for (double& v : t.mutable_values()) v += rng.Uniform(-0.3, 0.3);
    paths.push_back(path);
    values.push_back(t);
  }
  const TokenSeq seq = RandomTokens(rng, 5, enc.base_patch);
  const nd::Tensor w_dist = RandomTensor(rng, {10});
  const nd::Tensor w_embed = RandomTensor(rng, {enc.embed_dim});
  out.push_back(Check(
      "encoder",
      [&](nd::Tape& tape, std::span<const nd::Var> v) {
        BoundParams bound;
        for (std::size_t i = 0; i < paths.size(); ++i) bound.emplace(paths[i], v[i]);
        const Encoded e = Encode(enc, bound, seq, tape);
        nd::Var loss = nd::Sum(nd::Mul(e.dist, tape.Constant(w_dist)));
        loss = nd::Add(loss, nd::Sum(nd::Mul(e.embed, tape.Constant(w_embed))));
        return nd::Add(loss, nd::Scale(e.score, 0.1));
      },
      values));
  return out;
}

bool GradientSuitePasses(const std::vector<GradSuiteEntry>& entries, double tolerance) {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [&](const auto& e) {
    return e.max_rel_error < tolerance;
  });
}

}  // namespace fgaes
