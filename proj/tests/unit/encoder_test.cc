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
#include <filesystem>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "fgaes/encoder.h"
#include "fgaes/errors.h"
#include "fgaes/random.h"

using fgaes::EncoderConfig;
using fgaes::ModelParams;
using fgaes::TokenSeq;
namespace nd = fgaes::nd;

namespace {

// Produced by tests/oracles/param_count.py for the default configuration.
constexpr std::size_t kDefaultParamCount = 164650;

EncoderConfig SmallConfig() {
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.mlp_ratio = 2;
  cfg.pos_grid = 3;
  cfg.embed_dim = 4;
  cfg.base_patch = 2;
  cfg.seed = 5;
  return cfg;
}

TokenSeq RandomTokens(fgaes::Rng& rng, int n, int base_patch) {
  TokenSeq seq;
  seq.base_patch = base_patch;
  seq.source_width = seq.source_height = 64;
  for (int i = 0; i < n; ++i) {
    fgaes::Token t;
    t.pixels.resize(static_cast<std::size_t>(base_patch) * base_patch * 3);
    for (double& v : t.pixels) v = rng.Uniform();
    t.u = rng.Uniform();
    t.v = rng.Uniform();
    t.scale = rng.Bernoulli(0.5) ? fgaes::TokenScale::kFine : fgaes::TokenScale::kCoarse;
    seq.tokens.push_back(std::move(t));
  }
  return seq;
}

// Gives every parameter a random value so zero-initialized biases and
// unit gains do not hide gradient errors.
void Perturb(ModelParams& params, std::uint64_t seed) {
  fgaes::Rng rng(seed);
  for (auto& [path, t] : params.tensors) {
    for (double& v : t.mutable_values()) v += rng.Uniform(-0.3, 0.3);
  }
}

double Cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("default parameter count matches the counting oracle") {
  const ModelParams params = fgaes::InitParams(EncoderConfig{});
  CHECK(params.count() == kDefaultParamCount);
  CHECK(params.count() <= 200000);
}

TEST_CASE("initialization is seeded and follows the scale rules") {
  EncoderConfig cfg;
  cfg.seed = 12;
  const ModelParams a = fgaes::InitParams(cfg);
  CHECK(a == fgaes::InitParams(cfg));
  cfg.seed = 13;
  CHECK_FALSE(a == fgaes::InitParams(cfg));

  for (const auto& [path, t] : a.tensors) {
    if (path.ends_with(".gain")) {
      for (double v : t.values()) CHECK(v == 1.0);
    }
    if (path.ends_with(".bias") || path.ends_with(".bq") || path.ends_with(".b1")) {
      for (double v : t.values()) CHECK(v == 0.0);
    }
  }
  const nd::Tensor& w = a.at("patch_proj.weight");
  double sq = 0.0;
  for (double v : w.values()) sq += v * v;
  const double std_dev = std::sqrt(sq / static_cast<double>(w.size()));
  CHECK(std::abs(std_dev - 1.0 / std::sqrt(768.0)) < 0.002);
}

TEST_CASE("config validation") {
  EncoderConfig cfg;
  cfg.n_heads = 5;
  CHECK_THROWS(cfg.Validate());
  cfg = EncoderConfig{};
  cfg.n_layers = 0;
  CHECK_THROWS(cfg.Validate());
  cfg = EncoderConfig{};
  cfg.n_bins = 5;
  CHECK_THROWS(cfg.Validate());
}

TEST_CASE("score output invariants") {
  fgaes::Rng rng(1);
  ModelParams params = fgaes::InitParams(SmallConfig());
  Perturb(params, 2);
  for (int trial = 0; trial < 30; ++trial) {
    const TokenSeq seq = RandomTokens(rng, rng.UniformInt(1, 9), 2);
    const fgaes::ScoreOutput out = fgaes::Predict(params, seq);
    REQUIRE(out.dist.size() == 10);
    double total = 0.0, mean = 0.0;
    for (int b = 0; b < 10; ++b) {
      CHECK(out.dist[b] >= 0.0);
      total += out.dist[b];
      mean += (b + 1) * out.dist[b];
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
    CHECK(std::abs(out.score - mean) < 1e-12);
    CHECK(out.score >= 1.0);
    CHECK(out.score <= 10.0);
    CHECK(out.embed.size() == 4);
  }
}

TEST_CASE("encode is invariant to token order") {
  fgaes::Rng rng(3);
  ModelParams params = fgaes::InitParams(SmallConfig());
  Perturb(params, 4);
  const TokenSeq seq = RandomTokens(rng, 7, 2);
  TokenSeq shuffled = seq;
  rng.Shuffle(std::span<fgaes::Token>(shuffled.tokens));
  const auto a = fgaes::Predict(params, seq);
  const auto b = fgaes::Predict(params, shuffled);
  CHECK(std::abs(a.score - b.score) < 1e-9);
  for (int i = 0; i < 10; ++i) CHECK(std::abs(a.dist[i] - b.dist[i]) < 1e-9);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(a.embed[i] - b.embed[i]) < 1e-9);
}

TEST_CASE("encode is deterministic and rejects bad input") {
  fgaes::Rng rng(5);
  const ModelParams params = fgaes::InitParams(SmallConfig());
  const TokenSeq seq = RandomTokens(rng, 4, 2);
  const auto a = fgaes::Predict(params, seq);
  const auto b = fgaes::Predict(params, seq);
  CHECK(a.dist == b.dist);
  CHECK(a.embed == b.embed);
  CHECK_THROWS(fgaes::Predict(params, TokenSeq{{}, 0, 0, 2}));
  CHECK_THROWS(fgaes::Predict(params, RandomTokens(rng, 3, 4)));

  std::vector<TokenSeq> batch = {seq, RandomTokens(rng, 2, 2), seq};
  const auto outs = fgaes::PredictBatch(params, batch);
  CHECK(outs[0].dist == a.dist);
  CHECK(outs[2].dist == a.dist);
}

TEST_CASE("full-model gradient check over every parameter path") {
  fgaes::Rng rng(7);
  ModelParams params = fgaes::InitParams(SmallConfig());
  Perturb(params, 8);
  const TokenSeq seq = RandomTokens(rng, 5, 2);
  std::vector<std::string> paths;
  std::vector<nd::Tensor> values;
  for (const auto& [path, t] : params.tensors) {
    paths.push_back(path);
    values.push_back(t);
  }
  nd::Tensor wd({10}), we({4});
  for (double& v : wd.mutable_values()) v = rng.Uniform(-1, 1);
  for (double& v : we.mutable_values()) v = rng.Uniform(-1, 1);
  const EncoderConfig cfg = params.config;
  auto fn = [&](nd::Tape& tape, std::span<const nd::Var> vars) {
    fgaes::BoundParams bound;
    for (std::size_t i = 0; i < paths.size(); ++i) bound.emplace(paths[i], vars[i]);
    const fgaes::Encoded e = fgaes::Encode(cfg, bound, seq, tape);
    nd::Var loss = nd::Sum(nd::Mul(e.dist, tape.Constant(wd)));
    loss = nd::Add(loss, nd::Sum(nd::Mul(e.embed, tape.Constant(we))));
    return nd::Add(loss, nd::Scale(e.score, 0.1));
  };
  const auto result = nd::GradCheck(fn, values);
  CAPTURE(paths[result.worst_param]);
  CHECK(result.max_rel_error < 1e-5);
  CHECK(result.coordinates == params.count());
}

TEST_CASE("text embeddings") {
  const std::vector<double> unit = {0.0, 1.0, 0.0, 0.0};
  CHECK(fgaes::TextEmbedPrecomputed(unit, 4) == unit);
  const std::vector<double> scaled = {3.0, 0.0, 4.0, 0.0};
  const auto n = fgaes::TextEmbedPrecomputed(scaled, 4);
  CHECK(std::abs(n[0] - 0.6) < 1e-15);
  CHECK(std::abs(n[2] - 0.8) < 1e-15);
  CHECK_THROWS(fgaes::TextEmbedPrecomputed(scaled, 5));

  const auto a = fgaes::TextEmbed("far more refined", 32);
  CHECK(a == fgaes::TextEmbed("far more refined", 32));
  const auto b = fgaes::TextEmbed("lacks the depth", 32);
  double norm = 0.0;
  for (double v : a) norm += v * v;
  CHECK(std::abs(norm - 1.0) < 1e-12);
  CHECK(Cosine(a, b) < 0.99);
  CHECK_THROWS(fgaes::TextEmbed("", 32));
}

TEST_CASE("checkpoint round-trip is exact") {
  ModelParams params = fgaes::InitParams(SmallConfig());
  Perturb(params, 9);
  const std::string json = fgaes::CheckpointToJson(params);
  CHECK(fgaes::CheckpointFromJson(json) == params);

  const auto path = std::filesystem::temp_directory_path() / "fgaes_ckpt_test.json";
  fgaes::SaveCheckpoint(params, path);
  CHECK(fgaes::LoadCheckpoint(path) == params);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(fgaes::CheckpointFromJson("{}"), fgaes::SchemaError);
  CHECK_THROWS_AS(fgaes::CheckpointFromJson("not json"), fgaes::SchemaError);
  CHECK_THROWS_AS(fgaes::LoadCheckpoint("/nonexistent/ckpt.json"),
                  fgaes::MissingFileError);
}
