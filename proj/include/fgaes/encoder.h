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

// Tiny pre-norm transformer over mixed-resolution token sequences.
//
// Each token is a flattened base_patch x base_patch RGB patch. It is linearly
// projected, offset by a bilinearly interpolated position embedding, and
// processed together with a learned CLS vector. The CLS output feeds a
// 10-bin score distribution head and an embedding head used for text
// alignment. The scalar score is the distribution mean over bins 1..10.

#ifndef FGAES_ENCODER_H_
#define FGAES_ENCODER_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fgaes/difftoken.h"
#include "fgaes/ndiff.h"

namespace fgaes {

struct EncoderConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int mlp_ratio = 4;
  int pos_grid = 14;
  int n_bins = 10;
  int embed_dim = 32;
  int base_patch = 16;
  std::uint64_t seed = 0;

  int token_dim() const { return base_patch * base_patch * 3; }
  // Throws std::invalid_argument on a violated invariant.
  void Validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Named parameter tensors. Paths are stable across runs and builds.
struct ModelParams {
  EncoderConfig config;
  std::map<std::string, nd::Tensor> tensors;

  const nd::Tensor& at(const std::string& path) const;
  nd::Tensor& at(const std::string& path);
  std::size_t count() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

ModelParams InitParams(const EncoderConfig& cfg);

// Parameters placed on a tape, either as leaves (trainable) or constants.
using BoundParams = std::map<std::string, nd::Var>;
BoundParams BindParams(const ModelParams& params, nd::Tape& tape,
                       bool trainable);

struct ScoreOutput {
  std::vector<double> dist;
  double score = 0.0;
  std::vector<double> embed;
};

struct Encoded {
  nd::Var cls;    // {d_model}
  nd::Var dist;   // {n_bins}
  nd::Var score;  // {1}
  nd::Var embed;  // {embed_dim}

  ScoreOutput output() const;
};

// Stacks token pixels into a {T, token_dim} matrix.
nd::Tensor TokenMatrix(const TokenSeq& seq);

Encoded Encode(const EncoderConfig& cfg, const BoundParams& params,
               const TokenSeq& seq, nd::Tape& tape);

// Inference without gradients.
ScoreOutput Predict(const ModelParams& params, const TokenSeq& seq);
std::vector<ScoreOutput> PredictBatch(const ModelParams& params,
                                      std::span<const TokenSeq> seqs);

// Precomputed text embeddings are L2-normalized and returned.
std::vector<double> TextEmbedPrecomputed(std::span<const double> v,
                                         int embed_dim);
// Template text maps through a hashed character-trigram bag and a fixed
// seeded Gaussian projection, then L2 normalization.
std::vector<double> TextEmbed(std::string_view text, int embed_dim,
                              std::uint64_t seed = 0);

// Checkpoints are JSON documents holding the config and every parameter
// with 17 significant digits, so loading reproduces values bit-exactly.
std::string CheckpointToJson(const ModelParams& params);
ModelParams CheckpointFromJson(std::string_view json);
void SaveCheckpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams LoadCheckpoint(const std::filesystem::path& path);

}  // namespace fgaes

#endif  // FGAES_ENCODER_H_
