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

// Two-stage training: coarse EMD pretraining followed by joint learning that
// strictly alternates fine (rank + text alignment) and coarse (EMD) steps,
// with SGD momentum over one shared velocity buffer.

#ifndef FGAES_TRAINER_H_
#define FGAES_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fgaes/data.h"
#include "fgaes/difftoken.h"
#include "fgaes/encoder.h"
#include "fgaes/losses.h"
#include "fgaes/metrics.h"

namespace fgaes {

struct TrainConfig {
  double lr = 2e-5;
  double weight_decay = 5e-5;  // joint stage only
  int coarse_batch = 128;
  int fine_batch_series = 11;  // about 64 images at the mean series length
  int pretrain_epochs = 3;
  int joint_epochs = 7;
  // Overrides joint_epochs with a fixed number of alternating steps.
  std::optional<int> joint_steps;
  double momentum_fine = 0.615;
  double momentum_coarse = 0.8;
  double lambda = 10.0;
  double emd_r = 2.0;
  // Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t text_seed = 0;
  // Worker threads for per-series forward/backward. Results do not depend
  // on the thread count.
  int threads = 1;
  DiffTokenConfig token;
  // Architecture for freshly initialized models.
  EncoderConfig encoder;

  void Validate() const;

  // Small-data overrides used by the synthetic benchmark.
  static TrainConfig DeskScale();
};

// Overrides by field name; tokenizer and encoder fields take the prefixes
// "token." and "encoder.". Unknown keys and malformed values throw
// std::invalid_argument.
void ApplyConfigOverrides(TrainConfig& cfg, const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> ConfigToMap(const TrainConfig& cfg);
// Parses "key=value" lines; blank lines and '#' comments are skipped.
std::map<std::string, std::string> ParseFlatConfig(const std::string& text);

struct Toggles {
  bool no_fine = false;
  bool no_coarse = false;
  bool sequential = false;
  bool no_difftoken = false;
  bool no_ctalign = false;
  bool no_rankreg = false;

  // Throws std::invalid_argument on an unknown name.
  static Toggles Parse(std::span<const std::string> names);
  std::vector<std::string> Names() const;
  std::string Label() const;  // "full" or names joined by '+'
};

struct CoarseExample {
  TokenSeq tokens;  // plain tokenization
  std::vector<double> dist;
  ImageBuf image;
};

struct TextPair {
  int i = 0;
  int j = 0;
  std::vector<double> embedding;
};

struct FineSeries {
  std::string series_id;
  std::string source;
  std::vector<ImageBuf> images;
  std::vector<int> ranking;  // best first, over all images
  std::vector<TextPair> texts;
};

std::vector<CoarseExample> BuildCoarseDataset(std::span<const CoarseRecord> records,
                                              const std::filesystem::path& manifest,
                                              const DiffTokenConfig& token);
std::vector<FineSeries> BuildFineDataset(std::span<const SeriesRecord> records,
                                         const std::filesystem::path& manifest,
                                         int embed_dim, std::uint64_t text_seed);

struct StepLog {
  int step = 0;
  std::string stage;  // "pretrain" or "joint"
  std::string phase;  // "fine" or "coarse"
  double loss = 0.0;
  std::optional<double> align;
  std::optional<double> rankreg;
  std::optional<double> emd;

  std::string ToJsonLine() const;
};

using GradMap = std::map<std::string, nd::Tensor>;

struct StepResult {
  StepLog log;
  GradMap grads;
};

// Gradient of the mean fine loss over `batch`. References and the text
// pair are drawn from `step_seed`.
StepResult FineStep(const ModelParams& params, std::span<const FineSeries* const> batch,
                    const TrainConfig& cfg, const Toggles& toggles, std::uint64_t step_seed);
// Gradient of the mean EMD over `batch`.
StepResult CoarseStep(const ModelParams& params, std::span<const CoarseExample* const> batch,
                      const TrainConfig& cfg);

// SGD with momentum on a single velocity buffer: v = mu v + g;
// p -= lr (v + wd p).
class MomentumSgd {
 public:
  void Apply(ModelParams& params, const GradMap& grads, double lr, double momentum,
             double weight_decay);
  const GradMap& velocity() const { return velocity_; }

 private:
  GradMap velocity_;
};

struct TrainHooks {
  // Receives every step record.
  std::function<void(const StepLog&)> on_step;
  // Called after each epoch with the stage name and 1-based epoch index.
  std::function<void(const std::string&, int, const ModelParams&)> on_epoch;
};

struct PretrainResult {
  std::vector<double> epoch_loss;  // mean EMD per epoch
  int steps = 0;
};

PretrainResult PretrainCoarse(ModelParams& params, std::span<const CoarseExample> coarse,
                              const TrainConfig& cfg, const TrainHooks& hooks = {});

struct JointResult {
  std::vector<int> deltas;  // 1 for fine steps, 0 for coarse steps
  int steps = 0;
};

// Joint stage. Errors if a fine series has fewer than two images or a
// required dataset is empty.
JointResult JointTrain(ModelParams& params, std::span<const CoarseExample> coarse,
                       std::span<const FineSeries> fine, const TrainConfig& cfg,
                       const Toggles& toggles = {}, const TrainHooks& hooks = {},
                       int first_step = 0);

// Pretraining (unless no_coarse) followed by the joint stage.
struct PipelineResult {
  PretrainResult pretrain;
  JointResult joint;
};
PipelineResult TrainPipeline(ModelParams& params, std::span<const CoarseExample> coarse,
                             std::span<const FineSeries> fine, const TrainConfig& cfg,
                             const Toggles& toggles = {}, const TrainHooks& hooks = {});

// Image scores for a series: with DiffToken each image is scored against
// every other series member as reference and the scores are averaged.
std::vector<double> ScoreSeries(const ModelParams& params, const FineSeries& series,
                                const DiffTokenConfig& token, bool difftoken);
std::vector<double> ScoreCoarse(const ModelParams& params, std::span<const CoarseExample> coarse);

EvalReport Evaluate(const ModelParams& params, std::span<const FineSeries> fine,
                    std::span<const CoarseExample> coarse, const DiffTokenConfig& token,
                    bool difftoken, LengthWeight weight = LengthWeight::kImages);

struct AblationRow {
  std::string label;
  EvalReport report;
  double seconds = 0.0;
};

// One pipeline run per toggle set from the same initial parameters.
std::vector<AblationRow> AblationMatrix(const ModelParams& init,
                                        std::span<const CoarseExample> coarse_train,
                                        std::span<const FineSeries> fine_train,
                                        std::span<const CoarseExample> coarse_test,
                                        std::span<const FineSeries> fine_test,
                                        const TrainConfig& cfg,
                                        std::span<const Toggles> runs);
std::string AblationTable(std::span<const AblationRow> rows);

}  // namespace fgaes

#endif  // FGAES_TRAINER_H_
