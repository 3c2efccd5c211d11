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

// Manifests, dataset splits and synthetic benchmark generation.
//
// Manifests are JSONL files with one record per line. Image paths inside a
// manifest are resolved relative to the manifest's directory.
//
//   series.jsonl  {series_id, source, images[], gt_ranking[],
//                  pair_probs[[i,j,p]], texts[[i,j,ref]],
//                  boxes?[[x0,y0,x1,y1]], t2i_scores?[]}
//   coarse.jsonl  {image, dist[10]}
//   votes.jsonl   {series_id, i, j, votes_i, votes_j, votes_tie}
//
// A text ref is either the comparative sentence itself or "@path" naming a
// JSON array holding a precomputed embedding.

#ifndef FGAES_DATA_H_
#define FGAES_DATA_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fgaes/calibrate.h"
#include "fgaes/imaging.h"

namespace fgaes {

enum class Source { kNatural, kAigc, kCropping };
const char* SourceName(Source s);
Source ParseSource(const std::string& name);

struct TextRef {
  int i = 0;  // preferred image
  int j = 0;
  std::string ref;
  friend bool operator==(const TextRef&, const TextRef&) = default;
};

struct SeriesRecord {
  std::string series_id;
  Source source = Source::kNatural;
  std::vector<std::string> images;
  std::vector<int> gt_ranking;  // best first
  std::vector<PairProb> pair_probs;
  std::vector<TextRef> texts;
  std::optional<std::vector<Box>> boxes;
  std::optional<std::vector<double>> t2i_scores;

  int size() const { return static_cast<int>(images.size()); }
  // Throws SchemaError naming the offending field.
  void Validate() const;
  friend bool operator==(const SeriesRecord&, const SeriesRecord&) = default;
};

struct CoarseRecord {
  std::string image;
  std::vector<double> dist;  // 10 bins

  double mean() const;
  void Validate() const;
  friend bool operator==(const CoarseRecord&, const CoarseRecord&) = default;
};

struct LoadOptions {
  // Reject records whose image files do not exist.
  bool check_images = true;
};

// Loaders throw SchemaError ("<file>:<line>: field '<name>': ...") and
// MissingFileError. Warnings (e.g. an empty file) are appended to
// `warnings` when given.
std::vector<SeriesRecord> LoadSeriesManifest(const std::filesystem::path& path,
                                             const LoadOptions& opts = {},
                                             std::vector<std::string>* warnings = nullptr);
std::vector<CoarseRecord> LoadCoarseManifest(const std::filesystem::path& path,
                                             const LoadOptions& opts = {},
                                             std::vector<std::string>* warnings = nullptr);
std::vector<PairVoteRecord> LoadVotesManifest(const std::filesystem::path& path,
                                              std::vector<std::string>* warnings = nullptr);

// Canonical single-line serialization used by the writers.
std::string SeriesToJsonLine(const SeriesRecord& r);
std::string CoarseToJsonLine(const CoarseRecord& r);
std::string VotesToJsonLine(const PairVoteRecord& r);

void WriteSeriesManifest(std::span<const SeriesRecord> records,
                         const std::filesystem::path& path);
void WriteCoarseManifest(std::span<const CoarseRecord> records,
                         const std::filesystem::path& path);
void WriteVotesManifest(std::span<const PairVoteRecord> records,
                        const std::filesystem::path& path);

std::filesystem::path ResolvePath(const std::filesystem::path& manifest,
                                  const std::string& relative);

// Loads a text ref as an embedding: "@path" refs read a JSON array, other
// refs go through the hashed template embedder.
std::vector<double> LoadTextEmbedding(const std::filesystem::path& manifest,
                                      const std::string& ref, int embed_dim,
                                      std::uint64_t seed);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Stratified 80/10/10 split over group labels: per label, a seeded shuffle
// assigns floor(10%) to val, floor(10%) to test and the rest to train.
// Labels with fewer than 3 members go entirely to train with a warning.
SplitIndices Split811(std::span<const std::string> labels, std::uint64_t seed,
                      std::vector<std::string>* warnings = nullptr);

template <typename T>
struct Split {
  std::vector<T> train, val, test;
};

Split<SeriesRecord> SplitSeries(std::span<const SeriesRecord> records,
                                std::uint64_t seed,
                                std::vector<std::string>* warnings = nullptr);
Split<CoarseRecord> SplitCoarse(std::span<const CoarseRecord> records,
                                std::uint64_t seed);

enum class Degradation {
  kGaussianBlur,
  kAdditiveNoise,
  kExposureShift,
  kSaturationLoss,
  kCropOffCenter,
};
const char* DegradationName(Degradation d);
Degradation ParseDegradation(const std::string& name);
std::vector<Degradation> AllDegradations();

// Procedural base image: smooth gradient background with sharp saturated
// shapes and a striped texture.
ImageBuf MakeBaseImage(std::uint64_t seed, int width, int height);

// Applies one degradation at severity s in [0, 1]; s == 0 is the identity.
// `seed` drives the noise pattern.
ImageBuf Degrade(const ImageBuf& base, Degradation d, double s, std::uint64_t seed);

// Crop window used by kCropOffCenter at severity s, in pixel coordinates.
Box CropWindow(int width, int height, double s);

// Ten-bin score distribution of a Gaussian over bins 1..10: each bin takes
// the mass of its unit interval, the tails fold into the end bins.
std::vector<double> DiscretizedGaussian(double center, double sigma);

// DiscretizedGaussian with its center shifted so the bin mean equals
// `target_mean`. Targets near the end bins pull the center past them; the
// mean approaches 1 or 10 only in the limit, so those targets are matched to
// within 1e-9.
std::vector<double> MeanMatchedGaussian(double target_mean, double sigma);

// Comparative sentence explaining why the less degraded image is better.
std::string ComparativeText(Degradation d, int variant);

struct SynthFineConfig {
  std::uint64_t seed = 0;
  int n_series = 200;
  int min_len = 2;
  int max_len = 10;
  int image_size = 64;
  std::vector<Degradation> menu = AllDegradations();
};

struct SynthFineSeries {
  SeriesRecord record;
  std::vector<ImageBuf> images;     // in record order
  std::vector<double> severities;   // in record order
  Degradation degradation = Degradation::kGaussianBlur;
};

// Severities are k / (n - 1) for k = 0..n-1; images are stored in a seeded
// shuffled order and gt_ranking lists them by ascending severity.
std::vector<SynthFineSeries> SynthFine(const SynthFineConfig& cfg);

// Each sample degrades one of `n_scenes` reference scenes. Ground truth is
// MeanMatchedGaussian(9 - 8 s, sigma).
struct SynthCoarseConfig {
  std::uint64_t seed = 0;
  int n = 500;
  int n_scenes = 10;
  int image_size = 64;
  double sigma = 1.2;
  std::vector<Degradation> menu = AllDegradations();
};

struct SynthCoarseSample {
  CoarseRecord record;
  ImageBuf image;
  double severity = 0.0;
  Degradation degradation = Degradation::kGaussianBlur;
  int scene = 0;
};

std::vector<SynthCoarseSample> SynthCoarse(const SynthCoarseConfig& cfg);

// Writes images under out_dir/images/... and returns records with paths
// relative to out_dir. Files are written as 8-bit PNG.
std::vector<SeriesRecord> WriteSynthFine(std::span<const SynthFineSeries> series,
                                         const std::filesystem::path& out_dir);
std::vector<CoarseRecord> WriteSynthCoarse(std::span<const SynthCoarseSample> samples,
                                           const std::filesystem::path& out_dir);

// Lowercase hex SHA-256.
std::string Sha256Hex(std::span<const std::uint8_t> bytes);
std::string Sha256File(const std::filesystem::path& path);

}  // namespace fgaes

#endif  // FGAES_DATA_H_
