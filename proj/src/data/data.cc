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

#include "fgaes/data.h"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "fgaes/encoder.h"
#include "fgaes/errors.h"
#include "fgaes/losses.h"
#include "fgaes/random.h"
#include "json.hpp"

namespace fgaes {
namespace {

using json = nlohmann::json;

// Pairs at least this far from 0.5 must agree with the ranking.
constexpr double kDecisiveMargin = 0.15;

[[noreturn]] void Fail(const std::string& field, const std::string& msg) {
  throw SchemaError("field '" + field + "': " + msg);
}

void CheckIndex(int i, int n, const std::string& field) {
  if (i < 0 || i >= n) {
    Fail(field, "index " + std::to_string(i) + " outside [0, " + std::to_string(n) + ")");
  }
}

std::uint64_t HashLabel(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
T Field(const json& j, const char* name) {
  if (!j.contains(name)) Fail(name, "missing");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    Fail(name, std::string("wrong type: ") + e.what());
  }
}

SeriesRecord SeriesFromJson(const json& j) {
  SeriesRecord r;
  r.series_id = Field<std::string>(j, "series_id");
  try {
    r.source = ParseSource(Field<std::string>(j, "source"));
  } catch (const std::invalid_argument& e) {
    Fail("source", e.what());
  }
  r.images = Field<std::vector<std::string>>(j, "images");
  r.gt_ranking = Field<std::vector<int>>(j, "gt_ranking");
  for (const json& p : Field<json>(j, "pair_probs")) {
    if (!p.is_array() || p.size() != 3) Fail("pair_probs", "entries must be [i, j, p]");
    try {
      r.pair_probs.push_back({p[0].get<int>(), p[1].get<int>(), p[2].get<double>()});
    } catch (const json::exception& e) {
      Fail("pair_probs", e.what());
    }
  }
  for (const json& t : Field<json>(j, "texts")) {
    if (!t.is_array() || t.size() != 3) Fail("texts", "entries must be [i, j, ref]");
    try {
      r.texts.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<std::string>()});
    } catch (const json::exception& e) {
      Fail("texts", e.what());
    }
  }
  if (j.contains("boxes")) {
    std::vector<Box> boxes;
    for (const json& b : j.at("boxes")) {
      if (!b.is_array() || b.size() != 4) Fail("boxes", "entries must be [x0, y0, x1, y1]");
      try {
        boxes.push_back(Box::Make(b[0].get<double>(), b[1].get<double>(),
                                  b[2].get<double>(), b[3].get<double>()));
      } catch (const std::exception& e) {
        Fail("boxes", e.what());
      }
    }
    r.boxes = std::move(boxes);
  }
  if (j.contains("t2i_scores")) r.t2i_scores = Field<std::vector<double>>(j, "t2i_scores");
  return r;
}

CoarseRecord CoarseFromJson(const json& j) {
  return CoarseRecord{Field<std::string>(j, "image"),
                      Field<std::vector<double>>(j, "dist")};
}

PairVoteRecord VotesFromJson(const json& j) {
  PairVoteRecord v{Field<std::string>(j, "series_id"), Field<int>(j, "i"),
                   Field<int>(j, "j"), Field<int>(j, "votes_i"),
                   Field<int>(j, "votes_j"), Field<int>(j, "votes_tie")};
  if (v.votes_i < 0 || v.votes_j < 0 || v.votes_tie < 0) Fail("votes_i", "negative count");
  if (v.total() < 1) Fail("votes_tie", "pair has no votes");
  if (v.i < 0 || v.j < 0 || v.i == v.j) Fail("i", "invalid image pair");
  return v;
}

// Parses every non-empty line with `parse`, attaching file and line.
template <typename T, typename Parse>
std::vector<T> LoadJsonl(const std::filesystem::path& path, Parse parse,
                         std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw MissingFileError(path);
  std::vector<T> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) +
                        ": invalid JSON: " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty() && warnings) warnings->push_back(path.string() + ": empty manifest");
  return out;
}

void CheckImages(const std::filesystem::path& manifest,
                 const std::vector<std::string>& images, const char* field) {
  for (const std::string& img : images) {
    if (!std::filesystem::exists(ResolvePath(manifest, img))) {
      Fail(field, "dangling image path " + img);
    }
  }
}

template <typename T, typename ToLine>
void WriteJsonl(std::span<const T> records, const std::filesystem::path& path,
                ToLine to_line) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const T& r : records) out << to_line(r) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// Bilinear sample at continuous pixel coordinates, edge clamped.
float Sample(const ImageBuf& img, double x, double y, int c) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  const double top = (1 - fx) * img.clamped(x0, y0, c) + fx * img.clamped(x0 + 1, y0, c);
  const double bot =
      (1 - fx) * img.clamped(x0, y0 + 1, c) + fx * img.clamped(x0 + 1, y0 + 1, c);
  return static_cast<float>((1 - fy) * top + fy * bot);
}

ImageBuf GaussianBlur(const ImageBuf& img, double sigma) {
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    total += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  }
  for (double& k : kernel) k /= total;
  const int w = img.width(), h = img.height();
  ImageBuf tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.clamped(x + k, y, c);
        tmp.at(x, y, c) = static_cast<float>(acc);
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.clamped(x, y + k, c);
        out.at(x, y, c) = static_cast<float>(acc);
      }
  return out;
}

// Fully saturated color with the given hue in [0, 1) and value.
std::array<double, 3> Hue(double h, double v) {
  const double k[3] = {5, 3, 1};
  std::array<double, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    const double t = std::fmod(k[c] + h * 6, 6.0);
    rgb[c] = v - v * std::max(0.0, std::min({t, 4 - t, 1.0}));
  }
  return rgb;
}

Degradation PickDegradation(Rng& rng, const std::vector<Degradation>& menu,
                            Source source) {
  const bool has_crop = std::find(menu.begin(), menu.end(),
                                  Degradation::kCropOffCenter) != menu.end();
  if (source == Source::kCropping && has_crop) return Degradation::kCropOffCenter;
  std::vector<Degradation> others;
  for (Degradation d : menu) {
    if (d != Degradation::kCropOffCenter) others.push_back(d);
  }
  if (others.empty()) others = menu;
  return others[rng.Below(others.size())];
}

std::string PadIndex(int i, int width) {
  std::string s = std::to_string(i);
  return std::string(std::max(0, width - static_cast<int>(s.size())), '0') + s;
}

}  // namespace

const char* SourceName(Source s) {
  switch (s) {
    case Source::kNatural: return "natural";
    case Source::kAigc: return "aigc";
    case Source::kCropping: return "cropping";
  }
  return "natural";
}

Source ParseSource(const std::string& name) {
  if (name == "natural") return Source::kNatural;
  if (name == "aigc") return Source::kAigc;
  if (name == "cropping") return Source::kCropping;
  throw std::invalid_argument("unknown source '" + name + "'");
}

void SeriesRecord::Validate() const {
  const int n = size();
  if (series_id.empty()) Fail("series_id", "empty");
  if (n < 2 || n > 10) Fail("images", "series length " + std::to_string(n) + " outside [2, 10]");
  if (static_cast<int>(gt_ranking.size()) != n) {
    Fail("gt_ranking", "length " + std::to_string(gt_ranking.size()) +
                           " differs from image count " + std::to_string(n));
  }
  std::vector<int> pos(n, -1);
  for (int k = 0; k < n; ++k) {
    CheckIndex(gt_ranking[k], n, "gt_ranking");
    if (pos[gt_ranking[k]] >= 0) Fail("gt_ranking", "not a permutation");
    pos[gt_ranking[k]] = k;
  }
  for (const PairProb& pp : pair_probs) {
    CheckIndex(pp.i, n, "pair_probs");
    CheckIndex(pp.j, n, "pair_probs");
    if (pp.i == pp.j) Fail("pair_probs", "self pair");
    if (!(pp.p >= 0.0 && pp.p <= 1.0)) Fail("pair_probs", "probability outside [0, 1]");
    if (std::abs(pp.p - 0.5) >= kDecisiveMargin &&
        (pos[pp.i] < pos[pp.j]) != (pp.p > 0.5)) {
      Fail("pair_probs", "pair (" + std::to_string(pp.i) + ", " + std::to_string(pp.j) +
                             ") contradicts gt_ranking");
    }
  }
  for (const TextRef& t : texts) {
    CheckIndex(t.i, n, "texts");
    CheckIndex(t.j, n, "texts");
    if (t.i == t.j) Fail("texts", "self pair");
    if (t.ref.empty()) Fail("texts", "empty ref");
  }
  if (boxes && static_cast<int>(boxes->size()) != n) Fail("boxes", "one box per image required");
  if (t2i_scores) {
    if (static_cast<int>(t2i_scores->size()) != n) Fail("t2i_scores", "one score per image required");
    for (double s : *t2i_scores) {
      if (!std::isfinite(s)) Fail("t2i_scores", "non-finite score");
    }
  }
}

double CoarseRecord::mean() const {
  double m = 0.0;
  for (std::size_t b = 0; b < dist.size(); ++b) m += (b + 1.0) * dist[b];
  return m;
}

void CoarseRecord::Validate() const {
  if (image.empty()) Fail("image", "empty");
  try {
    ValidateScoreDist(dist);
  } catch (const std::invalid_argument& e) {
    Fail("dist", e.what());
  }
}

std::vector<SeriesRecord> LoadSeriesManifest(const std::filesystem::path& path,
                                             const LoadOptions& opts,
                                             std::vector<std::string>* warnings) {
  return LoadJsonl<SeriesRecord>(
      path,
      [&](const json& j) {
        SeriesRecord r = SeriesFromJson(j);
        r.Validate();
        if (opts.check_images) CheckImages(path, r.images, "images");
        return r;
      },
      warnings);
}

std::vector<CoarseRecord> LoadCoarseManifest(const std::filesystem::path& path,
                                             const LoadOptions& opts,
                                             std::vector<std::string>* warnings) {
  return LoadJsonl<CoarseRecord>(
      path,
      [&](const json& j) {
        CoarseRecord r = CoarseFromJson(j);
        r.Validate();
        if (opts.check_images) CheckImages(path, {r.image}, "image");
        return r;
      },
      warnings);
}

std::vector<PairVoteRecord> LoadVotesManifest(const std::filesystem::path& path,
                                              std::vector<std::string>* warnings) {
  return LoadJsonl<PairVoteRecord>(path, VotesFromJson, warnings);
}

std::string SeriesToJsonLine(const SeriesRecord& r) {
  json j;
  j["series_id"] = r.series_id;
  j["source"] = SourceName(r.source);
  j["images"] = r.images;
  j["gt_ranking"] = r.gt_ranking;
  json probs = json::array();
  for (const PairProb& pp : r.pair_probs) probs.push_back(json::array({pp.i, pp.j, pp.p}));
  j["pair_probs"] = std::move(probs);
  json texts = json::array();
  for (const TextRef& t : r.texts) texts.push_back(json::array({t.i, t.j, t.ref}));
  j["texts"] = std::move(texts);
  if (r.boxes) {
    json boxes = json::array();
    for (const Box& b : *r.boxes) boxes.push_back(json::array({b.x0, b.y0, b.x1, b.y1}));
    j["boxes"] = std::move(boxes);
  }
  if (r.t2i_scores) j["t2i_scores"] = *r.t2i_scores;
  return j.dump();
}

std::string CoarseToJsonLine(const CoarseRecord& r) {
  return json{{"image", r.image}, {"dist", r.dist}}.dump();
}

std::string VotesToJsonLine(const PairVoteRecord& r) {
  return json{{"series_id", r.series_id}, {"i", r.i},
              {"j", r.j},                 {"votes_i", r.votes_i},
              {"votes_j", r.votes_j},     {"votes_tie", r.votes_tie}}
      .dump();
}

void WriteSeriesManifest(std::span<const SeriesRecord> records,
                         const std::filesystem::path& path) {
  WriteJsonl(records, path, SeriesToJsonLine);
}

void WriteCoarseManifest(std::span<const CoarseRecord> records,
                         const std::filesystem::path& path) {
  WriteJsonl(records, path, CoarseToJsonLine);
}

void WriteVotesManifest(std::span<const PairVoteRecord> records,
                        const std::filesystem::path& path) {
  WriteJsonl(records, path, VotesToJsonLine);
}

std::filesystem::path ResolvePath(const std::filesystem::path& manifest,
                                  const std::string& relative) {
  const std::filesystem::path p(relative);
  if (p.is_absolute()) return p;
  return manifest.parent_path() / p;
}

std::vector<double> LoadTextEmbedding(const std::filesystem::path& manifest,
                                      const std::string& ref, int embed_dim,
                                      std::uint64_t seed) {
  if (!ref.starts_with("@")) return TextEmbed(ref, embed_dim, seed);
  const auto path = ResolvePath(manifest, ref.substr(1));
  std::ifstream in(path);
  if (!in) throw MissingFileError(path);
  try {
    const auto values = json::parse(in).get<std::vector<double>>();
    return TextEmbedPrecomputed(values, embed_dim);
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

SplitIndices Split811(std::span<const std::string> labels, std::uint64_t seed,
                      std::vector<std::string>* warnings) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t k = 0; k < labels.size(); ++k) groups[labels[k]].push_back(k);
  SplitIndices out;
  for (auto& [label, idx] : groups) {
    if (idx.size() < 3) {
      if (warnings) {
        warnings->push_back("source '" + label + "' has " + std::to_string(idx.size()) +
                            " series; all assigned to train");
      }
      out.train.insert(out.train.end(), idx.begin(), idx.end());
      continue;
    }
    Rng rng(MixSeed(seed, HashLabel(label)));
    rng.Shuffle(std::span<std::size_t>(idx));
    const std::size_t tenth = idx.size() / 10;
    out.val.insert(out.val.end(), idx.begin(), idx.begin() + tenth);
    out.test.insert(out.test.end(), idx.begin() + tenth, idx.begin() + 2 * tenth);
    out.train.insert(out.train.end(), idx.begin() + 2 * tenth, idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Split<SeriesRecord> SplitSeries(std::span<const SeriesRecord> records,
                                std::uint64_t seed, std::vector<std::string>* warnings) {
  std::vector<std::string> labels;
  for (const SeriesRecord& r : records) labels.push_back(SourceName(r.source));
  const SplitIndices idx = Split811(labels, seed, warnings);
  Split<SeriesRecord> out;
  for (std::size_t k : idx.train) out.train.push_back(records[k]);
  for (std::size_t k : idx.val) out.val.push_back(records[k]);
  for (std::size_t k : idx.test) out.test.push_back(records[k]);
  return out;
}

Split<CoarseRecord> SplitCoarse(std::span<const CoarseRecord> records,
                                std::uint64_t seed) {
  const std::vector<std::string> labels(records.size(), "coarse");
  const SplitIndices idx = Split811(labels, seed);
  Split<CoarseRecord> out;
  for (std::size_t k : idx.train) out.train.push_back(records[k]);
  for (std::size_t k : idx.val) out.val.push_back(records[k]);
  for (std::size_t k : idx.test) out.test.push_back(records[k]);
  return out;
}

const char* DegradationName(Degradation d) {
  switch (d) {
    case Degradation::kGaussianBlur: return "gaussian_blur";
    case Degradation::kAdditiveNoise: return "additive_noise";
    case Degradation::kExposureShift: return "exposure_shift";
    case Degradation::kSaturationLoss: return "saturation_loss";
    case Degradation::kCropOffCenter: return "crop_off_center";
  }
  return "gaussian_blur";
}

Degradation ParseDegradation(const std::string& name) {
  for (Degradation d : AllDegradations()) {
    if (name == DegradationName(d)) return d;
  }
  throw std::invalid_argument("unknown degradation '" + name + "'");
}

std::vector<Degradation> AllDegradations() {
  return {Degradation::kGaussianBlur, Degradation::kAdditiveNoise,
          Degradation::kExposureShift, Degradation::kSaturationLoss,
          Degradation::kCropOffCenter};
}

ImageBuf MakeBaseImage(std::uint64_t seed, int width, int height) {
  Rng rng(seed);
  ImageBuf img(width, height);
  const auto c0 = Hue(rng.Uniform(), rng.Uniform(0.25, 0.55));
  const auto c1 = Hue(rng.Uniform(), rng.Uniform(0.35, 0.65));
  const double angle = rng.Uniform(0, 2 * std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double t = 0.5 + 0.5 * ((x / (width - 1.0) - 0.5) * dx +
                                    (y / (height - 1.0) - 0.5) * dy);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(c0[c] + t * (c1[c] - c0[c]));
    }
  }
  const int shapes = rng.UniformInt(3, 6);
  for (int s = 0; s < shapes; ++s) {
    const auto color = Hue(rng.Uniform(), rng.Uniform(0.75, 1.0));
    const double cx = rng.Uniform(0, width), cy = rng.Uniform(0, height);
    const double r = rng.Uniform(0.08, 0.22) * std::min(width, height);
    const bool circle = rng.Bernoulli(0.5);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double ux = x + 0.5 - cx, uy = y + 0.5 - cy;
        const bool inside = circle ? ux * ux + uy * uy <= r * r
                                   : std::abs(ux) <= r && std::abs(uy) <= 0.7 * r;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(color[c]);
      }
    }
  }
  // Striped patch carrying high-frequency detail. Stripes are 2 px wide and
  // start on even coordinates so they survive 2x box downsampling.
  const int pw = std::max(4, width / 4), ph = std::max(4, height / 4);
  const int px = 2 * rng.UniformInt(0, (width - pw) / 2);
  const int py = 2 * rng.UniformInt(0, (height - ph) / 2);
  const auto stripe = Hue(rng.Uniform(), 1.0);
  const bool vertical = rng.Bernoulli(0.5);
  for (int y = py; y < py + ph; ++y) {
    for (int x = px; x < px + pw; ++x) {
      const bool on = ((vertical ? x : y) / 2) % 2 == 0;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = on ? static_cast<float>(stripe[c]) : 0.05f;
    }
  }
  // Shared 2 px checker texture. Every scene carries the same reference
  // frequency, which makes blur, noise and zoom visible in every patch.
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const float gain = ((x / 2 + y / 2) % 2 == 0) ? 1.12f : 0.88f;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = std::min(1.0f, img.at(x, y, c) * gain);
    }
  }
  Quantize8(img);
  return img;
}

Box CropWindow(int width, int height, double s) {
  const double z = 1.0 - 0.5 * s;
  const double w = width * z, h = height * z;
  const double x0 = (width - w) * 0.5 * (1.0 - s);
  const double y0 = (height - h) * 0.5 * (1.0 - s);
  return Box::Make(x0, y0, x0 + w, y0 + h);
}

ImageBuf Degrade(const ImageBuf& base, Degradation d, double s, std::uint64_t seed) {
  if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("severity outside [0, 1]");
  if (s == 0.0) return base;
  const int w = base.width(), h = base.height();
  ImageBuf out = base;
  auto clip = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
  switch (d) {
    case Degradation::kGaussianBlur:
      out = GaussianBlur(base, 2.5 * s);
      break;
    case Degradation::kAdditiveNoise: {
      Rng rng(seed);
      for (float& v : out.mutable_pixels()) v = clip(v + 0.35 * s * rng.Normal());
      break;
    }
    case Degradation::kExposureShift:
      for (float& v : out.mutable_pixels()) v = clip(v + 0.45 * s);
      break;
    case Degradation::kSaturationLoss: {
      const std::vector<double> luma = Luminance(base);
      const double keep = 1.0 - 0.9 * s;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double g = luma[static_cast<std::size_t>(y) * w + x];
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = clip(g + keep * (base.at(x, y, c) - g));
        }
      break;
    }
    case Degradation::kCropOffCenter: {
      const Box win = CropWindow(w, h, s);
      const double sx = (win.x1 - win.x0) / w, sy = (win.y1 - win.y0) / h;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c) {
            out.at(x, y, c) = Sample(base, win.x0 + (x + 0.5) * sx - 0.5,
                                     win.y0 + (y + 0.5) * sy - 0.5, c);
          }
      break;
    }
  }
  Quantize8(out);
  return out;
}

std::vector<double> DiscretizedGaussian(double center, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - center) / (sigma * std::numbers::sqrt2)); };
  std::vector<double> dist(10);
  for (int b = 1; b <= 10; ++b) {
    const double lo = b == 1 ? 0.0 : cdf(b - 0.5);
    const double hi = b == 10 ? 1.0 : cdf(b + 0.5);
    dist[b - 1] = hi - lo;
  }
  double total = 0.0;
  for (double p : dist) total += p;
  for (double& p : dist) p /= total;
  return dist;
}

std::vector<double> MeanMatchedGaussian(double target_mean, double sigma) {
  if (!(target_mean >= 1.0 && target_mean <= 10.0)) {
    throw std::invalid_argument("target mean outside [1, 10]");
  }
  auto mean_at = [&](double c) { return CoarseRecord{"", DiscretizedGaussian(c, sigma)}.mean(); };
  // The bin mean is increasing in the center.
  double lo = -10.0 * sigma - 10.0, hi = 20.0 + 10.0 * sigma;
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_at(mid) < target_mean ? lo : hi) = mid;
  }
  return DiscretizedGaussian(0.5 * (lo + hi), sigma);
}

std::string ComparativeText(Degradation d, int variant) {
  static const std::map<Degradation, std::vector<std::string>> kBank = {
      {Degradation::kGaussianBlur,
       {"sharper edges and crisper fine detail",
        "the textures stay in focus instead of smearing",
        "clearer outlines with no softness"}},
      {Degradation::kAdditiveNoise,
       {"cleaner surfaces with far less grain",
        "smooth tones free of speckled noise",
        "colors read clean rather than gritty"}},
      {Degradation::kExposureShift,
       {"balanced exposure that keeps the highlights",
        "the bright areas are not washed out",
        "richer midtones instead of a blown-out look"}},
      {Degradation::kSaturationLoss,
       {"more vivid and saturated colors",
        "the palette feels lively rather than dull gray",
        "stronger color contrast between the shapes"}},
      {Degradation::kCropOffCenter,
       {"better framing that keeps the whole scene",
        "a balanced composition centered on the subject",
        "the crop does not cut the layout off at one corner"}},
  };
  const auto& phrases = kBank.at(d);
  return phrases[static_cast<std::size_t>(variant) % phrases.size()];
}

std::vector<SynthFineSeries> SynthFine(const SynthFineConfig& cfg) {
  if (cfg.n_series < 0) throw std::invalid_argument("n_series must be non-negative");
  if (cfg.min_len < 2 || cfg.max_len > 10 || cfg.min_len > cfg.max_len) {
    throw std::invalid_argument("series lengths must satisfy 2 <= min <= max <= 10");
  }
  if (cfg.menu.empty()) throw std::invalid_argument("empty degradation menu");
  if (cfg.image_size < 32) throw std::invalid_argument("image_size must be at least 32");
  std::vector<SynthFineSeries> out;
  out.reserve(cfg.n_series);
  const int sz = cfg.image_size;
  for (int s = 0; s < cfg.n_series; ++s) {
    Rng rng(MixSeed(cfg.seed, 0x66696e6500000000ULL + s));
    SynthFineSeries series;
    SeriesRecord& rec = series.record;
    rec.series_id = "fine_" + PadIndex(s, 4);
    rec.source = static_cast<Source>(s % 3);
    series.degradation = PickDegradation(rng, cfg.menu, rec.source);
    const int n = rng.UniformInt(cfg.min_len, cfg.max_len);
    const ImageBuf base = MakeBaseImage(rng.NextU64(), sz, sz);

    // slot[k] is the severity rank stored at record position k.
    std::vector<int> slot(n);
    for (int k = 0; k < n; ++k) slot[k] = k;
    rng.Shuffle(std::span<int>(slot));
    std::vector<int> position(n);
    for (int k = 0; k < n; ++k) position[slot[k]] = k;

    const std::uint64_t noise_seed = rng.NextU64();
    for (int k = 0; k < n; ++k) {
      const double sev = static_cast<double>(slot[k]) / (n - 1);
      series.severities.push_back(sev);
      series.images.push_back(Degrade(base, series.degradation, sev, MixSeed(noise_seed, k)));
      rec.images.push_back("images/fine/" + rec.series_id + "_" + std::to_string(k) + ".png");
    }
    for (int r = 0; r < n; ++r) rec.gt_ranking.push_back(position[r]);
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        const double p = std::clamp(1.0 - 0.1 / (b - a), 0.75, 1.0);
        rec.pair_probs.push_back({position[a], position[b], p});
      }
    }
    for (int r = 0; r + 1 < n; ++r) {
      rec.texts.push_back({position[r], position[r + 1],
                           ComparativeText(series.degradation, rng.UniformInt(0, 2))});
    }
    if (rec.source == Source::kCropping) {
      std::vector<Box> boxes;
      for (double sev : series.severities) {
        boxes.push_back(series.degradation == Degradation::kCropOffCenter
                            ? CropWindow(sz, sz, sev)
                            : Box::Make(0, 0, sz, sz));
      }
      rec.boxes = std::move(boxes);
    }
    if (rec.source == Source::kAigc) {
      std::vector<double> t2i;
      for (double sev : series.severities) {
        t2i.push_back(std::round((0.9 - 0.2 * sev + rng.Uniform(-0.05, 0.05)) * 1e4) / 1e4);
      }
      rec.t2i_scores = std::move(t2i);
    }
    rec.Validate();
    out.push_back(std::move(series));
  }
  return out;
}

std::vector<SynthCoarseSample> SynthCoarse(const SynthCoarseConfig& cfg) {
  if (cfg.n < 1) throw std::invalid_argument("n must be at least 1");
  if (cfg.menu.empty()) throw std::invalid_argument("empty degradation menu");
  if (cfg.n_scenes < 1) throw std::invalid_argument("n_scenes must be at least 1");
  std::vector<ImageBuf> scenes;
  for (int k = 0; k < cfg.n_scenes; ++k) {
    scenes.push_back(MakeBaseImage(MixSeed(cfg.seed, 0x7363656e00000000ULL + k), cfg.image_size,
                                   cfg.image_size));
  }
  std::vector<SynthCoarseSample> out;
  out.reserve(cfg.n);
  for (int k = 0; k < cfg.n; ++k) {
    Rng rng(MixSeed(cfg.seed, 0x636f617200000000ULL + k));
    SynthCoarseSample sample;
    sample.scene = static_cast<int>(rng.Below(scenes.size()));
    sample.degradation = cfg.menu[rng.Below(cfg.menu.size())];
    sample.severity = rng.Uniform();
    sample.image = Degrade(scenes[sample.scene], sample.degradation, sample.severity, rng.NextU64());
    sample.record.image = "images/coarse/coarse_" + PadIndex(k, 4) + ".png";
    sample.record.dist = MeanMatchedGaussian(9.0 - 8.0 * sample.severity, cfg.sigma);
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<SeriesRecord> WriteSynthFine(std::span<const SynthFineSeries> series,
                                         const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "images" / "fine");
  std::vector<SeriesRecord> records;
  for (const SynthFineSeries& s : series) {
    for (std::size_t k = 0; k < s.images.size(); ++k) {
      WriteImage(s.images[k], out_dir / s.record.images[k]);
    }
    records.push_back(s.record);
  }
  return records;
}

std::vector<CoarseRecord> WriteSynthCoarse(std::span<const SynthCoarseSample> samples,
                                           const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "images" / "coarse");
  std::vector<CoarseRecord> records;
  for (const SynthCoarseSample& s : samples) {
    WriteImage(s.image, out_dir / s.record.image);
    records.push_back(s.record);
  }
  return records;
}

std::string Sha256Hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* kHex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out.push_back(kHex[digest[k] >> 4]);
    out.push_back(kHex[digest[k] & 15]);
  }
  return out;
}

std::string Sha256File(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return Sha256Hex(bytes);
}

}  // namespace fgaes
