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
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "fgaes/data.h"
#include "fgaes/errors.h"

namespace fs = std::filesystem;
using fgaes::Degradation;

namespace {

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fgaes_data_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

double PixelVariance(const fgaes::ImageBuf& img) {
  const auto px = img.pixels();
  const double mean = std::accumulate(px.begin(), px.end(), 0.0) / px.size();
  double var = 0.0;
  for (float v : px) var += (v - mean) * (v - mean);
  return var / px.size();
}

// Tail-folded bin means, from tests/oracles/discretized_gaussian.py.
constexpr double kFoldedMeanAt9 = 8.8738800969452384;
constexpr double kFoldedMeanAt1 = 1.4645810225661548;

// Canonical lines: keys sorted, compact separators.
const char* kSeriesFixture =
    R"({"gt_ranking":[1,0],"images":["a.png","b.png"],"pair_probs":[[1,0,0.9]],"series_id":"s0","source":"natural","texts":[[1,0,"sharper"]]})"
    "\n"
    R"({"boxes":[[0.0,0.0,4.0,4.0],[1.0,1.0,3.0,3.0],[0.0,0.0,2.0,2.0]],"gt_ranking":[0,1,2],"images":["a.png","b.png","c.png"],"pair_probs":[[0,1,0.9],[1,2,0.8]],"series_id":"s1","source":"cropping","texts":[]})"
    "\n"
    R"({"gt_ranking":[2,1,0],"images":["a.png","b.png","c.png"],"pair_probs":[],"series_id":"s2","source":"aigc","t2i_scores":[0.5,0.6,0.7],"texts":[[2,0,"@emb.json"]]})"
    "\n";

}  // namespace

TEST_CASE("sha256 matches the standard test vector") {
  const std::string abc = "abc";
  CHECK(fgaes::Sha256Hex({reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()}) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(fgaes::Sha256Hex({}) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("series manifest round-trips byte for byte") {
  const fs::path dir = TempDir("roundtrip");
  WriteText(dir / "series.jsonl", kSeriesFixture);
  const auto records = fgaes::LoadSeriesManifest(dir / "series.jsonl", {.check_images = false});
  REQUIRE(records.size() == 3);
  CHECK(records[0].series_id == "s0");
  CHECK(records[1].source == fgaes::Source::kCropping);
  REQUIRE(records[1].boxes.has_value());
  CHECK((*records[1].boxes)[1].x0 == 1.0);
  REQUIRE(records[2].t2i_scores.has_value());
  CHECK(records[2].texts[0].ref == "@emb.json");
  fgaes::WriteSeriesManifest(records, dir / "copy.jsonl");
  CHECK(ReadText(dir / "copy.jsonl") == kSeriesFixture);
  CHECK(fgaes::Sha256File(dir / "copy.jsonl") == fgaes::Sha256File(dir / "series.jsonl"));
  CHECK(fgaes::LoadSeriesManifest(dir / "copy.jsonl", {.check_images = false}) == records);
}

TEST_CASE("schema errors cite line and field") {
  const fs::path dir = TempDir("schema");
  auto expect_error = [&](const std::string& second_line, const std::string& needle) {
    WriteText(dir / "bad.jsonl", std::string(R"({"gt_ranking":[1,0],"images":["a.png","b.png"],"pair_probs":[],"series_id":"s0","source":"natural","texts":[]})") +
                                     "\n" + second_line + "\n");
    try {
      fgaes::LoadSeriesManifest(dir / "bad.jsonl", {.check_images = false});
      FAIL("expected SchemaError");
    } catch (const fgaes::SchemaError& e) {
      const std::string msg = e.what();
      CHECK_MESSAGE(msg.find(":2:") != std::string::npos, msg);
      CHECK_MESSAGE(msg.find(needle) != std::string::npos, msg);
    }
  };
  expect_error(R"({"images":["a.png","b.png"],"gt_ranking":[0,1],"pair_probs":[],"texts":[],"source":"natural"})",
               "'series_id'");
  expect_error(R"({"series_id":"x","images":["a.png","b.png"],"gt_ranking":[0,0],"pair_probs":[],"texts":[],"source":"natural"})",
               "'gt_ranking'");
  expect_error(R"({"series_id":"x","images":["a.png"],"gt_ranking":[0],"pair_probs":[],"texts":[],"source":"natural"})",
               "'images'");
  expect_error(R"({"series_id":"x","images":["a.png","b.png"],"gt_ranking":[0,1],"pair_probs":[],"texts":[],"source":"film"})",
               "'source'");
  expect_error(R"({"series_id":"x","images":["a.png","b.png"],"gt_ranking":[0,1],"pair_probs":[[0,1,0.1]],"texts":[],"source":"natural"})",
               "'pair_probs'");
  expect_error(R"({"series_id":"x","images":["a.png","b.png"],"gt_ranking":[0,1],"pair_probs":[],"texts":[[0,5,"t"]],"source":"natural"})",
               "'texts'");
  expect_error(R"({"series_id":"x","images":"a.png","gt_ranking":[0,1],"pair_probs":[],"texts":[],"source":"natural"})",
               "'images'");
  expect_error("{not json", "invalid JSON");
}

TEST_CASE("dangling image paths are rejected") {
  const fs::path dir = TempDir("dangling");
  WriteText(dir / "series.jsonl", kSeriesFixture);
  CHECK_THROWS_AS(fgaes::LoadSeriesManifest(dir / "series.jsonl"), fgaes::SchemaError);
  for (const char* name : {"a.png", "b.png", "c.png"}) {
    fgaes::WriteImage(fgaes::ImageBuf(4, 4, 0.5f), dir / name);
  }
  CHECK(fgaes::LoadSeriesManifest(dir / "series.jsonl").size() == 3);
  WriteText(dir / "coarse.jsonl",
            R"({"dist":[0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1],"image":"missing.png"})"
            "\n");
  CHECK_THROWS_AS(fgaes::LoadCoarseManifest(dir / "coarse.jsonl"), fgaes::SchemaError);
  CHECK_THROWS_AS(fgaes::LoadSeriesManifest(dir / "absent.jsonl"), fgaes::MissingFileError);
}

TEST_CASE("empty manifests load with a warning") {
  const fs::path dir = TempDir("empty");
  WriteText(dir / "series.jsonl", "\n");
  std::vector<std::string> warnings;
  CHECK(fgaes::LoadSeriesManifest(dir / "series.jsonl", {}, &warnings).empty());
  CHECK(warnings.size() == 1);
}

TEST_CASE("coarse and votes manifests validate") {
  const fs::path dir = TempDir("coarse");
  WriteText(dir / "coarse.jsonl",
            R"({"dist":[0.5,0.5,0,0,0,0,0,0,0,0],"image":"x.png"})" "\n"
            R"({"dist":[0.5,0.6,0,0,0,0,0,0,0,0],"image":"x.png"})" "\n");
  CHECK_THROWS_WITH_AS(fgaes::LoadCoarseManifest(dir / "coarse.jsonl", {.check_images = false}),
                       doctest::Contains(":2: field 'dist'"), fgaes::SchemaError);
  const std::vector<fgaes::PairVoteRecord> votes = {{"s", 0, 1, 3, 1, 1}, {"s", 1, 2, 0, 5, 0}};
  fgaes::WriteVotesManifest(votes, dir / "votes.jsonl");
  CHECK(fgaes::LoadVotesManifest(dir / "votes.jsonl") == votes);
  WriteText(dir / "votes.jsonl", R"({"i":0,"j":1,"series_id":"s","votes_i":0,"votes_j":0,"votes_tie":0})" "\n");
  CHECK_THROWS_AS(fgaes::LoadVotesManifest(dir / "votes.jsonl"), fgaes::SchemaError);
  fgaes::CoarseRecord r{"x.png", fgaes::DiscretizedGaussian(5.5, 1.0)};
  CHECK(r.mean() == doctest::Approx(5.5).epsilon(1e-9));
}

TEST_CASE("precomputed text embeddings load from @ refs") {
  const fs::path dir = TempDir("embed");
  WriteText(dir / "emb.json", "[3, 4, 0, 0]");
  const auto e = fgaes::LoadTextEmbedding(dir / "series.jsonl", "@emb.json", 4, 0);
  CHECK(e == std::vector<double>{0.6, 0.8, 0.0, 0.0});
  CHECK_THROWS_AS(fgaes::LoadTextEmbedding(dir / "series.jsonl", "@emb.json", 8, 0),
                  fgaes::SchemaError);
  CHECK_THROWS_AS(fgaes::LoadTextEmbedding(dir / "series.jsonl", "@none.json", 4, 0),
                  fgaes::MissingFileError);
  CHECK(fgaes::LoadTextEmbedding(dir / "series.jsonl", "sharper", 4, 0).size() == 4);
}

TEST_CASE("split_811 sizes") {
  auto sizes = [](int n) {
    const std::vector<std::string> labels(n, "natural");
    const auto s = fgaes::Split811(labels, 3);
    return std::vector<std::size_t>{s.train.size(), s.val.size(), s.test.size()};
  };
  CHECK(sizes(10) == std::vector<std::size_t>{8, 1, 1});
  CHECK(sizes(101) == std::vector<std::size_t>{81, 10, 10});
  CHECK(sizes(200) == std::vector<std::size_t>{160, 20, 20});
}

TEST_CASE("split_811 stratifies by source") {
  std::vector<std::string> labels;
  for (int k = 0; k < 30; ++k) labels.push_back(k % 3 == 0 ? "natural" : k % 3 == 1 ? "aigc" : "cropping");
  const auto s = fgaes::Split811(labels, 11);
  CHECK(s.val.size() == 3);
  CHECK(s.test.size() == 3);
  for (const auto* part : {&s.val, &s.test}) {
    std::multiset<std::string> seen;
    for (std::size_t k : *part) seen.insert(labels[k]);
    CHECK(seen.count("natural") == 1);
    CHECK(seen.count("aigc") == 1);
    CHECK(seen.count("cropping") == 1);
  }
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (std::size_t k : *part) CHECK(all.insert(k).second);
  }
  CHECK(all.size() == 30);
  CHECK(fgaes::Split811(labels, 11).test == s.test);
}

TEST_CASE("split_811 sends tiny groups to train with a warning") {
  const std::vector<std::string> labels = {"natural", "natural", "aigc", "aigc", "aigc"};
  std::vector<std::string> warnings;
  const auto s = fgaes::Split811(labels, 0, &warnings);
  CHECK(warnings.size() == 1);
  CHECK(s.train.size() == 5);
  CHECK(s.val.empty());
}

TEST_CASE("discretized gaussian is a distribution with the expected mean") {
  for (double center : {1.0, 3.3, 5.0, 9.0}) {
    const auto d = fgaes::DiscretizedGaussian(center, 1.2);
    REQUIRE(d.size() == 10);
    CHECK(std::abs(std::accumulate(d.begin(), d.end(), 0.0) - 1.0) <= 1e-12);
    for (double p : d) CHECK(p >= 0.0);
  }
  CHECK(fgaes::CoarseRecord{"", fgaes::DiscretizedGaussian(9.0, 1.2)}.mean() ==
        doctest::Approx(kFoldedMeanAt9).epsilon(1e-12));
  CHECK(fgaes::CoarseRecord{"", fgaes::DiscretizedGaussian(1.0, 1.2)}.mean() ==
        doctest::Approx(kFoldedMeanAt1).epsilon(1e-12));
}

TEST_CASE("mean matched gaussian hits the synthetic score targets") {
  for (double target : {1.0, 1.5, 4.2, 8.0, 9.0}) {
    const auto d = fgaes::MeanMatchedGaussian(target, 1.2);
    CHECK(std::abs(std::accumulate(d.begin(), d.end(), 0.0) - 1.0) <= 1e-12);
    CHECK(std::abs(fgaes::CoarseRecord{"", d}.mean() - target) <= 0.15);
    CHECK(std::abs(fgaes::CoarseRecord{"", d}.mean() - target) <= 1e-6);
  }
  CHECK_THROWS(fgaes::MeanMatchedGaussian(0.5, 1.2));
}

TEST_CASE("degradations") {
  const auto base = fgaes::MakeBaseImage(5, 48, 40);
  CHECK(base.width() == 48);
  for (Degradation d : fgaes::AllDegradations()) {
    CHECK(fgaes::Degrade(base, d, 0.0, 1) == base);
    const auto out = fgaes::Degrade(base, d, 0.7, 1);
    CHECK(out.width() == 48);
    CHECK(out.height() == 40);
    CHECK(!(out == base));
    CHECK(fgaes::Degrade(base, d, 0.7, 1) == out);
    CHECK(fgaes::ParseDegradation(fgaes::DegradationName(d)) == d);
  }
  CHECK_THROWS(fgaes::Degrade(base, Degradation::kGaussianBlur, 1.5, 1));
  CHECK_THROWS(fgaes::ParseDegradation("vignette"));
  double prev = PixelVariance(base);
  for (double s : {1.0 / 3, 2.0 / 3, 1.0}) {
    const double v = PixelVariance(fgaes::Degrade(base, Degradation::kGaussianBlur, s, 0));
    CHECK(v < prev);
    prev = v;
  }
  const fgaes::Box w = fgaes::CropWindow(64, 64, 1.0);
  CHECK(w.x0 == 0.0);
  CHECK(w.x1 == 32.0);
  const fgaes::Box full = fgaes::CropWindow(64, 64, 0.0);
  CHECK(full.x1 - full.x0 == 64.0);
}

TEST_CASE("synth_fine series structure") {
  fgaes::SynthFineConfig cfg;
  cfg.seed = 9;
  cfg.n_series = 12;
  cfg.min_len = 2;
  cfg.max_len = 6;
  cfg.image_size = 32;
  const auto series = fgaes::SynthFine(cfg);
  REQUIRE(series.size() == 12);
  for (const auto& s : series) {
    const auto& r = s.record;
    const int n = r.size();
    CHECK(n >= 2);
    CHECK(n <= 6);
    CHECK_NOTHROW(r.Validate());
    // Best image is the undegraded base.
    CHECK(s.severities[r.gt_ranking[0]] == 0.0);
    for (int k = 1; k < n; ++k) {
      CHECK(s.severities[r.gt_ranking[k - 1]] < s.severities[r.gt_ranking[k]]);
    }
    CHECK(static_cast<int>(r.pair_probs.size()) == n * (n - 1) / 2);
    std::vector<int> rank(n);
    for (int k = 0; k < n; ++k) rank[r.gt_ranking[k]] = k;
    for (const auto& pp : r.pair_probs) {
      const int gap = rank[pp.j] - rank[pp.i];
      REQUIRE(gap > 0);
      CHECK(pp.p == (gap == 1 ? 0.9 : std::clamp(1.0 - 0.1 / gap, 0.75, 1.0)));
    }
    CHECK(static_cast<int>(r.texts.size()) == n - 1);
    CHECK(r.boxes.has_value() == (r.source == fgaes::Source::kCropping));
    CHECK(r.t2i_scores.has_value() == (r.source == fgaes::Source::kAigc));
    if (r.source == fgaes::Source::kCropping) CHECK(s.degradation == Degradation::kCropOffCenter);
  }
  CHECK(series[0].record.source == fgaes::Source::kNatural);
  CHECK(series[1].record.source == fgaes::Source::kAigc);
}

TEST_CASE("synth_fine severity zero equals the base and blur variance falls") {
  fgaes::SynthFineConfig cfg;
  cfg.seed = 4;
  cfg.n_series = 30;
  cfg.min_len = 4;
  cfg.max_len = 4;
  cfg.image_size = 32;
  cfg.menu = {Degradation::kGaussianBlur};
  for (const auto& s : fgaes::SynthFine(cfg)) {
    const auto& r = s.record;
    double prev = 1e9;
    for (int idx : r.gt_ranking) {
      const double v = PixelVariance(s.images[idx]);
      CHECK(v < prev);
      prev = v;
    }
  }
}

TEST_CASE("synth generators are bit deterministic") {
  fgaes::SynthFineConfig fine;
  fine.seed = 7;
  fine.n_series = 6;
  fine.image_size = 32;
  const auto a = fgaes::SynthFine(fine), b = fgaes::SynthFine(fine);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].record == b[k].record);
    CHECK(a[k].images == b[k].images);
  }
  fine.seed = 8;
  CHECK(!(fgaes::SynthFine(fine)[0].images == a[0].images));

  fgaes::SynthCoarseConfig coarse;
  coarse.seed = 7;
  coarse.n = 20;
  coarse.image_size = 32;
  const auto c = fgaes::SynthCoarse(coarse), d = fgaes::SynthCoarse(coarse);
  for (std::size_t k = 0; k < c.size(); ++k) {
    CHECK(c[k].record == d[k].record);
    CHECK(c[k].image == d[k].image);
    const double expect = 9.0 - 8.0 * c[k].severity;
    CHECK(std::abs(c[k].record.mean() - expect) <= 0.15);
    CHECK_NOTHROW(c[k].record.Validate());
  }
}

TEST_CASE("written synthetic sets reload with identical pixels") {
  const fs::path dir = TempDir("write");
  fgaes::SynthFineConfig fine;
  fine.n_series = 3;
  fine.max_len = 4;
  fine.image_size = 32;
  const auto series = fgaes::SynthFine(fine);
  const auto records = fgaes::WriteSynthFine(series, dir);
  fgaes::WriteSeriesManifest(records, dir / "series.jsonl");
  const auto loaded = fgaes::LoadSeriesManifest(dir / "series.jsonl");
  REQUIRE(loaded.size() == 3);
  CHECK(loaded == records);
  for (std::size_t k = 0; k < series.size(); ++k) {
    for (int m = 0; m < loaded[k].size(); ++m) {
      CHECK(fgaes::ReadImage(fgaes::ResolvePath(dir / "series.jsonl", loaded[k].images[m])) ==
            series[k].images[m]);
    }
  }
}
