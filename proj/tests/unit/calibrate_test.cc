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
#include "fgaes/calibrate.h"
#include "fgaes/random.h"

using fgaes::PairProb;
using fgaes::PairVoteRecord;

namespace {

PairVoteRecord Votes(int i, int j, int vi, int vj, int vt, const char* id = "s") {
  return PairVoteRecord{id, i, j, vi, vj, vt};
}

std::vector<int> OrderByScore(const std::vector<double>& scores) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

TEST_CASE("pair preference probability examples") {
  CHECK(fgaes::PairPrefProb(Votes(0, 1, 5, 5, 0)) == 0.5);
  CHECK(fgaes::PairPrefProb(Votes(0, 1, 9, 1, 0)) == 0.9);
  CHECK(fgaes::PairPrefProb(Votes(0, 1, 4, 2, 4)) == 0.6);
  CHECK_THROWS(fgaes::PairPrefProb(Votes(0, 1, 0, 0, 0)));
  CHECK_THROWS(fgaes::PairPrefProb(Votes(0, 1, -1, 2, 0)));

  fgaes::Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const int a = rng.UniformInt(0, 10), b = rng.UniformInt(0, 10), c = rng.UniformInt(1, 10);
    CHECK(fgaes::PairPrefProb(Votes(0, 1, a, b, c)) +
              fgaes::PairPrefProb(Votes(1, 0, b, a, c)) ==
          1.0);
  }
}

TEST_CASE("ambiguity band filtering") {
  const std::vector<PairProb> pairs = {{0, 1, 0.5}, {0, 2, 0.9}, {1, 2, 0.6}};
  auto r = fgaes::FilterAmbiguous(pairs, 0.15);
  CHECK(r.kept == std::vector<PairProb>{{0, 2, 0.9}});
  CHECK(r.dropped.size() == 2);
  auto narrow = fgaes::FilterAmbiguous(pairs, 0.05);
  CHECK(narrow.kept.size() == 2);
  CHECK(narrow.dropped == std::vector<PairProb>{{0, 1, 0.5}});
  CHECK_THROWS(fgaes::FilterAmbiguous(pairs, 0.5));
  CHECK_THROWS(fgaes::FilterAmbiguous(pairs, -0.1));
}

TEST_CASE("derive ranking examples") {
  const std::vector<PairProb> transitive = {{0, 1, 0.9}, {1, 2, 0.8}, {0, 2, 0.7}};
  auto r = fgaes::DeriveRanking(transitive, 3);
  CHECK(r.ok());
  CHECK(r.ranking == std::vector<int>{0, 1, 2});

  const std::vector<PairProb> cycle = {{0, 1, 0.9}, {1, 2, 0.9}, {2, 0, 0.9}};
  auto c = fgaes::DeriveRanking(cycle, 3);
  CHECK(c.conflict());
  CHECK(*c.cycle == std::vector<int>{0, 1, 2});
  CHECK(c.ranking.empty());

  auto pair = fgaes::DeriveRanking(std::vector<PairProb>{{0, 1, 0.8}}, 2);
  CHECK(pair.ranking == std::vector<int>{0, 1});
  auto flipped = fgaes::DeriveRanking(std::vector<PairProb>{{0, 1, 0.2}}, 2);
  CHECK(flipped.ranking == std::vector<int>{1, 0});

  auto sparse = fgaes::DeriveRanking(std::vector<PairProb>{{1, 3, 0.9}}, 4);
  CHECK(sparse.ranking == std::vector<int>{1, 3});
  CHECK(sparse.dropped_images == std::vector<int>{0, 2});

  auto empty = fgaes::DeriveRanking(std::vector<PairProb>{}, 3);
  CHECK_FALSE(empty.ok());
  CHECK(empty.drop_reason == "fewer_than_two_images");
}

TEST_CASE("derived rankings agree with every kept pair") {
  fgaes::Rng rng(2);
  int ranked = 0;
  for (int t = 0; t < 300; ++t) {
    const int n = rng.UniformInt(2, 7);
    std::vector<PairProb> pairs;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng.Bernoulli(0.6)) {
          double p = rng.Uniform(0.05, 0.95);
          if (std::abs(p - 0.5) < 0.15) continue;
          pairs.push_back({i, j, p});
        }
      }
    }
    auto r = fgaes::DeriveRanking(pairs, n);
    if (!r.ok()) continue;
    ++ranked;
    std::vector<int> pos(n, -1);
    for (std::size_t k = 0; k < r.ranking.size(); ++k) pos[r.ranking[k]] = static_cast<int>(k);
    for (const PairProb& pp : pairs) {
      REQUIRE(pos[pp.i] >= 0);
      REQUIRE(pos[pp.j] >= 0);
      CHECK((pos[pp.i] < pos[pp.j]) == (pp.p > 0.5));
    }
  }
  CHECK(ranked > 50);
}

TEST_CASE("conflict cycles are genuine") {
  fgaes::Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const int n = rng.UniformInt(3, 7);
    std::vector<PairProb> pairs;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) pairs.push_back({i, j, rng.Bernoulli(0.5) ? 0.9 : 0.1});
    auto r = fgaes::DeriveRanking(pairs, n);
    if (!r.conflict()) continue;
    const auto& cyc = *r.cycle;
    REQUIRE(cyc.size() >= 3);
    CHECK(cyc.front() == *std::min_element(cyc.begin(), cyc.end()));
    for (std::size_t k = 0; k < cyc.size(); ++k) {
      const int a = cyc[k], b = cyc[(k + 1) % cyc.size()];
      const auto it = std::find_if(pairs.begin(), pairs.end(), [&](const PairProb& pp) {
        return (pp.i == a && pp.j == b) || (pp.i == b && pp.j == a);
      });
      REQUIRE(it != pairs.end());
      CHECK((it->i == a ? it->p : 1.0 - it->p) > 0.5);
    }
  }
}

TEST_CASE("bt_fit two-item closed form") {
  const std::vector<PairVoteRecord> v = {Votes(0, 1, 8, 2, 0)};
  auto fit = fgaes::BtFit(v, 2);
  CHECK(fit.converged);
  CHECK(std::abs((fit.scores[0] - fit.scores[1]) - std::log(4.0)) < 1e-4);
  CHECK(std::abs(fit.scores[0] + fit.scores[1]) < 1e-12);
}

TEST_CASE("bt_fit symmetric votes give zero scores") {
  const std::vector<PairVoteRecord> v = {Votes(0, 1, 5, 5, 0), Votes(1, 2, 3, 3, 4),
                                         Votes(0, 2, 4, 4, 2)};
  auto fit = fgaes::BtFit(v, 3);
  CHECK(fit.converged);
  for (double s : fit.scores) CHECK(std::abs(s) < 1e-9);
}

TEST_CASE("bt_fit likelihood is monotone and components are flagged") {
  fgaes::Rng rng(4);
  for (int t = 0; t < 30; ++t) {
    const int n = rng.UniformInt(2, 6);
    std::vector<PairVoteRecord> v;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const int vi = rng.UniformInt(1, 9);
        v.push_back(Votes(i, j, vi, 10 - vi, 0));
      }
    auto fit = fgaes::BtFit(v, n);
    CHECK(fit.converged);
    CHECK_FALSE(fit.disconnected);
    for (std::size_t k = 1; k < fit.log_likelihood.size(); ++k) {
      CHECK(fit.log_likelihood[k] >= fit.log_likelihood[k - 1] - 1e-12);
    }
  }
  const std::vector<PairVoteRecord> split = {Votes(0, 1, 7, 3, 0), Votes(2, 3, 2, 8, 0)};
  auto fit = fgaes::BtFit(split, 4);
  CHECK(fit.disconnected);
  CHECK(fit.component[0] == fit.component[1]);
  CHECK(fit.component[0] != fit.component[2]);
  CHECK(std::abs(fit.scores[0] + fit.scores[1]) < 1e-9);
  CHECK(std::abs(fit.scores[2] + fit.scores[3]) < 1e-9);
  CHECK(fit.scores[3] > fit.scores[2]);

  auto shutout = fgaes::BtFit(std::vector<PairVoteRecord>{Votes(0, 1, 10, 0, 0)}, 2);
  CHECK_FALSE(shutout.converged);
}

TEST_CASE("bt_fit ordering agrees with derive_ranking on acyclic majorities") {
  fgaes::Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const int n = rng.UniformInt(2, 6);
    std::vector<int> planted(n);
    std::iota(planted.begin(), planted.end(), 0);
    rng.Shuffle(std::span<int>(planted));
    std::vector<int> rank_of(n);
    for (int k = 0; k < n; ++k) rank_of[planted[k]] = k;
    std::vector<PairVoteRecord> votes;
    std::vector<PairProb> probs;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const int gap = std::abs(rank_of[i] - rank_of[j]);
        const int strong = std::min(10, 6 + gap + rng.UniformInt(0, 1));
        const bool i_better = rank_of[i] < rank_of[j];
        votes.push_back(Votes(i, j, i_better ? strong : 10 - strong,
                              i_better ? 10 - strong : strong, 0));
        probs.push_back({i, j, fgaes::PairPrefProb(votes.back())});
      }
    auto fit = fgaes::BtFit(votes, n);
    auto derived = fgaes::DeriveRanking(fgaes::FilterAmbiguous(probs).kept, n);
    REQUIRE(derived.ok());
    CHECK(OrderByScore(fit.scores) == derived.ranking);
    CHECK(derived.ranking == planted);
  }
}

TEST_CASE("planted order recovery from noisy annotators") {
  fgaes::Rng rng(6);
  std::vector<PairVoteRecord> all;
  std::vector<std::vector<int>> planted_orders;
  for (int s = 0; s < 100; ++s) {
    const int n = rng.UniformInt(2, 6);
    std::vector<int> planted(n);
    std::iota(planted.begin(), planted.end(), 0);
    rng.Shuffle(std::span<int>(planted));
    planted_orders.push_back(planted);
    auto v = fgaes::SimulateVotes(rng, planted, 10, 0.1, "series" + std::to_string(s));
    all.insert(all.end(), v.begin(), v.end());
  }
  auto calibrated = fgaes::CalibrateVotes(all, 0.15);
  REQUIRE(calibrated.size() == 100);
  double tau_sum = 0.0;
  int counted = 0;
  for (std::size_t s = 0; s < calibrated.size(); ++s) {
    const auto& res = calibrated[s].result;
    if (!res.ok()) continue;
    std::vector<int> truth;
    for (int k : planted_orders[s]) {
      if (std::find(res.ranking.begin(), res.ranking.end(), k) != res.ranking.end()) {
        truth.push_back(k);
      }
    }
    tau_sum += fgaes::KendallTau(res.ranking, truth);
    ++counted;
  }
  CHECK(counted >= 90);
  CHECK(tau_sum / counted >= 0.95);
}

TEST_CASE("calibrate merges duplicate and reversed records") {
  const std::vector<PairVoteRecord> v = {Votes(0, 1, 3, 2, 0, "a"), Votes(1, 0, 1, 4, 0, "a"),
                                         Votes(0, 1, 1, 9, 0, "b")};
  auto out = fgaes::CalibrateVotes(v);
  REQUIRE(out.size() == 2);
  CHECK(out[0].series_id == "a");
  REQUIRE(out[0].kept_pairs.size() == 1);
  CHECK(out[0].kept_pairs[0].p == 0.7);
  CHECK(out[0].result.ranking == std::vector<int>{0, 1});
  CHECK(out[1].result.ranking == std::vector<int>{1, 0});
}

TEST_CASE("kendall tau") {
  const std::vector<int> a = {0, 1, 2, 3};
  const std::vector<int> rev = {3, 2, 1, 0};
  CHECK(fgaes::KendallTau(a, a) == 1.0);
  CHECK(fgaes::KendallTau(a, rev) == -1.0);
  CHECK(fgaes::KendallTau(a, std::vector<int>{1, 0, 2, 3}) == doctest::Approx(4.0 / 6.0));
}

TEST_CASE("calibrated records serialize ranking or conflict") {
  const std::vector<PairVoteRecord> votes{Votes(0, 1, 9, 1, 0, "cyc"), Votes(1, 2, 9, 1, 0, "cyc"),
                                          Votes(2, 0, 9, 1, 0, "cyc"), Votes(0, 1, 2, 8, 0, "ok")};
  const auto calibrated = fgaes::CalibrateVotes(votes);
  REQUIRE(calibrated.size() == 2);
  const std::string cyc = fgaes::CalibratedToJsonLine(calibrated[0]);
  CHECK(cyc.find("\"conflict\":{\"cycle\":[0,1,2]}") != std::string::npos);
  CHECK(cyc.find("\"ranking\"") == std::string::npos);
  const std::string ok = fgaes::CalibratedToJsonLine(calibrated[1]);
  CHECK(ok.find("\"ranking\":[1,0]") != std::string::npos);
  CHECK(ok.find("\"kept_pairs\":[{\"i\":0,\"j\":1,\"p\":0.2}]") != std::string::npos);
}

TEST_CASE("simulated votes are seeded and cover every pair") {
  fgaes::Rng a(3), b(3);
  const std::vector<int> planted{2, 0, 1};
  const auto va = fgaes::SimulateVotes(a, planted, 10, 0.0, "s");
  CHECK(va == fgaes::SimulateVotes(b, planted, 10, 0.0, "s"));
  REQUIRE(va.size() == 3);
  CHECK(va[0].votes_i == 10);  // 0 beats 1
  CHECK(va[1].votes_j == 10);  // 2 beats 0
  CHECK(va[2].votes_j == 10);  // 2 beats 1
  const std::vector<int> bad{0, 0};
  CHECK_THROWS_AS(fgaes::SimulateVotes(a, bad, 10, 0.1, "s"), std::invalid_argument);
}
