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

// Rank calibration: pairwise annotator votes become preference
// probabilities, ambiguous pairs are filtered, and each series receives a
// conflict-checked global ranking.

#ifndef FGAES_CALIBRATE_H_
#define FGAES_CALIBRATE_H_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fgaes/random.h"

namespace fgaes {

struct PairVoteRecord {
  std::string series_id;
  int i = 0;
  int j = 0;
  int votes_i = 0;
  int votes_j = 0;
  int votes_tie = 0;

  int total() const { return votes_i + votes_j + votes_tie; }
  friend bool operator==(const PairVoteRecord&, const PairVoteRecord&) = default;
};

// P(i preferred over j).
struct PairProb {
  int i = 0;
  int j = 0;
  double p = 0.5;
  friend bool operator==(const PairProb&, const PairProb&) = default;
};

// (votes_i + votes_tie / 2) / total.
double PairPrefProb(const PairVoteRecord& v);

struct FilterResult {
  std::vector<PairProb> kept;
  std::vector<PairProb> dropped;
};

// Drops pairs with |p - 0.5| < band.
FilterResult FilterAmbiguous(std::span<const PairProb> pairs, double band = 0.15);

struct RankingResult {
  // Best first; original image indices of the surviving images.
  std::vector<int> ranking;
  // A directed cycle a -> b -> ... -> a, starting at its smallest index.
  std::optional<std::vector<int>> cycle;
  // Images without any kept pair.
  std::vector<int> dropped_images;
  // Non-empty when the series cannot be ranked.
  std::string drop_reason;

  bool conflict() const { return cycle.has_value(); }
  bool ok() const { return drop_reason.empty(); }
};

// Ranks n images from kept pairs. Edges point from the preferred image.
// Acyclic graphs are ordered topologically with Copeland score, summed
// preference probability and index as successive priorities, so the result
// agrees with every kept pair.
RankingResult DeriveRanking(std::span<const PairProb> kept, int n);

struct BtFitResult {
  std::vector<double> scores;  // log strengths, sum 0 within each component
  int iterations = 0;
  bool converged = false;
  bool disconnected = false;
  std::vector<int> component;  // component id per image
  std::vector<double> log_likelihood;  // per iteration, summed over components
};

// Minorize-maximize Bradley-Terry fit with vote counts as weights; ties
// count half a win for each side.
BtFitResult BtFit(std::span<const PairVoteRecord> votes, int n,
                  int max_iters = 1000, double tol = 1e-8);

struct CalibratedSeries {
  std::string series_id;
  std::vector<PairProb> kept_pairs;
  RankingResult result;
};

// Groups votes by series (first-appearance order) and calibrates each.
std::vector<CalibratedSeries> CalibrateVotes(std::span<const PairVoteRecord> votes,
                                             double band = 0.15);

// Kendall tau-b between two orderings of the same item set.
double KendallTau(std::span<const int> a, std::span<const int> b);

// {series_id, ranking | conflict:{cycle}, kept_pairs:[{i,j,p}],
// dropped_images}, plus drop_reason when the series could not be ranked.
std::string CalibratedToJsonLine(const CalibratedSeries& c);

// Votes on every pair i < j from `annotators` independent judges who report
// the planted preference (best first) except with probability `flip`.
std::vector<PairVoteRecord> SimulateVotes(Rng& rng, std::span<const int> planted,
                                          int annotators, double flip,
                                          const std::string& series_id);

}  // namespace fgaes

#endif  // FGAES_CALIBRATE_H_
