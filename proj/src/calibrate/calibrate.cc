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

#include "fgaes/calibrate.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace fgaes {
namespace {

void CheckIndex(int i, int n) {
  if (i < 0 || i >= n) {
    throw std::invalid_argument("image index " + std::to_string(i) +
                                " outside series of length " + std::to_string(n));
  }
}

// Finds one directed cycle with iterative DFS, or nothing.
std::optional<std::vector<int>> FindCycle(const std::vector<std::vector<int>>& adj) {
  const int n = static_cast<int>(adj.size());
  enum Color { kWhite, kGray, kBlack };
  std::vector<Color> color(n, kWhite);
  std::vector<int> parent(n, -1);
  for (int root = 0; root < n; ++root) {
    if (color[root] != kWhite) continue;
    std::vector<std::pair<int, std::size_t>> stack = {{root, 0}};
    color[root] = kGray;
    while (!stack.empty()) {
      auto& [u, next] = stack.back();
      if (next == adj[u].size()) {
        color[u] = kBlack;
        stack.pop_back();
        continue;
      }
      const int v = adj[u][next++];
      if (color[v] == kGray) {
        std::vector<int> cycle = {v};
        for (int w = u; w != v; w = parent[w]) cycle.push_back(w);
        std::reverse(cycle.begin() + 1, cycle.end());
        std::rotate(cycle.begin(), std::min_element(cycle.begin(), cycle.end()),
                    cycle.end());
        return cycle;
      }
      if (color[v] == kWhite) {
        color[v] = kGray;
        parent[v] = u;
        stack.push_back({v, 0});
      }
    }
  }
  return std::nullopt;
}

}  // namespace

double PairPrefProb(const PairVoteRecord& v) {
  if (v.votes_i < 0 || v.votes_j < 0 || v.votes_tie < 0) {
    throw std::invalid_argument("negative vote count");
  }
  if (v.total() == 0) throw std::invalid_argument("pair has no votes");
  return (v.votes_i + 0.5 * v.votes_tie) / v.total();
}

FilterResult FilterAmbiguous(std::span<const PairProb> pairs, double band) {
  if (!(band >= 0.0 && band < 0.5)) {
    throw std::invalid_argument("ambiguity band must lie in [0, 0.5)");
  }
  FilterResult out;
  for (const PairProb& pp : pairs) {
    (std::abs(pp.p - 0.5) < band ? out.dropped : out.kept).push_back(pp);
  }
  return out;
}

RankingResult DeriveRanking(std::span<const PairProb> kept, int n) {
  if (n < 0) throw std::invalid_argument("negative series length");
  RankingResult out;
  std::vector<bool> present(n, false);
  for (const PairProb& pp : kept) {
    CheckIndex(pp.i, n);
    CheckIndex(pp.j, n);
    if (pp.i == pp.j) throw std::invalid_argument("pair compares an image with itself");
    present[pp.i] = present[pp.j] = true;
  }
  std::vector<int> alive;
  for (int k = 0; k < n; ++k) {
    (present[k] ? alive : out.dropped_images).push_back(k);
  }
  if (alive.size() < 2) {
    out.drop_reason = "fewer_than_two_images";
    return out;
  }

  std::vector<std::vector<int>> adj(n);
  std::vector<int> copeland(n, 0);
  std::vector<double> prob_sum(n, 0.0);
  for (const PairProb& pp : kept) {
    prob_sum[pp.i] += pp.p;
    prob_sum[pp.j] += 1.0 - pp.p;
    if (pp.p > 0.5) {
      adj[pp.i].push_back(pp.j);
      ++copeland[pp.i];
      --copeland[pp.j];
    } else if (pp.p < 0.5) {
      adj[pp.j].push_back(pp.i);
      ++copeland[pp.j];
      --copeland[pp.i];
    }
  }
  for (auto& edges : adj) std::sort(edges.begin(), edges.end());
  if (auto cycle = FindCycle(adj)) {
    out.cycle = std::move(cycle);
    out.drop_reason = "conflict";
    return out;
  }

  std::vector<int> indegree(n, 0);
  for (int u = 0; u < n; ++u) {
    for (int v : adj[u]) ++indegree[v];
  }
  auto before = [&](int a, int b) {
    if (copeland[a] != copeland[b]) return copeland[a] > copeland[b];
    if (prob_sum[a] != prob_sum[b]) return prob_sum[a] > prob_sum[b];
    return a < b;
  };
  std::vector<int> ready;
  for (int k : alive) {
    if (indegree[k] == 0) ready.push_back(k);
  }
  while (!ready.empty()) {
    auto best = std::min_element(ready.begin(), ready.end(), before);
    const int u = *best;
    ready.erase(best);
    out.ranking.push_back(u);
    for (int v : adj[u]) {
      if (--indegree[v] == 0) ready.push_back(v);
    }
  }
  return out;
}

BtFitResult BtFit(std::span<const PairVoteRecord> votes, int n, int max_iters,
                  double tol) {
  if (n < 1) throw std::invalid_argument("bt_fit needs at least one image");
  // wins[i][j]: weighted wins of i over j.
  std::vector<std::vector<double>> wins(n, std::vector<double>(n, 0.0));
  for (const PairVoteRecord& v : votes) {
    CheckIndex(v.i, n);
    CheckIndex(v.j, n);
    if (v.i == v.j) throw std::invalid_argument("pair compares an image with itself");
    if (v.total() <= 0) throw std::invalid_argument("pair has no votes");
    wins[v.i][v.j] += v.votes_i + 0.5 * v.votes_tie;
    wins[v.j][v.i] += v.votes_j + 0.5 * v.votes_tie;
  }

  BtFitResult out;
  out.component.assign(n, -1);
  int components = 0;
  for (int s = 0; s < n; ++s) {
    if (out.component[s] >= 0) continue;
    std::vector<int> stack = {s};
    out.component[s] = components;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v = 0; v < n; ++v) {
        if (out.component[v] < 0 && wins[u][v] + wins[v][u] > 0) {
          out.component[v] = components;
          stack.push_back(v);
        }
      }
    }
    ++components;
  }
  out.disconnected = components > 1;

  std::vector<double> gamma(n, 1.0);
  auto log_likelihood = [&] {
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (wins[i][j] > 0) ll += wins[i][j] * std::log(gamma[i] / (gamma[i] + gamma[j]));
      }
    }
    return ll;
  };
  auto normalized = [&] {
    std::vector<double> logs(n);
    for (int i = 0; i < n; ++i) logs[i] = std::log(gamma[i]);
    for (int c = 0; c < components; ++c) {
      double mean = 0.0;
      int size = 0;
      for (int i = 0; i < n; ++i) {
        if (out.component[i] == c && std::isfinite(logs[i])) {
          mean += logs[i];
          ++size;
        }
      }
      if (size == 0) continue;
      mean /= size;
      for (int i = 0; i < n; ++i) {
        if (out.component[i] == c) logs[i] -= mean;
      }
    }
    return logs;
  };

  std::vector<double> scores = normalized();
  out.log_likelihood.push_back(log_likelihood());
  for (int it = 1; it <= max_iters; ++it) {
    std::vector<double> next(n);
    for (int i = 0; i < n; ++i) {
      double w = 0.0, denom = 0.0;
      for (int j = 0; j < n; ++j) {
        const double nij = wins[i][j] + wins[j][i];
        if (nij == 0) continue;
        w += wins[i][j];
        denom += nij / (gamma[i] + gamma[j]);
      }
      next[i] = denom > 0 ? w / denom : gamma[i];
    }
    // Rescale per component so strengths stay O(1).
    for (int c = 0; c < components; ++c) {
      double log_mean = 0.0;
      int size = 0;
      for (int i = 0; i < n; ++i) {
        if (out.component[i] == c && next[i] > 0) {
          log_mean += std::log(next[i]);
          ++size;
        }
      }
      if (size == 0) continue;
      const double scale = std::exp(-log_mean / size);
      for (int i = 0; i < n; ++i) {
        if (out.component[i] == c) next[i] *= scale;
      }
    }
    gamma = std::move(next);
    const std::vector<double> updated = normalized();
    double change = 0.0;
    bool diverged = false;
    for (int i = 0; i < n; ++i) {
      if (!std::isfinite(updated[i])) {
        diverged = true;
        continue;
      }
      change = std::max(change, std::abs(updated[i] - scores[i]));
    }
    scores = updated;
    out.iterations = it;
    out.log_likelihood.push_back(log_likelihood());
    if (change < tol) {
      // An image without wins has no finite maximum-likelihood strength.
      out.converged = !diverged;
      break;
    }
  }
  out.scores = std::move(scores);
  return out;
}

std::vector<CalibratedSeries> CalibrateVotes(std::span<const PairVoteRecord> votes,
                                             double band) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const PairVoteRecord*>> by_series;
  for (const PairVoteRecord& v : votes) {
    auto [it, inserted] = by_series.try_emplace(v.series_id);
    if (inserted) order.push_back(v.series_id);
    it->second.push_back(&v);
  }
  std::vector<CalibratedSeries> out;
  for (const std::string& id : order) {
    // Merge duplicate records of the same unordered pair.
    std::map<std::pair<int, int>, PairVoteRecord> merged;
    int n = 0;
    for (const PairVoteRecord* v : by_series[id]) {
      if (v->i < 0 || v->j < 0) throw std::invalid_argument("negative image index");
      n = std::max({n, v->i + 1, v->j + 1});
      const bool flip = v->i > v->j;
      const auto key = std::minmax(v->i, v->j);
      auto [it, inserted] = merged.try_emplace(key, PairVoteRecord{id, key.first, key.second});
      it->second.votes_i += flip ? v->votes_j : v->votes_i;
      it->second.votes_j += flip ? v->votes_i : v->votes_j;
      it->second.votes_tie += v->votes_tie;
    }
    std::vector<PairProb> probs;
    for (const auto& [key, rec] : merged) {
      probs.push_back(PairProb{rec.i, rec.j, PairPrefProb(rec)});
    }
    FilterResult filtered = FilterAmbiguous(probs, band);
    CalibratedSeries cs;
    cs.series_id = id;
    cs.result = DeriveRanking(filtered.kept, n);
    cs.kept_pairs = std::move(filtered.kept);
    out.push_back(std::move(cs));
  }
  return out;
}

double KendallTau(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("orderings differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<int, std::size_t> pos_b;
  for (std::size_t k = 0; k < n; ++k) pos_b[b[k]] = k;
  if (pos_b.size() != n) throw std::invalid_argument("ordering repeats an item");
  long concordant = 0, discordant = 0;
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = x + 1; y < n; ++y) {
      auto px = pos_b.find(a[x]), py = pos_b.find(a[y]);
      if (px == pos_b.end() || py == pos_b.end()) {
        throw std::invalid_argument("orderings cover different items");
      }
      (px->second < py->second ? concordant : discordant) += 1;
    }
  }
  return static_cast<double>(concordant - discordant) /
         static_cast<double>(concordant + discordant);
}

std::string CalibratedToJsonLine(const CalibratedSeries& c) {
  nlohmann::json j;
  j["series_id"] = c.series_id;
  if (c.result.conflict()) {
    j["conflict"] = {{"cycle", *c.result.cycle}};
  } else {
    j["ranking"] = c.result.ranking;
  }
  nlohmann::json kept = nlohmann::json::array();
  for (const PairProb& p : c.kept_pairs) kept.push_back({{"i", p.i}, {"j", p.j}, {"p", p.p}});
  j["kept_pairs"] = std::move(kept);
  j["dropped_images"] = c.result.dropped_images;
  if (!c.result.ok() && !c.result.conflict()) j["drop_reason"] = c.result.drop_reason;
  return j.dump();
}

std::vector<PairVoteRecord> SimulateVotes(Rng& rng, std::span<const int> planted,
                                          int annotators, double flip,
                                          const std::string& series_id) {
  if (annotators < 1) throw std::invalid_argument("annotators must be at least 1");
  if (!(flip >= 0.0 && flip <= 1.0)) throw std::invalid_argument("flip outside [0, 1]");
  const int n = static_cast<int>(planted.size());
  std::vector<int> rank_of(n, -1);
  for (int k = 0; k < n; ++k) {
    if (planted[k] < 0 || planted[k] >= n || rank_of[planted[k]] != -1) {
      throw std::invalid_argument("planted order is not a permutation");
    }
    rank_of[planted[k]] = k;
  }
  std::vector<PairVoteRecord> out;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const bool i_better = rank_of[i] < rank_of[j];
      int vi = 0;
      for (int a = 0; a < annotators; ++a) {
        const bool says_i = rng.Bernoulli(flip) ? !i_better : i_better;
        vi += says_i ? 1 : 0;
      }
      out.push_back(PairVoteRecord{series_id, i, j, vi, annotators - vi, 0});
    }
  }
  return out;
}

}  // namespace fgaes
