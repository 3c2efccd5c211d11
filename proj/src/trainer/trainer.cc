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

#include "fgaes/trainer.h"

#include <algorithm>
#include <charconv>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fgaes/random.h"
#include "json.hpp"

namespace fgaes {
namespace {

constexpr std::uint64_t kPretrainStream = 0x7072657472000000ULL;
constexpr std::uint64_t kFineOrderStream = 0x66696e656f000000ULL;
constexpr std::uint64_t kCoarseOrderStream = 0x636f6172736f0000ULL;
constexpr std::uint64_t kFineStepStream = 0x66696e6573000000ULL;

// Runs fn(0..n-1) on up to `threads` workers. Each index is processed
// exactly once; callers write results into per-index slots.
template <typename Fn>
void ParallelFor(int n, int threads, Fn fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void AddInto(GradMap& acc, const GradMap& g) {
  for (const auto& [name, t] : g) {
    auto it = acc.find(name);
    if (it == acc.end()) {
      acc.emplace(name, t);
      continue;
    }
    auto dst = it->second.mutable_values();
    const auto src = t.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

GradMap Collect(const nd::Gradients& grads, const BoundParams& bound) {
  GradMap out;
  for (const auto& [name, var] : bound) out.emplace(name, grads.of(var));
  return out;
}

void ClipGradients(GradMap& grads, double clip) {
  if (clip <= 0) return;
  double sq = 0.0;
  for (const auto& [name, t] : grads) {
    for (double v : t.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm <= clip) return;
  const double s = clip / norm;
  for (auto& [name, t] : grads) {
    for (double& v : t.mutable_values()) v *= s;
  }
}

double Mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

TrainLossConfig LossConfig(const TrainConfig& cfg, double lambda) {
  TrainLossConfig lc;
  lc.lambda = lambda;
  lc.emd_r = cfg.emd_r;
  return lc;
}

// Cycles through a dataset in seeded shuffled passes.
class Stream {
 public:
  Stream(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::vector<std::size_t> Next(std::size_t count) {
    std::vector<std::size_t> out;
    while (out.size() < count) {
      if (cursor_ == order_.size()) Reshuffle();
      const std::size_t take = std::min(count - out.size(), order_.size() - cursor_);
      out.insert(out.end(), order_.begin() + cursor_, order_.begin() + cursor_ + take);
      cursor_ += take;
      // A batch never straddles two passes.
      if (cursor_ == order_.size()) break;
    }
    return out;
  }

 private:
  void Reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(MixSeed(seed_, pass_++));
    rng.Shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
  }

  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t pass_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

int Batches(std::size_t n, int batch) {
  return static_cast<int>((n + batch - 1) / batch);
}

double ParseDouble(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("config " + key + ": not a number: " + v);
  return out;
}

long long ParseInt(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("config " + key + ": not an integer: " + v);
  return out;
}

// Shortest text that parses back to the same double.
std::string FormatDouble(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

void TrainConfig::Validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be finite and non-negative");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (coarse_batch < 1 || fine_batch_series < 1) throw std::invalid_argument("batch sizes must be positive");
  if (pretrain_epochs < 0 || joint_epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (joint_steps && *joint_steps < 0) throw std::invalid_argument("joint_steps must be non-negative");
  for (double m : {momentum_fine, momentum_coarse}) {
    if (!(m >= 0.0 && m < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("grad_clip must be non-negative");
  if (threads < 1) throw std::invalid_argument("threads must be positive");
  token.Validate();
  encoder.Validate();
  if (token.base_patch != encoder.base_patch) {
    throw std::invalid_argument("token.base_patch must equal encoder.base_patch");
  }
  LossConfig(*this, lambda).Validate();
}

TrainConfig TrainConfig::DeskScale() {
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.coarse_batch = 16;
  cfg.fine_batch_series = 4;
  cfg.pretrain_epochs = 40;
  cfg.joint_epochs = 10;
  cfg.lambda = 1.0;
  cfg.grad_clip = 0.3;
  cfg.token.base_patch = 8;
  cfg.token.loc_patch = 16;
  cfg.token.token_budget = 64;
  cfg.token.max_side = std::nullopt;
  cfg.encoder.d_model = 32;
  cfg.encoder.n_heads = 2;
  cfg.encoder.n_layers = 2;
  cfg.encoder.mlp_ratio = 2;
  cfg.encoder.pos_grid = 8;
  cfg.encoder.embed_dim = 16;
  cfg.encoder.base_patch = 8;
  return cfg;
}

std::map<std::string, std::string> ParseFlatConfig(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

void ApplyConfigOverrides(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, v] : kv) {
    auto d = [&] { return ParseDouble(key, v); };
    auto i = [&] { return static_cast<int>(ParseInt(key, v)); };
    auto u = [&] { return static_cast<std::uint64_t>(ParseInt(key, v)); };
    if (key == "lr") cfg.lr = d();
    else if (key == "weight_decay") cfg.weight_decay = d();
    else if (key == "coarse_batch") cfg.coarse_batch = i();
    else if (key == "fine_batch_series") cfg.fine_batch_series = i();
    else if (key == "pretrain_epochs") cfg.pretrain_epochs = i();
    else if (key == "joint_epochs") cfg.joint_epochs = i();
    else if (key == "joint_steps") cfg.joint_steps = v == "none" ? std::nullopt : std::optional<int>(i());
    else if (key == "momentum_fine") cfg.momentum_fine = d();
    else if (key == "momentum_coarse") cfg.momentum_coarse = d();
    else if (key == "lambda") cfg.lambda = d();
    else if (key == "emd_r") cfg.emd_r = d();
    else if (key == "grad_clip") cfg.grad_clip = d();
    else if (key == "seed") cfg.seed = u();
    else if (key == "text_seed") cfg.text_seed = u();
    else if (key == "threads") cfg.threads = i();
    else if (key == "token.base_patch") cfg.token.base_patch = i();
    else if (key == "token.loc_patch") cfg.token.loc_patch = i();
    else if (key == "token.percentile_p") cfg.token.percentile_p = d();
    else if (key == "token.token_budget") cfg.token.token_budget = i();
    else if (key == "token.max_side") cfg.token.max_side = v == "none" ? std::nullopt : std::optional<int>(i());
    else if (key == "token.seed") cfg.token.seed = u();
    else if (key == "token.percentile_method") {
      if (v == "linear") cfg.token.percentile_method = PercentileMethod::kLinear;
      else if (v == "nearest_rank") cfg.token.percentile_method = PercentileMethod::kNearestRank;
      else throw std::invalid_argument("config token.percentile_method: unknown value " + v);
    }
    else if (key == "encoder.d_model") cfg.encoder.d_model = i();
    else if (key == "encoder.n_heads") cfg.encoder.n_heads = i();
    else if (key == "encoder.n_layers") cfg.encoder.n_layers = i();
    else if (key == "encoder.mlp_ratio") cfg.encoder.mlp_ratio = i();
    else if (key == "encoder.pos_grid") cfg.encoder.pos_grid = i();
    else if (key == "encoder.embed_dim") cfg.encoder.embed_dim = i();
    else if (key == "encoder.base_patch") cfg.encoder.base_patch = i();
    else if (key == "encoder.seed") cfg.encoder.seed = u();
    else throw std::invalid_argument("unknown config key: " + key);
  }
}

std::map<std::string, std::string> ConfigToMap(const TrainConfig& cfg) {
  std::map<std::string, std::string> m;
  m["lr"] = FormatDouble(cfg.lr);
  m["weight_decay"] = FormatDouble(cfg.weight_decay);
  m["coarse_batch"] = std::to_string(cfg.coarse_batch);
  m["fine_batch_series"] = std::to_string(cfg.fine_batch_series);
  m["pretrain_epochs"] = std::to_string(cfg.pretrain_epochs);
  m["joint_epochs"] = std::to_string(cfg.joint_epochs);
  m["joint_steps"] = cfg.joint_steps ? std::to_string(*cfg.joint_steps) : "none";
  m["momentum_fine"] = FormatDouble(cfg.momentum_fine);
  m["momentum_coarse"] = FormatDouble(cfg.momentum_coarse);
  m["lambda"] = FormatDouble(cfg.lambda);
  m["emd_r"] = FormatDouble(cfg.emd_r);
  m["grad_clip"] = FormatDouble(cfg.grad_clip);
  m["seed"] = std::to_string(cfg.seed);
  m["text_seed"] = std::to_string(cfg.text_seed);
  m["threads"] = std::to_string(cfg.threads);
  m["token.base_patch"] = std::to_string(cfg.token.base_patch);
  m["token.loc_patch"] = std::to_string(cfg.token.loc_patch);
  m["token.percentile_p"] = FormatDouble(cfg.token.percentile_p);
  m["token.token_budget"] = std::to_string(cfg.token.token_budget);
  m["token.max_side"] = cfg.token.max_side ? std::to_string(*cfg.token.max_side) : "none";
  m["token.seed"] = std::to_string(cfg.token.seed);
  m["token.percentile_method"] =
      cfg.token.percentile_method == PercentileMethod::kLinear ? "linear" : "nearest_rank";
  m["encoder.d_model"] = std::to_string(cfg.encoder.d_model);
  m["encoder.n_heads"] = std::to_string(cfg.encoder.n_heads);
  m["encoder.n_layers"] = std::to_string(cfg.encoder.n_layers);
  m["encoder.mlp_ratio"] = std::to_string(cfg.encoder.mlp_ratio);
  m["encoder.pos_grid"] = std::to_string(cfg.encoder.pos_grid);
  m["encoder.embed_dim"] = std::to_string(cfg.encoder.embed_dim);
  m["encoder.base_patch"] = std::to_string(cfg.encoder.base_patch);
  m["encoder.seed"] = std::to_string(cfg.encoder.seed);
  return m;
}

Toggles Toggles::Parse(std::span<const std::string> names) {
  Toggles t;
  for (const std::string& n : names) {
    if (n == "no_fine") t.no_fine = true;
    else if (n == "no_coarse") t.no_coarse = true;
    else if (n == "sequential") t.sequential = true;
    else if (n == "no_difftoken") t.no_difftoken = true;
    else if (n == "no_ctalign") t.no_ctalign = true;
    else if (n == "no_rankreg") t.no_rankreg = true;
    else throw std::invalid_argument("unknown toggle: " + n);
  }
  if (t.no_fine && (t.no_coarse || t.sequential)) {
    throw std::invalid_argument("no_fine cannot combine with no_coarse or sequential");
  }
  return t;
}

std::vector<std::string> Toggles::Names() const {
  std::vector<std::string> out;
  if (no_fine) out.push_back("no_fine");
  if (no_coarse) out.push_back("no_coarse");
  if (sequential) out.push_back("sequential");
  if (no_difftoken) out.push_back("no_difftoken");
  if (no_ctalign) out.push_back("no_ctalign");
  if (no_rankreg) out.push_back("no_rankreg");
  return out;
}

std::string Toggles::Label() const {
  const auto names = Names();
  if (names.empty()) return "full";
  std::string out = names[0];
  for (std::size_t k = 1; k < names.size(); ++k) out += "+" + names[k];
  return out;
}

std::vector<CoarseExample> BuildCoarseDataset(std::span<const CoarseRecord> records,
                                              const std::filesystem::path& manifest,
                                              const DiffTokenConfig& token) {
  std::vector<CoarseExample> out;
  out.reserve(records.size());
  for (const CoarseRecord& r : records) {
    CoarseExample ex;
    ex.image = ReadImage(ResolvePath(manifest, r.image));
    ex.tokens = TokenizePlain(ex.image, token).seq;
    ex.dist = r.dist;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<FineSeries> BuildFineDataset(std::span<const SeriesRecord> records,
                                         const std::filesystem::path& manifest,
                                         int embed_dim, std::uint64_t text_seed) {
  std::vector<FineSeries> out;
  out.reserve(records.size());
  for (const SeriesRecord& r : records) {
    FineSeries s;
    s.series_id = r.series_id;
    s.source = SourceName(r.source);
    for (const std::string& img : r.images) s.images.push_back(ReadImage(ResolvePath(manifest, img)));
    s.ranking = r.gt_ranking;
    for (const TextRef& t : r.texts) {
      s.texts.push_back({t.i, t.j, LoadTextEmbedding(manifest, t.ref, embed_dim, text_seed)});
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string StepLog::ToJsonLine() const {
  nlohmann::json c = nlohmann::json::object();
  if (align) c["align"] = *align;
  if (rankreg) c["rankreg"] = *rankreg;
  if (emd) c["emd"] = *emd;
  nlohmann::json j{{"step", step}, {"stage", stage}, {"phase", phase}, {"loss", loss}};
  j["components"] = std::move(c);
  return j.dump();
}

StepResult FineStep(const ModelParams& params, std::span<const FineSeries* const> batch,
                    const TrainConfig& cfg, const Toggles& toggles, std::uint64_t step_seed) {
  if (batch.empty()) throw std::invalid_argument("empty fine batch");
  for (const FineSeries* s : batch) {
    if (s->images.size() < 2) {
      throw std::invalid_argument("fine series " + s->series_id + " has fewer than two images");
    }
    if (s->ranking.size() != s->images.size()) {
      throw std::invalid_argument("fine series " + s->series_id + " ranking does not cover every image");
    }
  }
  const int k = static_cast<int>(batch.size());
  struct PerSeries {
    GradMap grads;
    double loss = 0.0;
    std::optional<double> align;
    double rank = 0.0;
  };
  std::vector<PerSeries> results(k);
  ParallelFor(k, cfg.threads, [&](int b) {
    const FineSeries& s = *batch[b];
    const int n = static_cast<int>(s.images.size());
    Rng rng(MixSeed(step_seed, static_cast<std::uint64_t>(b)));
    nd::Tape tape;
    const BoundParams bound = BindParams(params, tape, /*trainable=*/true);
    std::vector<nd::Var> scores;
    std::vector<Encoded> enc;
    for (int i = 0; i < n; ++i) {
      int ref = static_cast<int>(rng.Below(n - 1));
      if (ref >= i) ++ref;
      const TokenSeq seq = toggles.no_difftoken ? TokenizePlain(s.images[i], cfg.token).seq
                                                : TokenizeDiff(s.images[i], s.images[ref], cfg.token).seq;
      enc.push_back(Encode(params.config, bound, seq, tape));
      scores.push_back(enc.back().score);
    }
    const nd::Var score_vec = nd::Concat(scores, 0);
    JointParts parts;
    parts.rankreg = toggles.no_rankreg ? PairwiseLogisticLoss(score_vec, s.ranking)
                                       : ListMleLoss(score_vec, s.ranking);
    double lambda = 0.0;
    if (!toggles.no_ctalign && cfg.lambda > 0 && !s.texts.empty()) {
      const TextPair& t = s.texts[rng.Below(s.texts.size())];
      const nd::Var et = tape.Constant(nd::Tensor::Vector(t.embedding));
      parts.align = CtAlignLoss(enc[t.i].embed, enc[t.j].embed, et);
      lambda = cfg.lambda;
    }
    const nd::Var loss = JointLoss(1, parts, LossConfig(cfg, lambda));
    const nd::Var scaled = nd::Scale(loss, 1.0 / k);
    results[b].grads = Collect(tape.Backward(scaled), bound);
    results[b].loss = loss.value().item();
    results[b].rank = parts.rankreg->value().item();
    if (parts.align) results[b].align = parts.align->value().item();
  });
  StepResult out;
  out.log.phase = "fine";
  std::vector<double> losses, ranks, aligns;
  for (PerSeries& r : results) {
    AddInto(out.grads, r.grads);
    losses.push_back(r.loss);
    ranks.push_back(r.rank);
    if (r.align) aligns.push_back(*r.align);
  }
  out.log.loss = Mean(losses);
  out.log.rankreg = Mean(ranks);
  if (!aligns.empty()) out.log.align = Mean(aligns);
  return out;
}

StepResult CoarseStep(const ModelParams& params, std::span<const CoarseExample* const> batch,
                      const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("empty coarse batch");
  constexpr int kChunk = 8;  // examples per tape
  const int n = static_cast<int>(batch.size());
  const int chunks = (n + kChunk - 1) / kChunk;
  std::vector<GradMap> grads(chunks);
  std::vector<double> sums(chunks, 0.0);
  const TrainLossConfig lc = LossConfig(cfg, 0.0);
  ParallelFor(chunks, cfg.threads, [&](int c) {
    nd::Tape tape;
    const BoundParams bound = BindParams(params, tape, /*trainable=*/true);
    std::vector<nd::Var> losses;
    for (int e = c * kChunk; e < std::min(n, (c + 1) * kChunk); ++e) {
      const Encoded enc = Encode(params.config, bound, batch[e]->tokens, tape);
      const nd::Var gt = tape.Constant(nd::Tensor::Vector(batch[e]->dist));
      JointParts parts;
      parts.emd = EmdLoss(enc.dist, gt, lc.emd_r);
      losses.push_back(JointLoss(0, parts, lc));
      sums[c] += losses.back().value().item();
    }
    const nd::Var total = nd::Scale(nd::Sum(nd::Concat(losses, 0)), 1.0 / n);
    grads[c] = Collect(tape.Backward(total), bound);
  });
  StepResult out;
  out.log.phase = "coarse";
  for (const GradMap& g : grads) AddInto(out.grads, g);
  out.log.loss = std::accumulate(sums.begin(), sums.end(), 0.0) / n;
  out.log.emd = out.log.loss;
  return out;
}

void MomentumSgd::Apply(ModelParams& params, const GradMap& grads, double lr, double momentum,
                        double weight_decay) {
  for (auto& [name, p] : params.tensors) {
    auto g = grads.find(name);
    if (g == grads.end()) throw std::invalid_argument("missing gradient for " + name);
    auto [it, inserted] = velocity_.try_emplace(name, nd::Tensor(p.shape(), 0.0));
    auto v = it->second.mutable_values();
    const auto gv = g->second.values();
    auto pv = p.mutable_values();
    for (std::size_t k = 0; k < pv.size(); ++k) {
      v[k] = momentum * v[k] + gv[k];
      pv[k] -= lr * (v[k] + weight_decay * pv[k]);
    }
  }
}

PretrainResult PretrainCoarse(ModelParams& params, std::span<const CoarseExample> coarse,
                              const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.Validate();
  if (coarse.empty()) throw std::invalid_argument("pretraining needs a non-empty coarse dataset");
  PretrainResult out;
  MomentumSgd opt;
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::vector<std::size_t> order(coarse.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(MixSeed(cfg.seed, kPretrainStream + epoch));
    rng.Shuffle(std::span<std::size_t>(order));
    double weighted = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.coarse_batch) {
      std::vector<const CoarseExample*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.coarse_batch); ++k) {
        batch.push_back(&coarse[order[k]]);
      }
      StepResult step = CoarseStep(params, batch, cfg);
      ClipGradients(step.grads, cfg.grad_clip);
      opt.Apply(params, step.grads, cfg.lr, cfg.momentum_coarse, 0.0);
      step.log.step = out.steps++;
      step.log.stage = "pretrain";
      weighted += step.log.loss * batch.size();
      if (hooks.on_step) hooks.on_step(step.log);
    }
    out.epoch_loss.push_back(weighted / coarse.size());
    if (hooks.on_epoch) hooks.on_epoch("pretrain", epoch + 1, params);
  }
  return out;
}

JointResult JointTrain(ModelParams& params, std::span<const CoarseExample> coarse,
                       std::span<const FineSeries> fine, const TrainConfig& cfg,
                       const Toggles& toggles, const TrainHooks& hooks, int first_step) {
  cfg.Validate();
  const bool use_fine = !toggles.no_fine;
  const bool use_coarse = !toggles.no_coarse && !toggles.sequential;
  if (use_fine && fine.empty()) throw std::invalid_argument("joint training needs fine series");
  if (use_coarse && coarse.empty()) throw std::invalid_argument("joint training needs coarse data");
  for (const FineSeries& s : fine) {
    if (s.images.size() < 2) {
      throw std::invalid_argument("fine series " + s.series_id + " has fewer than two images");
    }
  }
  const int fine_batches = use_fine ? Batches(fine.size(), cfg.fine_batch_series) : 0;
  const int coarse_batches = use_coarse ? Batches(coarse.size(), cfg.coarse_batch) : 0;
  const int per_epoch = use_fine && use_coarse ? 2 * std::max(fine_batches, coarse_batches)
                                               : std::max(fine_batches, coarse_batches);
  const int total = cfg.joint_steps ? *cfg.joint_steps : cfg.joint_epochs * per_epoch;

  Stream fine_stream(fine.size(), MixSeed(cfg.seed, kFineOrderStream));
  Stream coarse_stream(coarse.size(), MixSeed(cfg.seed, kCoarseOrderStream));
  MomentumSgd opt;
  JointResult out;
  for (int t = 0; t < total; ++t) {
    const int delta = use_fine && use_coarse ? (t % 2 == 0 ? 1 : 0) : (use_fine ? 1 : 0);
    const int step = first_step + t;
    StepResult result;
    if (delta == 1) {
      std::vector<const FineSeries*> batch;
      for (std::size_t k : fine_stream.Next(cfg.fine_batch_series)) batch.push_back(&fine[k]);
      result = FineStep(params, batch, cfg, toggles, MixSeed(cfg.seed, kFineStepStream + step));
    } else {
      std::vector<const CoarseExample*> batch;
      for (std::size_t k : coarse_stream.Next(cfg.coarse_batch)) batch.push_back(&coarse[k]);
      result = CoarseStep(params, batch, cfg);
    }
    ClipGradients(result.grads, cfg.grad_clip);
    opt.Apply(params, result.grads, cfg.lr, delta == 1 ? cfg.momentum_fine : cfg.momentum_coarse,
              cfg.weight_decay);
    result.log.step = step;
    result.log.stage = "joint";
    out.deltas.push_back(delta);
    ++out.steps;
    if (hooks.on_step) hooks.on_step(result.log);
    const bool epoch_end = per_epoch > 0 && ((t + 1) % per_epoch == 0 || t + 1 == total);
    if (epoch_end && hooks.on_epoch) hooks.on_epoch("joint", t / per_epoch + 1, params);
  }
  return out;
}

PipelineResult TrainPipeline(ModelParams& params, std::span<const CoarseExample> coarse,
                             std::span<const FineSeries> fine, const TrainConfig& cfg,
                             const Toggles& toggles, const TrainHooks& hooks) {
  PipelineResult out;
  if (!toggles.no_coarse && cfg.pretrain_epochs > 0) {
    out.pretrain = PretrainCoarse(params, coarse, cfg, hooks);
  }
  out.joint = JointTrain(params, coarse, fine, cfg, toggles, hooks, out.pretrain.steps);
  return out;
}

std::vector<double> ScoreSeries(const ModelParams& params, const FineSeries& series,
                                const DiffTokenConfig& token, bool difftoken) {
  const int n = static_cast<int>(series.images.size());
  std::vector<TokenSeq> seqs;
  if (!difftoken || n < 2) {
    for (const ImageBuf& img : series.images) seqs.push_back(TokenizePlain(img, token).seq);
    std::vector<double> out;
    for (const ScoreOutput& o : PredictBatch(params, seqs)) out.push_back(o.score);
    return out;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j != i) seqs.push_back(TokenizeDiff(series.images[i], series.images[j], token).seq);
    }
  }
  const std::vector<ScoreOutput> pred = PredictBatch(params, seqs);
  std::vector<double> out(n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < n - 1; ++r) out[i] += pred[i * (n - 1) + r].score;
    out[i] /= n - 1;
  }
  return out;
}

std::vector<double> ScoreCoarse(const ModelParams& params, std::span<const CoarseExample> coarse) {
  std::vector<TokenSeq> seqs;
  for (const CoarseExample& ex : coarse) seqs.push_back(ex.tokens);
  std::vector<double> out;
  for (const ScoreOutput& o : PredictBatch(params, seqs)) out.push_back(o.score);
  return out;
}

EvalReport Evaluate(const ModelParams& params, std::span<const FineSeries> fine,
                    std::span<const CoarseExample> coarse, const DiffTokenConfig& token,
                    bool difftoken, LengthWeight weight) {
  std::vector<SeriesEval> evals;
  for (const FineSeries& s : fine) {
    evals.push_back({s.source, ScoreSeries(params, s, token, difftoken), s.ranking});
  }
  std::vector<double> pred, gt;
  if (!coarse.empty()) {
    pred = ScoreCoarse(params, coarse);
    for (const CoarseExample& ex : coarse) gt.push_back(CoarseRecord{"", ex.dist}.mean());
  }
  return BuildEvalReport(evals, pred, gt, weight);
}

std::vector<AblationRow> AblationMatrix(const ModelParams& init,
                                        std::span<const CoarseExample> coarse_train,
                                        std::span<const FineSeries> fine_train,
                                        std::span<const CoarseExample> coarse_test,
                                        std::span<const FineSeries> fine_test,
                                        const TrainConfig& cfg, std::span<const Toggles> runs) {
  std::vector<AblationRow> rows;
  for (const Toggles& t : runs) {
    const auto start = std::chrono::steady_clock::now();
    ModelParams params = init;
    TrainPipeline(params, coarse_train, fine_train, cfg, t);
    AblationRow row;
    row.label = t.Label();
    row.report = Evaluate(params, fine_test, coarse_test, cfg.token, !t.no_difftoken);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string AblationTable(std::span<const AblationRow> rows) {
  std::ostringstream out;
  char line[200];
  std::snprintf(line, sizeof line, "%-28s %8s %8s %8s %8s %8s %8s %8s\n", "run", "Acc", "F1",
                "s-Acc", "s-SRCC", "SRCC", "PLCC", "seconds");
  out << line;
  for (const AblationRow& r : rows) {
    const auto& m = r.report.buckets.at("overall");
    const double srcc = r.report.coarse ? r.report.coarse->srcc : std::nan("");
    const double plcc = r.report.coarse ? r.report.coarse->plcc : std::nan("");
    std::snprintf(line, sizeof line, "%-28s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.1f\n",
                  r.label.c_str(), m.pair.acc, m.pair.f1, m.series.s_acc, m.series.s_srcc, srcc,
                  plcc, r.seconds);
    out << line;
  }
  return out.str();
}

}  // namespace fgaes
