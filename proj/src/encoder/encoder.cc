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

#include "fgaes/encoder.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fgaes/errors.h"
#include "fgaes/random.h"
#include "json.hpp"

namespace fgaes {
namespace {

using nd::Tensor;
using nd::Var;
using json = nlohmann::json;

constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "fgaes-checkpoint";
constexpr int kTrigramBuckets = 2048;

std::string Block(int layer, const std::string& name) {
  return "blocks." + std::to_string(layer) + "." + name;
}

// Visits every parameter path with its shape and initialization kind, in
// a fixed order.
enum class InitKind { kLinear, kZero, kOne, kSmall };

template <typename Fn>
void ForEachParam(const EncoderConfig& c, Fn&& fn) {
  const int d = c.d_model, hidden = c.d_model * c.mlp_ratio;
  fn("patch_proj.weight", nd::Shape{c.token_dim(), d}, InitKind::kLinear);
  fn("patch_proj.bias", nd::Shape{d}, InitKind::kZero);
  fn("pos_grid", nd::Shape{c.pos_grid, c.pos_grid, d}, InitKind::kSmall);
  fn("cls", nd::Shape{1, d}, InitKind::kSmall);
  for (int l = 0; l < c.n_layers; ++l) {
    fn(Block(l, "ln1.gain"), nd::Shape{d}, InitKind::kOne);
    fn(Block(l, "ln1.bias"), nd::Shape{d}, InitKind::kZero);
    for (const char* m : {"wq", "wk", "wv", "wo"}) {
      fn(Block(l, std::string("attn.") + m), nd::Shape{d, d}, InitKind::kLinear);
      fn(Block(l, std::string("attn.b") + (m + 1)), nd::Shape{d}, InitKind::kZero);
    }
    fn(Block(l, "ln2.gain"), nd::Shape{d}, InitKind::kOne);
    fn(Block(l, "ln2.bias"), nd::Shape{d}, InitKind::kZero);
    fn(Block(l, "mlp.w1"), nd::Shape{d, hidden}, InitKind::kLinear);
    fn(Block(l, "mlp.b1"), nd::Shape{hidden}, InitKind::kZero);
    fn(Block(l, "mlp.w2"), nd::Shape{hidden, d}, InitKind::kLinear);
    fn(Block(l, "mlp.b2"), nd::Shape{d}, InitKind::kZero);
  }
  fn("ln_final.gain", nd::Shape{d}, InitKind::kOne);
  fn("ln_final.bias", nd::Shape{d}, InitKind::kZero);
  fn("head.dist.weight", nd::Shape{d, c.n_bins}, InitKind::kLinear);
  fn("head.dist.bias", nd::Shape{c.n_bins}, InitKind::kZero);
  fn("head.embed.weight", nd::Shape{d, c.embed_dim}, InitKind::kLinear);
  fn("head.embed.bias", nd::Shape{c.embed_dim}, InitKind::kZero);
}

Var Linear(const BoundParams& p, Var x, const std::string& w,
           const std::string& b) {
  return nd::Add(nd::MatMul(x, p.at(w)), p.at(b));
}

Var Attention(const EncoderConfig& cfg, const BoundParams& p, int layer, Var x) {
  auto name = [&](const char* n) { return Block(layer, std::string("attn.") + n); };
  const Var q = Linear(p, x, name("wq"), name("bq"));
  const Var k = Linear(p, x, name("wk"), name("bk"));
  const Var v = Linear(p, x, name("wv"), name("bv"));
  const int dh = cfg.d_model / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(cfg.n_heads);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const Var qh = nd::Slice(q, 1, h * dh, dh);
    const Var kh = nd::Slice(k, 1, h * dh, dh);
    const Var vh = nd::Slice(v, 1, h * dh, dh);
    const Var att =
        nd::Softmax(nd::Scale(nd::MatMul(qh, nd::Transpose(kh)), scale), 1);
    heads.push_back(nd::MatMul(att, vh));
  }
  const Var merged = cfg.n_heads == 1 ? heads[0] : nd::Concat(heads, 1);
  return Linear(p, merged, name("wo"), name("bo"));
}

std::vector<double> ToVector(const Tensor& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

std::vector<double> Normalize(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw std::invalid_argument("cannot normalize a zero vector");
  for (double& x : v) x /= norm;
  return v;
}

std::uint64_t Fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ MixSeed(seed, 0x74726967);
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

json ConfigToJson(const EncoderConfig& c) {
  return json{{"d_model", c.d_model},     {"n_heads", c.n_heads},
              {"n_layers", c.n_layers},   {"mlp_ratio", c.mlp_ratio},
              {"pos_grid", c.pos_grid},   {"n_bins", c.n_bins},
              {"embed_dim", c.embed_dim}, {"base_patch", c.base_patch},
              {"seed", c.seed}};
}

EncoderConfig ConfigFromJson(const json& j) {
  EncoderConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.pos_grid = j.at("pos_grid").get<int>();
  c.n_bins = j.at("n_bins").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.base_patch = j.at("base_patch").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void EncoderConfig::Validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("encoder: ") + msg);
  };
  require(d_model >= 1 && n_heads >= 1, "d_model and n_heads must be positive");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(n_layers >= 1, "n_layers must be at least 1");
  require(mlp_ratio >= 1, "mlp_ratio must be at least 1");
  require(pos_grid >= 1, "pos_grid must be positive");
  require(n_bins == 10, "n_bins is fixed at 10");
  require(embed_dim >= 1, "embed_dim must be positive");
  require(base_patch >= 1, "base_patch must be positive");
}

const Tensor& ModelParams::at(const std::string& path) const {
  auto it = tensors.find(path);
  if (it == tensors.end()) throw std::out_of_range("no parameter " + path);
  return it->second;
}

Tensor& ModelParams::at(const std::string& path) {
  auto it = tensors.find(path);
  if (it == tensors.end()) throw std::out_of_range("no parameter " + path);
  return it->second;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& [path, t] : tensors) n += t.size();
  return n;
}

ModelParams InitParams(const EncoderConfig& cfg) {
  cfg.Validate();
  ModelParams params;
  params.config = cfg;
  std::uint64_t stream = 0;
  ForEachParam(cfg, [&](const std::string& path, nd::Shape shape, InitKind kind) {
    Rng rng(MixSeed(cfg.seed, ++stream));
    Tensor t(shape, kind == InitKind::kOne ? 1.0 : 0.0);
    if (kind == InitKind::kLinear) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (double& v : t.mutable_values()) v = rng.Normal() * scale;
    } else if (kind == InitKind::kSmall) {
      for (double& v : t.mutable_values()) v = rng.Normal() * 0.02;
    }
    params.tensors.emplace(path, std::move(t));
  });
  return params;
}

BoundParams BindParams(const ModelParams& params, nd::Tape& tape,
                       bool trainable) {
  BoundParams bound;
  for (const auto& [path, t] : params.tensors) {
    bound.emplace(path, trainable ? tape.Leaf(t) : tape.Constant(t));
  }
  return bound;
}

ScoreOutput Encoded::output() const {
  return ScoreOutput{ToVector(dist.value()), score.value().item(),
                     ToVector(embed.value())};
}

Tensor TokenMatrix(const TokenSeq& seq) {
  if (seq.tokens.empty()) throw std::invalid_argument("empty token sequence");
  const int dim = static_cast<int>(seq.tokens.front().pixels.size());
  Tensor m({static_cast<int>(seq.size()), dim});
  auto out = m.mutable_values();
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto& px = seq.tokens[t].pixels;
    if (static_cast<int>(px.size()) != dim) {
      throw std::invalid_argument("tokens have inconsistent pixel counts");
    }
    std::copy(px.begin(), px.end(), out.begin() + t * dim);
  }
  return m;
}

Encoded Encode(const EncoderConfig& cfg, const BoundParams& p,
               const TokenSeq& seq, nd::Tape& tape) {
  if (seq.tokens.empty()) throw std::invalid_argument("empty token sequence");
  if (seq.base_patch != cfg.base_patch) {
    throw std::invalid_argument("token base_patch " + std::to_string(seq.base_patch) +
                                " does not match encoder base_patch " +
                                std::to_string(cfg.base_patch));
  }
  std::vector<std::pair<double, double>> pos;
  pos.reserve(seq.size());
  for (const Token& t : seq.tokens) pos.emplace_back(t.u, t.v);

  const Var x = tape.Constant(TokenMatrix(seq));
  const Var tokens = nd::Add(Linear(p, x, "patch_proj.weight", "patch_proj.bias"),
                             InterpPosEmbed(p.at("pos_grid"), pos));
  Var h = nd::Concat(std::vector<Var>{p.at("cls"), tokens}, 0);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const Var a = nd::LayerNorm(h, p.at(Block(l, "ln1.gain")), p.at(Block(l, "ln1.bias")));
    h = nd::Add(h, Attention(cfg, p, l, a));
    const Var m = nd::LayerNorm(h, p.at(Block(l, "ln2.gain")), p.at(Block(l, "ln2.bias")));
    const Var hidden = nd::Gelu(Linear(p, m, Block(l, "mlp.w1"), Block(l, "mlp.b1")));
    h = nd::Add(h, Linear(p, hidden, Block(l, "mlp.w2"), Block(l, "mlp.b2")));
  }
  h = nd::LayerNorm(h, p.at("ln_final.gain"), p.at("ln_final.bias"));
  const Var cls = nd::Slice(h, 0, 0, 1);

  Tensor bins({cfg.n_bins, 1});
  for (int b = 0; b < cfg.n_bins; ++b) bins[b] = b + 1;
  const Var dist = nd::Softmax(Linear(p, cls, "head.dist.weight", "head.dist.bias"), 1);
  const Var score = nd::MatMul(dist, tape.Constant(std::move(bins)));
  const Var embed = Linear(p, cls, "head.embed.weight", "head.embed.bias");

  Encoded out;
  out.cls = nd::Reshape(cls, {cfg.d_model});
  out.dist = nd::Reshape(dist, {cfg.n_bins});
  out.score = nd::Reshape(score, {1});
  out.embed = nd::Reshape(embed, {cfg.embed_dim});
  return out;
}

ScoreOutput Predict(const ModelParams& params, const TokenSeq& seq) {
  return PredictBatch(params, std::span<const TokenSeq>(&seq, 1)).front();
}

std::vector<ScoreOutput> PredictBatch(const ModelParams& params,
                                      std::span<const TokenSeq> seqs) {
  constexpr std::size_t kChunk = 64;  // sequences per tape
  std::vector<ScoreOutput> out;
  out.reserve(seqs.size());
  for (std::size_t start = 0; start < seqs.size(); start += kChunk) {
    nd::Tape tape;
    const BoundParams bound = BindParams(params, tape, /*trainable=*/false);
    const std::size_t end = std::min(seqs.size(), start + kChunk);
    for (std::size_t i = start; i < end; ++i) {
      out.push_back(Encode(params.config, bound, seqs[i], tape).output());
    }
  }
  return out;
}

std::vector<double> TextEmbedPrecomputed(std::span<const double> v,
                                         int embed_dim) {
  if (static_cast<int>(v.size()) != embed_dim) {
    throw std::invalid_argument("precomputed text embedding has length " +
                                std::to_string(v.size()) + ", expected " +
                                std::to_string(embed_dim));
  }
  return Normalize(std::vector<double>(v.begin(), v.end()));
}

std::vector<double> TextEmbed(std::string_view text, int embed_dim,
                              std::uint64_t seed) {
  if (text.empty()) throw std::invalid_argument("empty text");
  if (embed_dim < 1) throw std::invalid_argument("embed_dim must be positive");
  std::string padded = "  ";
  for (unsigned char ch : text) padded.push_back(static_cast<char>(std::tolower(ch)));
  padded += ' ';
  std::map<std::uint64_t, int> bag;
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    ++bag[Fnv1a(std::string_view(padded).substr(i, 3), seed) % kTrigramBuckets];
  }
  std::vector<double> out(embed_dim, 0.0);
  for (const auto& [bucket, n] : bag) {
    Rng rng(MixSeed(seed, 0x70726f6a00000000ULL + bucket));
    for (double& v : out) v += n * rng.Normal();
  }
  return Normalize(std::move(out));
}

std::string CheckpointToJson(const ModelParams& params) {
  json doc;
  doc["format"] = kCheckpointFormat;
  doc["version"] = kCheckpointVersion;
  doc["config"] = ConfigToJson(params.config);
  json tensors = json::object();
  for (const auto& [path, t] : params.tensors) {
    tensors[path] = json{{"shape", t.shape()}, {"values", t.data()}};
  }
  doc["params"] = std::move(tensors);
  return doc.dump();
}

ModelParams CheckpointFromJson(std::string_view text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != kCheckpointFormat) {
      throw SchemaError("checkpoint: unknown format");
    }
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw SchemaError("checkpoint: unsupported version " +
                        doc.at("version").dump());
    }
    ModelParams params;
    params.config = ConfigFromJson(doc.at("config"));
    params.config.Validate();
    const json& tensors = doc.at("params");
    ForEachParam(params.config, [&](const std::string& path, nd::Shape shape,
                                    InitKind) {
      if (!tensors.contains(path)) throw SchemaError("checkpoint: missing " + path);
      const json& entry = tensors.at(path);
      if (entry.at("shape").get<nd::Shape>() != shape) {
        throw SchemaError("checkpoint: " + path + " has shape " +
                          entry.at("shape").dump() + ", expected " +
                          nd::ShapeToString(shape));
      }
      params.tensors.emplace(
          path, Tensor(shape, entry.at("values").get<std::vector<double>>()));
    });
    if (tensors.size() != params.tensors.size()) {
      throw SchemaError("checkpoint: unexpected extra parameters");
    }
    return params;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

void SaveCheckpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << CheckpointToJson(params);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ModelParams LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return CheckpointFromJson(ss.str());
}

}  // namespace fgaes
