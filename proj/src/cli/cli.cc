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

#include "fgaes/cli.h"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fgaes/calibrate.h"
#include "fgaes/data.h"
#include "fgaes/difftoken.h"
#include "fgaes/encoder.h"
#include "fgaes/errors.h"
#include "fgaes/gradsuite.h"
#include "fgaes/imaging.h"
#include "fgaes/metrics.h"
#include "fgaes/random.h"
#include "fgaes/refine.h"
#include "fgaes/trainer.h"
#include "json.hpp"

namespace fgaes {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void WriteText(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Shortest text that parses back to the same double.
std::string FormatDouble(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Records what a run read and wrote. Output paths are relative to the
// output directory so reruns into different directories stay identical.
class RunRecorder {
 public:
  RunRecorder(std::string command, fs::path out_dir)
      : command_(std::move(command)), out_dir_(std::move(out_dir)) {}

  void Seed(std::uint64_t seed) { seed_ = seed; }
  void Flag(const std::string& name, json value) { flags_[name] = std::move(value); }
  void Config(std::map<std::string, std::string> config) { config_ = std::move(config); }

  void Input(const fs::path& path) {
    inputs_.push_back({{"path", path.generic_string()}, {"sha256", Sha256File(path)}});
  }
  // One digest over (path, sha256) lines of every referenced file.
  void InputFiles(const std::string& label, const std::vector<fs::path>& files) {
    std::string lines;
    for (const fs::path& f : files) lines += f.generic_string() + "\t" + Sha256File(f) + "\n";
    inputs_.push_back({{"path", label},
                       {"files", files.size()},
                       {"sha256", Sha256Hex({reinterpret_cast<const std::uint8_t*>(lines.data()),
                                             lines.size()})}});
  }

  void Output(const fs::path& rel) {
    outputs_.push_back({{"path", rel.generic_string()}, {"sha256", Sha256File(out_dir_ / rel)}});
  }
  // One digest over every regular file below out_dir/rel, in path order.
  void OutputTree(const fs::path& rel) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(out_dir_ / rel)) {
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), out_dir_));
    }
    std::sort(files.begin(), files.end());
    std::string lines;
    for (const fs::path& f : files) {
      lines += f.generic_string() + "\t" + Sha256File(out_dir_ / f) + "\n";
    }
    outputs_.push_back({{"path", rel.generic_string() + "/"},
                        {"files", files.size()},
                        {"sha256", Sha256Hex({reinterpret_cast<const std::uint8_t*>(lines.data()),
                                              lines.size()})}});
  }

  // Writes config.txt and run_manifest.json.
  void Finish() {
    std::string text;
    for (const auto& [k, v] : config_) text += k + "=" + v + "\n";
    WriteText(out_dir_ / "config.txt", text);
    Output("config.txt");
    json j;
    j["tool"] = "fgaes";
    j["command"] = command_;
    j["seed"] = seed_;
    j["flags"] = flags_;
    j["config"] = config_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    WriteText(out_dir_ / "run_manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  fs::path out_dir_;
  std::uint64_t seed_ = 0;
  json flags_ = json::object();
  std::map<std::string, std::string> config_;
  json inputs_ = json::array();
  json outputs_ = json::array();
};

std::map<std::string, std::string> LoadConfigFile(const std::string& path) {
  if (path.empty()) return {};
  try {
    return ParseFlatConfig(ReadText(path));
  } catch (const std::invalid_argument& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

// Applies kv to named setters; unknown keys and bad values are usage errors.
using Setters = std::map<std::string, std::function<void(const std::string&)>>;

void ApplySetters(const Setters& setters, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    const auto it = setters.find(k);
    if (it == setters.end()) throw UsageError("unknown config key '" + k + "'");
    try {
      it->second(v);
    } catch (const std::logic_error&) {
      throw UsageError("config key '" + k + "': malformed value '" + v + "'");
    }
  }
}

template <typename T>
std::function<void(const std::string&)> Bind(T& field) {
  return [&field](const std::string& v) {
    std::size_t used = 0;
    if constexpr (std::is_same_v<T, double>) {
      field = std::stod(v, &used);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (v != "true" && v != "false") throw std::invalid_argument(v);
      field = v == "true";
      used = v.size();
    } else {
      field = static_cast<T>(std::stoll(v, &used));
    }
    if (used != v.size()) throw std::invalid_argument(v);
  };
}

std::map<std::string, std::string> Describe(const Setters& setters,
                                            const std::function<std::string(const std::string&)>& get) {
  std::map<std::string, std::string> out;
  for (const auto& [k, _] : setters) out[k] = get(k);
  return out;
}

// Flags shared by the model commands.
struct ModelFlags {
  std::string config;
  std::string preset = "desk";
  std::optional<int> budget;
  std::optional<int> loc_patch;
  std::optional<double> percentile_p;
  std::optional<double> lambda;
};

void AddModelFlags(CLI::App* app, ModelFlags& f) {
  app->add_option("--config", f.config, "flat key=value config layered over the preset");
  app->add_option("--preset", f.preset, "defaults: desk (small synthetic data) or standard (224 px images)")
      ->check(CLI::IsMember({"desk", "standard"}));
  app->add_option("--budget", f.budget, "token budget per image");
  app->add_option("--loc-patch", f.loc_patch, "localization patch side");
  app->add_option("--percentile-p", f.percentile_p, "decisive-region percentile");
  app->add_option("--lambda", f.lambda, "text-alignment weight");
}

TrainConfig ResolveTrainConfig(const ModelFlags& f, std::uint64_t seed, RunRecorder* rec) {
  TrainConfig cfg = f.preset == "standard" ? TrainConfig{} : TrainConfig::DeskScale();
  std::map<std::string, std::string> kv = LoadConfigFile(f.config);
  if (f.budget) kv["token.token_budget"] = std::to_string(*f.budget);
  if (f.loc_patch) kv["token.loc_patch"] = std::to_string(*f.loc_patch);
  if (f.percentile_p) kv["token.percentile_p"] = FormatDouble(*f.percentile_p);
  if (f.lambda) kv["lambda"] = FormatDouble(*f.lambda);
  try {
    ApplyConfigOverrides(cfg, kv);
    cfg.Validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  cfg.seed = seed;
  cfg.encoder.seed = seed;
  cfg.threads = ThreadsFromEnv();
  if (rec) {
    if (!f.config.empty()) rec->Input(f.config);
    rec->Flag("preset", f.preset);
    std::map<std::string, std::string> resolved = ConfigToMap(cfg);
    resolved.erase("threads");  // results do not depend on it
    rec->Config(std::move(resolved));
  }
  return cfg;
}

std::vector<fs::path> SeriesImagePaths(const std::vector<SeriesRecord>& recs, const fs::path& manifest) {
  std::vector<fs::path> out;
  for (const SeriesRecord& r : recs) {
    for (const std::string& img : r.images) out.push_back(ResolvePath(manifest, img));
  }
  return out;
}

std::vector<fs::path> CoarseImagePaths(const std::vector<CoarseRecord>& recs, const fs::path& manifest) {
  std::vector<fs::path> out;
  for (const CoarseRecord& r : recs) out.push_back(ResolvePath(manifest, r.image));
  return out;
}

Toggles ParseToggles(const std::vector<std::string>& names) {
  std::vector<std::string> flat;
  for (const std::string& n : names) {
    std::stringstream ss(n);
    std::string part;
    while (std::getline(ss, part, '+')) {
      if (!part.empty() && part != "full") flat.push_back(part);
    }
  }
  try {
    return Toggles::Parse(flat);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

LengthWeight ParseWeight(const std::string& w) {
  if (w == "n") return LengthWeight::kImages;
  if (w == "n-1") return LengthWeight::kPairs;
  throw UsageError("--weight must be n or n-1");
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  SynthFineConfig fine;
  SynthCoarseConfig coarse;
  int annotators = 10;
  double flip = 0.1;
};

int CmdSynth(SynthOptions& o, std::ostream& out) {
  Setters setters{{"n_series", Bind(o.fine.n_series)},     {"min_len", Bind(o.fine.min_len)},
                  {"max_len", Bind(o.fine.max_len)},       {"image_size", Bind(o.fine.image_size)},
                  {"n_coarse", Bind(o.coarse.n)},          {"n_scenes", Bind(o.coarse.n_scenes)},
                  {"sigma", Bind(o.coarse.sigma)},         {"annotators", Bind(o.annotators)},
                  {"flip", Bind(o.flip)}};
  ApplySetters(setters, LoadConfigFile(o.config));
  o.coarse.image_size = o.fine.image_size;
  o.fine.seed = o.seed;
  o.coarse.seed = MixSeed(o.seed, 0x636f61727365ULL);

  const fs::path dir = o.out;
  RunRecorder rec("synth", dir);
  rec.Seed(o.seed);
  if (!o.config.empty()) rec.Input(o.config);
  rec.Config(Describe(setters, [&](const std::string& k) -> std::string {
    if (k == "n_series") return std::to_string(o.fine.n_series);
    if (k == "min_len") return std::to_string(o.fine.min_len);
    if (k == "max_len") return std::to_string(o.fine.max_len);
    if (k == "image_size") return std::to_string(o.fine.image_size);
    if (k == "n_coarse") return std::to_string(o.coarse.n);
    if (k == "n_scenes") return std::to_string(o.coarse.n_scenes);
    if (k == "sigma") return FormatDouble(o.coarse.sigma);
    if (k == "annotators") return std::to_string(o.annotators);
    return FormatDouble(o.flip);
  }));

  std::vector<SynthFineSeries> fine;
  std::vector<SynthCoarseSample> coarse;
  try {
    fine = SynthFine(o.fine);
    coarse = SynthCoarse(o.coarse);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  fs::create_directories(dir);
  const std::vector<SeriesRecord> series = WriteSynthFine(fine, dir);
  const std::vector<CoarseRecord> coarse_recs = WriteSynthCoarse(coarse, dir);
  WriteSeriesManifest(series, dir / "series.jsonl");
  WriteCoarseManifest(coarse_recs, dir / "coarse.jsonl");

  std::vector<PairVoteRecord> votes;
  for (std::size_t s = 0; s < series.size(); ++s) {
    Rng rng(MixSeed(o.seed, 0x766f746500000000ULL + s));
    const auto v = SimulateVotes(rng, series[s].gt_ranking, o.annotators, o.flip, series[s].series_id);
    votes.insert(votes.end(), v.begin(), v.end());
  }
  WriteVotesManifest(votes, dir / "votes.jsonl");

  const auto fs_split = SplitSeries(series, MixSeed(o.seed, 3));
  const auto cs_split = SplitCoarse(coarse_recs, MixSeed(o.seed, 4));
  WriteSeriesManifest(fs_split.train, dir / "series_train.jsonl");
  WriteSeriesManifest(fs_split.val, dir / "series_val.jsonl");
  WriteSeriesManifest(fs_split.test, dir / "series_test.jsonl");
  WriteCoarseManifest(cs_split.train, dir / "coarse_train.jsonl");
  WriteCoarseManifest(cs_split.val, dir / "coarse_val.jsonl");
  WriteCoarseManifest(cs_split.test, dir / "coarse_test.jsonl");

  for (const char* f : {"series.jsonl", "coarse.jsonl", "votes.jsonl", "series_train.jsonl",
                        "series_val.jsonl", "series_test.jsonl", "coarse_train.jsonl",
                        "coarse_val.jsonl", "coarse_test.jsonl"}) {
    rec.Output(f);
  }
  rec.OutputTree("images");
  rec.Finish();
  out << json{{"series", series.size()},
              {"coarse", coarse_recs.size()},
              {"votes", votes.size()},
              {"split",
               {{"series", {fs_split.train.size(), fs_split.val.size(), fs_split.test.size()}},
                {"coarse", {cs_split.train.size(), cs_split.val.size(), cs_split.test.size()}}}}}
             .dump()
      << "\n";
  return kExitOk;
}

// ------------------------------------------------------------ calibrate

struct CalibrateOptions {
  std::string manifest;
  std::string out;
  double band = 0.15;
};

int CmdCalibrate(const CalibrateOptions& o, std::ostream& out) {
  if (!(o.band >= 0.0 && o.band <= 0.5)) throw UsageError("--band must be in [0, 0.5]");
  const fs::path dir = o.out;
  RunRecorder rec("calibrate", dir);
  rec.Flag("band", o.band);
  rec.Config({{"band", FormatDouble(o.band)}});
  std::vector<std::string> warnings;
  const auto votes = LoadVotesManifest(o.manifest, &warnings);
  rec.Input(o.manifest);
  const auto calibrated = CalibrateVotes(votes, o.band);
  std::string text;
  int ranked = 0, conflicts = 0, unranked = 0;
  for (const CalibratedSeries& c : calibrated) {
    text += CalibratedToJsonLine(c) + "\n";
    if (c.result.conflict()) {
      ++conflicts;
    } else if (c.result.ok()) {
      ++ranked;
    } else {
      ++unranked;
    }
  }
  WriteText(dir / "calibrated.jsonl", text);
  rec.Output("calibrated.jsonl");
  rec.Finish();
  out << json{{"series", calibrated.size()},
              {"ranked", ranked},
              {"conflicts", conflicts},
              {"unranked", unranked},
              {"warnings", warnings}}
             .dump()
      << "\n";
  return kExitOk;
}

// --------------------------------------------------------------- refine

struct RefineOptions {
  std::string manifest;
  std::string out;
  std::string config;
  RefineConfig cfg;
  std::optional<double> t2i_threshold;
};

int CmdRefine(RefineOptions& o, std::ostream& out) {
  double t2i = o.cfg.t2i_threshold.value_or(-1.0);
  Setters setters{{"fraction", Bind(o.cfg.fraction)},   {"per_category", Bind(o.cfg.per_category)},
                  {"iou_high", Bind(o.cfg.iou_high)},   {"iou_low", Bind(o.cfg.iou_low)},
                  {"t2i_threshold", Bind(t2i)},         {"max_side", Bind(o.cfg.max_side)}};
  ApplySetters(setters, LoadConfigFile(o.config));
  if (t2i >= 0.0) o.cfg.t2i_threshold = t2i;
  if (o.t2i_threshold) o.cfg.t2i_threshold = o.t2i_threshold;
  if (!(o.cfg.fraction > 0.0 && o.cfg.fraction < 1.0)) throw UsageError("fraction must be in (0, 1)");
  if (!(o.cfg.iou_low <= o.cfg.iou_high)) throw UsageError("iou_low must not exceed iou_high");

  const fs::path dir = o.out;
  RunRecorder rec("refine", dir);
  rec.Config({{"fraction", FormatDouble(o.cfg.fraction)},
              {"per_category", o.cfg.per_category ? "true" : "false"},
              {"iou_high", FormatDouble(o.cfg.iou_high)},
              {"iou_low", FormatDouble(o.cfg.iou_low)},
              {"t2i_threshold", o.cfg.t2i_threshold ? FormatDouble(*o.cfg.t2i_threshold) : "none"},
              {"max_side", std::to_string(o.cfg.max_side)}});
  if (!o.config.empty()) rec.Input(o.config);
  const auto records = LoadSeriesManifest(o.manifest);
  rec.Input(o.manifest);
  rec.InputFiles("series images", SeriesImagePaths(records, o.manifest));

  RefineReport report = Refine(records, o.manifest, o.cfg);
  fs::create_directories(dir);
  WriteRefineReport(report, dir / "refine_report.jsonl");
  // Image paths are rewritten relative to the output directory.
  const fs::path abs_dir = fs::absolute(dir);
  for (SeriesRecord& r : report.refined) {
    for (std::string& img : r.images) {
      img = fs::relative(fs::absolute(ResolvePath(o.manifest, img)), abs_dir).generic_string();
    }
  }
  WriteSeriesManifest(report.refined, dir / "refined.jsonl");
  rec.Output("refine_report.jsonl");
  rec.Output("refined.jsonl");
  rec.Finish();
  int removed = 0;
  for (const RefineEntry& e : report.entries) removed += e.reason.has_value();
  out << json{{"series_in", records.size()},
              {"series_out", report.refined.size()},
              {"images_removed", removed},
              {"dropped_series", report.dropped_series},
              {"cutoffs", report.cutoffs}}
             .dump()
      << "\n";
  return kExitOk;
}

// ------------------------------------------------------------- tokenize

struct TokenizeOptions {
  std::string image;
  std::string reference;
  std::string out;
  bool overlay = false;
  std::uint64_t seed = 0;
  ModelFlags model;
};

int CmdTokenize(const TokenizeOptions& o, std::ostream& out) {
  if (o.overlay && o.out.empty()) throw UsageError("--overlay needs --out");
  std::optional<RunRecorder> rec;
  if (!o.out.empty()) rec.emplace("tokenize", o.out);
  TrainConfig cfg = ResolveTrainConfig(o.model, o.seed, rec ? &*rec : nullptr);
  DiffTokenConfig token = cfg.token;
  token.seed = o.seed;
  if (rec) {
    rec->Seed(o.seed);
    std::map<std::string, std::string> tk;
    for (const auto& [k, v] : ConfigToMap(cfg)) {
      if (k.rfind("token.", 0) == 0) tk[k] = v;
    }
    rec->Config(tk);
  }
  const ImageBuf x = ReadImage(o.image);
  Tokenization t;
  try {
    if (o.reference.empty()) {
      t = TokenizePlain(x, token);
    } else {
      t = TokenizeDiff(x, ReadImage(o.reference), token);
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const std::string layout = TokenLayoutJson(t, token);
  if (!rec) {
    out << layout << "\n";
    return kExitOk;
  }
  rec->Input(o.image);
  if (!o.reference.empty()) rec->Input(o.reference);
  const fs::path dir = o.out;
  WriteText(dir / "tokens.json", layout + "\n");
  rec->Output("tokens.json");
  if (o.overlay) {
    WriteImage(RenderDecisiveOverlay(x, t, token), dir / "overlay.png");
    rec->Output("overlay.png");
  }
  rec->Finish();
  out << json{{"tokens", t.seq.size()},
              {"fine", t.seq.size() - std::count_if(t.seq.tokens.begin(), t.seq.tokens.end(),
                                                    [](const Token& k) {
                                                      return k.scale == TokenScale::kCoarse;
                                                    })},
              {"decisive_cells", t.decisive.size()}}
             .dump()
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::uint64_t seed = 0;
  std::string manifest;
  std::string coarse;
  std::string out;
  std::string init;
  std::vector<std::string> toggles;
  ModelFlags model;
};

struct LoadedData {
  std::vector<FineSeries> fine;
  std::vector<CoarseExample> coarse;
};

LoadedData LoadData(const std::string& manifest, const std::string& coarse, const TrainConfig& cfg,
                    RunRecorder* rec, const std::string& label) {
  LoadedData d;
  if (!manifest.empty()) {
    const auto recs = LoadSeriesManifest(manifest);
    if (rec) {
      rec->Input(manifest);
      rec->InputFiles(label + " series images", SeriesImagePaths(recs, manifest));
    }
    d.fine = BuildFineDataset(recs, manifest, cfg.encoder.embed_dim, cfg.text_seed);
  }
  if (!coarse.empty()) {
    const auto recs = LoadCoarseManifest(coarse);
    if (rec) {
      rec->Input(coarse);
      rec->InputFiles(label + " coarse images", CoarseImagePaths(recs, coarse));
    }
    d.coarse = BuildCoarseDataset(recs, coarse, cfg.token);
  }
  return d;
}

int CmdTrain(const TrainOptions& o, std::ostream& out) {
  const fs::path dir = o.out;
  RunRecorder rec("train", dir);
  rec.Seed(o.seed);
  const Toggles toggles = ParseToggles(o.toggles);
  rec.Flag("toggles", toggles.Names());
  const TrainConfig cfg = ResolveTrainConfig(o.model, o.seed, &rec);
  if (o.manifest.empty() && !toggles.no_fine) throw UsageError("--manifest is required unless no_fine");
  if (o.coarse.empty() && !toggles.no_coarse) throw UsageError("--coarse is required unless no_coarse");
  const LoadedData d = LoadData(toggles.no_fine ? "" : o.manifest,
                                toggles.no_coarse ? "" : o.coarse, cfg, &rec, "train");
  ModelParams params;
  if (o.init.empty()) {
    params = InitParams(cfg.encoder);
  } else {
    params = LoadCheckpoint(o.init);
    rec.Input(o.init);
    if (!(params.config == cfg.encoder)) {
      EncoderConfig want = cfg.encoder;
      want.seed = params.config.seed;
      if (!(params.config == want)) throw UsageError("--init checkpoint architecture differs from the config");
    }
  }

  fs::create_directories(dir);
  std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
  if (!log) throw std::runtime_error("cannot write " + (dir / "train_log.jsonl").string());
  TrainHooks hooks;
  hooks.on_step = [&](const StepLog& l) { log << l.ToJsonLine() << "\n"; };
  hooks.on_epoch = [&](const std::string& stage, int epoch, const ModelParams&) {
    log << json{{"event", "epoch_end"}, {"stage", stage}, {"epoch", epoch}}.dump() << "\n";
  };
  const PipelineResult result = TrainPipeline(params, d.coarse, d.fine, cfg, toggles, hooks);
  log.close();
  SaveCheckpoint(params, dir / "checkpoint.json");
  const json summary{{"pretrain_epoch_loss", result.pretrain.epoch_loss},
                     {"pretrain_steps", result.pretrain.steps},
                     {"joint_steps", result.joint.steps},
                     {"fine_series", d.fine.size()},
                     {"coarse_images", d.coarse.size()},
                     {"toggles", toggles.Label()}};
  WriteText(dir / "train_summary.json", summary.dump(2) + "\n");
  rec.Output("checkpoint.json");
  rec.Output("train_log.jsonl");
  rec.Output("train_summary.json");
  rec.Finish();
  out << summary.dump() << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- eval

struct EvalOptions {
  std::uint64_t seed = 0;
  std::string manifest;
  std::string coarse;
  std::string checkpoint;
  std::string predictions;
  std::string out;
  std::string weight = "n";
  std::string format = "table";
  bool plain = false;
  ModelFlags model;
};

// Predictions document: {"series": {id: [score per image in record order]},
// "coarse": {image: score}}.
EvalReport EvalFromPredictions(const EvalOptions& o, LengthWeight weight) {
  json doc;
  try {
    doc = json::parse(ReadText(o.predictions));
  } catch (const json::exception& e) {
    throw SchemaError(o.predictions + ": " + e.what());
  }
  auto number = [&](const json& v, const std::string& where) {
    if (!v.is_number()) throw SchemaError(o.predictions + ": " + where + " is not a number");
    return v.get<double>();
  };
  std::vector<SeriesEval> series;
  if (!o.manifest.empty()) {
    const auto recs = LoadSeriesManifest(o.manifest, LoadOptions{.check_images = false});
    for (const SeriesRecord& r : recs) {
      if (!doc.contains("series") || !doc["series"].contains(r.series_id)) {
        throw SchemaError(o.predictions + ": no predictions for series " + r.series_id);
      }
      const json& arr = doc["series"][r.series_id];
      if (!arr.is_array() || static_cast<int>(arr.size()) != r.size()) {
        throw SchemaError(o.predictions + ": series " + r.series_id + " needs " +
                          std::to_string(r.size()) + " scores");
      }
      SeriesEval s{SourceName(r.source), {}, r.gt_ranking};
      for (const json& v : arr) s.scores.push_back(number(v, "series " + r.series_id));
      series.push_back(std::move(s));
    }
  }
  std::vector<double> pred, gt;
  if (!o.coarse.empty()) {
    const auto recs = LoadCoarseManifest(o.coarse, LoadOptions{.check_images = false});
    for (const CoarseRecord& r : recs) {
      if (!doc.contains("coarse") || !doc["coarse"].contains(r.image)) {
        throw SchemaError(o.predictions + ": no prediction for coarse image " + r.image);
      }
      pred.push_back(number(doc["coarse"][r.image], "coarse " + r.image));
      gt.push_back(r.mean());
    }
  }
  return BuildEvalReport(series, pred, gt, weight);
}

int CmdEval(const EvalOptions& o, std::ostream& out) {
  if (o.checkpoint.empty() == o.predictions.empty()) {
    throw UsageError("give exactly one of --checkpoint or --predictions");
  }
  if (o.manifest.empty() && o.coarse.empty()) throw UsageError("nothing to evaluate: give --manifest and/or --coarse");
  if (o.format != "table" && o.format != "json") throw UsageError("--format must be table or json");
  const LengthWeight weight = ParseWeight(o.weight);
  std::optional<RunRecorder> rec;
  if (!o.out.empty()) {
    rec.emplace("eval", o.out);
    rec->Seed(o.seed);
    rec->Flag("weight", o.weight);
  }
  EvalReport report;
  if (!o.predictions.empty()) {
    if (rec) {
      rec->Input(o.predictions);
      if (!o.manifest.empty()) rec->Input(o.manifest);
      if (!o.coarse.empty()) rec->Input(o.coarse);
      rec->Config({{"weight", o.weight}});
    }
    report = EvalFromPredictions(o, weight);
  } else {
    TrainConfig cfg = ResolveTrainConfig(o.model, o.seed, rec ? &*rec : nullptr);
    const ModelParams params = LoadCheckpoint(o.checkpoint);
    if (params.config.base_patch != cfg.token.base_patch) {
      throw UsageError("checkpoint base_patch " + std::to_string(params.config.base_patch) +
                       " differs from token.base_patch " + std::to_string(cfg.token.base_patch));
    }
    cfg.encoder = params.config;
    if (rec) rec->Input(o.checkpoint);
    const LoadedData d = LoadData(o.manifest, o.coarse, cfg, rec ? &*rec : nullptr, "eval");
    if (rec) rec->Flag("plain", o.plain);
    report = Evaluate(params, d.fine, d.coarse, cfg.token, !o.plain, weight);
  }
  if (rec) {
    WriteText(fs::path(o.out) / "eval.json", report.ToJson() + "\n");
    WriteText(fs::path(o.out) / "eval.txt", report.ToTable());
    rec->Output("eval.json");
    rec->Output("eval.txt");
    rec->Finish();
  }
  out << (o.format == "json" ? report.ToJson() + "\n" : report.ToTable());
  return kExitOk;
}

// ------------------------------------------------------------ gradcheck

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::string out;
};

int CmdGradcheck(const GradcheckOptions& o, std::ostream& out) {
  const auto entries = RunGradientSuite(o.seed);
  const bool pass = GradientSuitePasses(entries);
  json j = json::array();
  char line[128];
  for (const GradSuiteEntry& e : entries) {
    std::snprintf(line, sizeof line, "%-18s max_rel_error %.3e  coords %6zu  %s\n", e.name.c_str(),
                  e.max_rel_error, e.coordinates, e.max_rel_error < kGradTolerance ? "PASS" : "FAIL");
    out << line;
    j.push_back({{"name", e.name}, {"max_rel_error", e.max_rel_error}, {"coordinates", e.coordinates}});
  }
  out << (pass ? "all gradients within 1e-5\n" : "gradient check FAILED\n");
  if (!o.out.empty()) {
    RunRecorder rec("gradcheck", o.out);
    rec.Seed(o.seed);
    rec.Config({{"tolerance", FormatDouble(kGradTolerance)}});
    WriteText(fs::path(o.out) / "gradcheck.json",
              json{{"entries", j}, {"tolerance", kGradTolerance}, {"pass", pass}}.dump(2) + "\n");
    rec.Output("gradcheck.json");
    rec.Finish();
  }
  return pass ? kExitOk : kExitCheckFailed;
}

// --------------------------------------------------------------- ablate

struct AblateOptions {
  std::uint64_t seed = 0;
  std::string manifest;
  std::string coarse;
  std::string test_manifest;
  std::string test_coarse;
  std::string out;
  std::vector<std::string> toggles;
  ModelFlags model;
};

int CmdAblate(const AblateOptions& o, std::ostream& out) {
  const fs::path dir = o.out;
  RunRecorder rec("ablate", dir);
  rec.Seed(o.seed);
  std::vector<Toggles> runs{Toggles{}};
  for (const std::string& t : o.toggles) {
    const Toggles parsed = ParseToggles({t});
    if (parsed.Label() == "full") continue;
    runs.push_back(parsed);
  }
  json labels = json::array();
  for (const Toggles& t : runs) labels.push_back(t.Label());
  rec.Flag("runs", labels);
  const TrainConfig cfg = ResolveTrainConfig(o.model, o.seed, &rec);
  const LoadedData train = LoadData(o.manifest, o.coarse, cfg, &rec, "train");
  const LoadedData test = LoadData(o.test_manifest, o.test_coarse, cfg, &rec, "test");
  const ModelParams init = InitParams(cfg.encoder);
  std::vector<AblationRow> rows =
      AblationMatrix(init, train.coarse, train.fine, test.coarse, test.fine, cfg, runs);
  json j = json::array();
  for (const AblationRow& r : rows) {
    j.push_back({{"label", r.label}, {"report", json::parse(r.report.ToJson())}});
  }
  fs::create_directories(dir);
  WriteText(dir / "ablation.json", j.dump(2) + "\n");
  const std::string table = AblationTable(rows);
  WriteText(dir / "ablation.txt", table);
  rec.Output("ablation.json");
  rec.Finish();
  out << table;
  return kExitOk;
}

// ------------------------------------------------------------- dispatch

void AddSeed(CLI::App* app, std::uint64_t& seed) {
  app->add_option("--seed", seed, "random seed");
}

}  // namespace

std::string ErrorRecordJson(std::string_view command, std::string_view kind,
                            std::string_view message, int exit_code) {
  return json{{"command", command}, {"error", kind}, {"message", message}, {"exit_code", exit_code}}
      .dump();
}

int ThreadsFromEnv() {
  const char* v = std::getenv("FGAES_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) {
    throw UsageError(std::string("FGAES_THREADS must be a positive integer, got '") + v + "'");
  }
  return static_cast<int>(n);
}

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fgaes: fine-grained image aesthetic assessment toolkit", "fgaes"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "generate the synthetic fine and coarse benchmark");
  AddSeed(c_synth, synth.seed);
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--config", synth.config, "flat key=value synth config");

  CalibrateOptions calibrate;
  auto* c_cal = app.add_subcommand("calibrate", "turn pair votes into conflict-checked rankings");
  c_cal->add_option("--manifest", calibrate.manifest, "votes JSONL")->required();
  c_cal->add_option("--out", calibrate.out, "output directory")->required();
  c_cal->add_option("--band", calibrate.band, "ambiguity band around 0.5");
  std::uint64_t cal_seed = 0;
  AddSeed(c_cal, cal_seed);

  RefineOptions refine;
  auto* c_ref = app.add_subcommand("refine", "filter outliers, crop IoU bands and low T2I scores");
  c_ref->add_option("--manifest", refine.manifest, "series JSONL")->required();
  c_ref->add_option("--out", refine.out, "output directory")->required();
  c_ref->add_option("--config", refine.config, "flat key=value refine config");
  c_ref->add_option("--t2i-threshold", refine.t2i_threshold, "drop images with T2I score below");

  TokenizeOptions tokenize;
  auto* c_tok = app.add_subcommand("tokenize", "show the token layout for an image");
  c_tok->add_option("--image", tokenize.image, "image to tokenize")->required();
  c_tok->add_option("--reference", tokenize.reference, "reference image; plain tokens without it");
  c_tok->add_option("--out", tokenize.out, "output directory; JSON goes to stdout without it");
  c_tok->add_flag("--overlay", tokenize.overlay, "write overlay.png with decisive cells outlined");
  AddSeed(c_tok, tokenize.seed);
  AddModelFlags(c_tok, tokenize.model);

  TrainOptions train;
  auto* c_train = app.add_subcommand("train", "coarse pretraining then alternating joint training");
  AddSeed(c_train, train.seed);
  c_train->add_option("--manifest", train.manifest, "fine series JSONL");
  c_train->add_option("--coarse", train.coarse, "coarse JSONL");
  c_train->add_option("--out", train.out, "output directory")->required();
  c_train->add_option("--init", train.init, "initial checkpoint");
  c_train->add_option("--toggle", train.toggles, "ablation toggle")->allow_extra_args(false);
  AddModelFlags(c_train, train.model);

  EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "score a model or a predictions file");
  AddSeed(c_eval, eval.seed);
  c_eval->add_option("--manifest", eval.manifest, "fine series JSONL");
  c_eval->add_option("--coarse", eval.coarse, "coarse JSONL");
  c_eval->add_option("--checkpoint", eval.checkpoint, "model checkpoint");
  c_eval->add_option("--predictions", eval.predictions, "precomputed scores JSON");
  c_eval->add_option("--out", eval.out, "output directory");
  c_eval->add_option("--weight", eval.weight, "series length weight: n or n-1");
  c_eval->add_option("--format", eval.format, "stdout format: table or json");
  c_eval->add_flag("--plain", eval.plain, "score with plain tokenization");
  AddModelFlags(c_eval, eval.model);

  GradcheckOptions gradcheck;
  auto* c_grad = app.add_subcommand("gradcheck", "central-difference checks of losses and encoder");
  AddSeed(c_grad, gradcheck.seed);
  c_grad->add_option("--out", gradcheck.out, "output directory");

  AblateOptions ablate;
  auto* c_abl = app.add_subcommand("ablate", "train and evaluate one run per toggle set");
  AddSeed(c_abl, ablate.seed);
  c_abl->add_option("--manifest", ablate.manifest, "training fine series JSONL")->required();
  c_abl->add_option("--coarse", ablate.coarse, "training coarse JSONL")->required();
  c_abl->add_option("--test-manifest", ablate.test_manifest, "test fine series JSONL")->required();
  c_abl->add_option("--test-coarse", ablate.test_coarse, "test coarse JSONL");
  c_abl->add_option("--out", ablate.out, "output directory")->required();
  c_abl->add_option("--toggle", ablate.toggles, "toggle set for one run, '+' joins names")
      ->allow_extra_args(false);
  AddModelFlags(c_abl, ablate.model);

  std::vector<std::string> argv_store{"fgaes"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : argv_store) argv.push_back(s.data());

  std::string command = args.empty() ? "" : args.front();
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << ErrorRecordJson(command, "usage", e.what(), kExitUsage) << "\n";
    return kExitUsage;
  }

  try {
    if (*c_synth) return CmdSynth(synth, out);
    if (*c_cal) return CmdCalibrate(calibrate, out);
    if (*c_ref) return CmdRefine(refine, out);
    if (*c_tok) return CmdTokenize(tokenize, out);
    if (*c_train) return CmdTrain(train, out);
    if (*c_eval) return CmdEval(eval, out);
    if (*c_grad) return CmdGradcheck(gradcheck, out);
    if (*c_abl) return CmdAblate(ablate, out);
  } catch (const UsageError& e) {
    err << ErrorRecordJson(command, "usage", e.what(), kExitUsage) << "\n";
    return kExitUsage;
  } catch (const MissingFileError& e) {
    err << ErrorRecordJson(command, "missing_file", e.what(), kExitMissingFile) << "\n";
    return kExitMissingFile;
  } catch (const SchemaError& e) {
    err << ErrorRecordJson(command, "schema", e.what(), kExitSchema) << "\n";
    return kExitSchema;
  } catch (const std::exception& e) {
    err << ErrorRecordJson(command, "runtime", e.what(), kExitRuntime) << "\n";
    return kExitRuntime;
  }
  err << ErrorRecordJson(command, "usage", "no subcommand", kExitUsage) << "\n";
  return kExitUsage;
}

}  // namespace fgaes
