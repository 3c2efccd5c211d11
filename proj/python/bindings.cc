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

// Python bindings. Images cross the boundary as float32 arrays of shape
// (height, width, 3) with values in [0, 1].

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fgaes/calibrate.h"
#include "fgaes/cli.h"
#include "fgaes/difftoken.h"
#include "fgaes/gradsuite.h"
#include "fgaes/imaging.h"
#include "fgaes/losses.h"
#include "fgaes/metrics.h"
#include "fgaes/ndiff.h"

namespace py = pybind11;

namespace fgaes {
namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

ImageBuf ToImage(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) {
    throw std::invalid_argument("image must have shape (height, width, 3)");
  }
  const int h = static_cast<int>(a.shape(0));
  const int w = static_cast<int>(a.shape(1));
  std::vector<float> px(a.data(), a.data() + a.size());
  return ImageBuf(w, h, std::move(px));
}

FloatArray FromImage(const ImageBuf& img) {
  FloatArray out({img.height(), img.width(), ImageBuf::kChannels});
  std::copy(img.pixels().begin(), img.pixels().end(), out.mutable_data());
  return out;
}

DiffTokenConfig MakeTokenConfig(int base_patch, int loc_patch, double percentile_p,
                                int token_budget, std::optional<int> max_side,
                                std::uint64_t seed) {
  DiffTokenConfig cfg;
  cfg.base_patch = base_patch;
  cfg.loc_patch = loc_patch;
  cfg.percentile_p = percentile_p;
  cfg.token_budget = token_budget;
  cfg.max_side = max_side;
  cfg.seed = seed;
  cfg.Validate();
  return cfg;
}

// Loss value and its gradient with respect to `scores`.
template <typename Fn>
std::pair<double, std::vector<double>> ValueAndGrad(const std::vector<double>& scores, Fn fn) {
  nd::Tape tape;
  const nd::Var s = tape.Leaf(nd::Tensor::Vector(scores));
  const nd::Var loss = fn(s);
  return {loss.value().item(), tape.Backward(loss).of(s).data()};
}

std::vector<SeriesEval> ToSeriesEval(
    const std::vector<std::tuple<std::string, std::vector<double>, std::vector<int>>>& rows) {
  std::vector<SeriesEval> out;
  for (const auto& [source, scores, ranking] : rows) out.push_back({source, scores, ranking});
  return out;
}

LengthWeight ParseWeight(const std::string& w) {
  if (w == "n") return LengthWeight::kImages;
  if (w == "n-1") return LengthWeight::kPairs;
  throw std::invalid_argument("weight must be 'n' or 'n-1'");
}

}  // namespace
}  // namespace fgaes

PYBIND11_MODULE(_core, m) {
  using namespace fgaes;
  m.doc() = "Native core of the fgaes package.";

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = RunCli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one fgaes command line; returns (exit_code, stdout, stderr).");

  m.def(
      "read_image", [](const std::string& path) { return FromImage(ReadImage(path)); },
      py::arg("path"));
  m.def(
      "write_image",
      [](const FloatArray& img, const std::string& path) { WriteImage(ToImage(img), path); },
      py::arg("image"), py::arg("path"));

  m.def(
      "tokenize",
      [](const FloatArray& image, std::optional<FloatArray> reference, int base_patch,
         int loc_patch, double percentile_p, int token_budget, std::optional<int> max_side,
         std::uint64_t seed) {
        const DiffTokenConfig cfg =
            MakeTokenConfig(base_patch, loc_patch, percentile_p, token_budget, max_side, seed);
        const ImageBuf x = ToImage(image);
        const Tokenization t =
            reference ? TokenizeDiff(x, ToImage(*reference), cfg) : TokenizePlain(x, cfg);
        return TokenLayoutJson(t, cfg);
      },
      py::arg("image"), py::arg("reference") = py::none(), py::arg("base_patch") = 16,
      py::arg("loc_patch") = 32, py::arg("percentile_p") = 0.5, py::arg("token_budget") = 196,
      py::arg("max_side") = 512, py::arg("seed") = 0,
      "Token layout as a JSON string: tokens, grid, tau and decisive cells.");

  m.def(
      "percentile",
      [](std::vector<double> values, double p, const std::string& method) {
        if (method != "linear" && method != "nearest_rank") {
          throw std::invalid_argument("method must be 'linear' or 'nearest_rank'");
        }
        return Percentile(std::move(values), p,
                          method == "linear" ? PercentileMethod::kLinear
                                             : PercentileMethod::kNearestRank);
      },
      py::arg("values"), py::arg("p"), py::arg("method") = "linear");

  m.def("bt_prob", py::overload_cast<double, double>(&BtProb), py::arg("sx"), py::arg("sy"));
  m.def(
      "emd",
      [](const std::vector<double>& pred, const std::vector<double>& gt, double r) {
        nd::Tape tape;
        return EmdLoss(tape.Constant(nd::Tensor::Vector(pred)),
                       tape.Constant(nd::Tensor::Vector(gt)), r)
            .value()
            .item();
      },
      py::arg("pred"), py::arg("gt"), py::arg("r") = 2.0);
  m.def(
      "listmle",
      [](const std::vector<double>& scores, const std::vector<int>& ranking) {
        return ValueAndGrad(scores, [&](nd::Var s) { return ListMleLoss(s, ranking); });
      },
      py::arg("scores"), py::arg("ranking"), "Returns (loss, d loss / d scores).");
  m.def(
      "pairwise_logistic",
      [](const std::vector<double>& scores, const std::vector<int>& ranking) {
        return ValueAndGrad(scores,
                            [&](nd::Var s) { return PairwiseLogisticLoss(s, ranking); });
      },
      py::arg("scores"), py::arg("ranking"), "Returns (loss, d loss / d scores).");

  m.def(
      "derive_ranking",
      [](const std::vector<std::tuple<int, int, double>>& pairs, int n, double band) {
        std::vector<PairProb> probs;
        for (const auto& [i, j, p] : pairs) probs.push_back({i, j, p});
        const FilterResult f = FilterAmbiguous(probs, band);
        const RankingResult r = DeriveRanking(f.kept, n);
        py::dict d;
        d["ranking"] = r.ranking;
        d["cycle"] = r.cycle ? py::cast(*r.cycle) : py::none();
        d["dropped_images"] = r.dropped_images;
        d["drop_reason"] = r.drop_reason;
        d["kept"] = f.kept.size();
        return d;
      },
      py::arg("pairs"), py::arg("n"), py::arg("band") = 0.15,
      "Filters ambiguous (i, j, p) pairs and ranks n images.");
  m.def(
      "kendall_tau",
      [](const std::vector<int>& a, const std::vector<int>& b) { return KendallTau(a, b); },
      py::arg("a"), py::arg("b"));

  m.def(
      "pair_metrics",
      [](const std::vector<std::tuple<std::string, std::vector<double>, std::vector<int>>>& rows) {
        const PairMetrics p = ComputePairMetrics(ToSeriesEval(rows));
        return py::dict(py::arg("acc") = p.acc, py::arg("f1") = p.f1,
                        py::arg("correct") = p.correct, py::arg("total") = p.total);
      },
      py::arg("series"), "Series are (source, scores, ranking) tuples.");
  m.def(
      "series_metrics",
      [](const std::vector<std::tuple<std::string, std::vector<double>, std::vector<int>>>& rows,
         const std::string& weight) {
        const SeriesMetrics s = ComputeSeriesMetrics(ToSeriesEval(rows), ParseWeight(weight));
        return py::dict(py::arg("s_acc") = s.s_acc, py::arg("s_srcc") = s.s_srcc);
      },
      py::arg("series"), py::arg("weight") = "n");
  m.def(
      "corr",
      [](const std::vector<double>& pred, const std::vector<double>& gt) {
        const CorrResult c = Corr(pred, gt);
        return py::dict(py::arg("srcc") = c.srcc, py::arg("plcc") = c.plcc);
      },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "gradient_suite",
      [](std::uint64_t seed) {
        std::vector<GradSuiteEntry> entries;
        {
          py::gil_scoped_release release;
          entries = RunGradientSuite(seed);
        }
        std::vector<std::tuple<std::string, double, std::size_t>> out;
        for (const auto& e : entries) out.emplace_back(e.name, e.max_rel_error, e.coordinates);
        return out;
      },
      py::arg("seed") = 0, "List of (name, max_rel_error, coordinates).");
  m.attr("GRAD_TOLERANCE") = kGradTolerance;
}
