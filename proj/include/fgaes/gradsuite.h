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

// Central-difference checks of every training loss and of the full encoder
// at a tiny configuration.

#ifndef FGAES_GRADSUITE_H_
#define FGAES_GRADSUITE_H_

#include <cstdint>
#include <string>
#include <vector>

namespace fgaes {

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

inline constexpr double kGradTolerance = 1e-5;

// Entries: emd, ctalign, bt_logistic, listmle, pairwise_logistic,
// joint_fine, joint_coarse, encoder. The encoder case uses d_model 16 and
// five tokens with every parameter randomly perturbed.
std::vector<GradSuiteEntry> RunGradientSuite(std::uint64_t seed = 0);

bool GradientSuitePasses(const std::vector<GradSuiteEntry>& entries,
                         double tolerance = kGradTolerance);

}  // namespace fgaes

#endif  // FGAES_GRADSUITE_H_
