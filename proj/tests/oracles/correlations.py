# Copyright 2026 The FGAes Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Reference correlations for the metrics tests, via scipy."""

from scipy import stats

GT = [1.5, 2.0, 3.7, 4.1, 9.0]
PRED = [2.0, 1.5, 4.1, 9.0, 3.7]
TIED_A = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0]
TIED_B = [2.0, 1.0, 4.0, 4.0, 6.0, 3.0]

if __name__ == "__main__":
  print(repr(stats.spearmanr(PRED, GT).statistic), repr(stats.pearsonr(PRED, GT).statistic))
  print(repr(stats.spearmanr(TIED_A, TIED_B).statistic))
