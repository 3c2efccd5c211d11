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
"""Bin means of the tail-folded ten-bin Gaussian, via mpmath."""

import mpmath

mpmath.mp.dps = 40


def folded_mean(center, sigma):
  cdf = lambda x: mpmath.ncdf(x, mu=center, sigma=sigma)
  edges = [mpmath.mpf(0)] + [cdf(b + 0.5) for b in range(1, 10)] + [mpmath.mpf(1)]
  return sum((b + 1) * (edges[b + 1] - edges[b]) for b in range(10))


if __name__ == "__main__":
  for c in (9.0, 1.0):
    print(c, mpmath.nstr(folded_mean(c, 1.2), 17))
