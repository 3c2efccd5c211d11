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

"""Fine-grained image aesthetics: tokenization, losses, calibration, metrics."""

import json as _json

from fgaes._core import (
    GRAD_TOLERANCE,
    bt_prob,
    corr,
    derive_ranking,
    emd,
    gradient_suite,
    kendall_tau,
    listmle,
    pair_metrics,
    pairwise_logistic,
    percentile,
    read_image,
    run_cli,
    series_metrics,
    write_image,
)
from fgaes._core import tokenize as _tokenize

__all__ = [
    "GRAD_TOLERANCE",
    "CliError",
    "bt_prob",
    "cli",
    "corr",
    "derive_ranking",
    "emd",
    "gradient_suite",
    "kendall_tau",
    "listmle",
    "pair_metrics",
    "pairwise_logistic",
    "percentile",
    "read_image",
    "run_cli",
    "series_metrics",
    "tokenize",
    "write_image",
]


class CliError(RuntimeError):
    """A command exited non-zero; `record` holds the parsed error record."""

    def __init__(self, code, record):
        super().__init__(record.get("message", "") if record else f"exit code {code}")
        self.code = code
        self.record = record


def cli(*args):
    """Runs a command and returns its stdout; raises CliError on failure."""
    code, out, err = run_cli([str(a) for a in args])
    if code != 0:
        raise CliError(code, _json.loads(err) if err.strip() else {})
    return out


def tokenize(image, reference=None, **kwargs):
    """Token layout of `image` as a dict; DiffToken when `reference` is given."""
    return _json.loads(_tokenize(image, reference, **kwargs))
