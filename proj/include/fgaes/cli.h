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

// The `fgaes` command line: synth, calibrate, refine, tokenize, train, eval,
// gradcheck and ablate. Every subcommand that writes artifacts also writes
// run_manifest.json (command, seed, flags, resolved config and SHA-256 of
// inputs and outputs) and config.txt into its output directory.

#ifndef FGAES_CLI_H_
#define FGAES_CLI_H_

#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fgaes {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,  // the command ran but its check did not pass
  kExitUsage = 2,        // unknown flag, bad flag value, unknown config key
  kExitMissingFile = 3,
  kExitSchema = 4,       // malformed manifest, config or checkpoint
  kExitRuntime = 5,
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One-line JSON error record {"command", "error", "exit_code", "message"}.
std::string ErrorRecordJson(std::string_view command, std::string_view kind,
                            std::string_view message, int exit_code);

// Runs one command line (without the program name). Reports go to `out`;
// errors are written to `err` as a single JSON record.
int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Reads FGAES_THREADS; 1 when unset. Throws UsageError on a non-positive or
// malformed value.
int ThreadsFromEnv();

}  // namespace fgaes

#endif  // FGAES_CLI_H_
