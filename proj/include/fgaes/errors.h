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

#ifndef FGAES_ERRORS_H_
#define FGAES_ERRORS_H_

#include <filesystem>
#include <stdexcept>
#include <string>

namespace fgaes {

// A document or record does not match its schema.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A required input file does not exist or cannot be opened.
class MissingFileError : public std::runtime_error {
 public:
  explicit MissingFileError(const std::filesystem::path& path)
      : std::runtime_error("cannot open " + path.string()), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fgaes

#endif  // FGAES_ERRORS_H_
