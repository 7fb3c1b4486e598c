// Copyright 2026 The redi-toy Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace redi {

// Process exit codes used by the command line front end.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 1,
  kIo = 2,
  kNumeric = 3,
  kVersion = 4,
  kInsufficientData = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Precondition broken by the caller. Never recoverable.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericFailure : public Error {
 public:
  explicit NumericFailure(const std::string& what) : Error(ExitCode::kNumeric, what) {}
};

class DegenerateData : public Error {
 public:
  explicit DegenerateData(const std::string& what) : Error(ExitCode::kInsufficientData, what) {}
};

class InsufficientData : public Error {
 public:
  explicit InsufficientData(const std::string& what) : Error(ExitCode::kInsufficientData, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::kIo, what) {}
};

class VersionMismatch : public Error {
 public:
  explicit VersionMismatch(const std::string& what) : Error(ExitCode::kVersion, what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace redi
