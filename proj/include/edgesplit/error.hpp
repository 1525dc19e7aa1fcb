/* Copyright 2026 The edgesplit Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace edgesplit {

// Coarse failure category. The CLI maps these onto exit codes.
enum class ErrorCategory { kConfig, kGraph, kInfeasible, kIo, kTransport };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorCategory::kConfig, what) {}
};

class GraphError : public Error {
 public:
  explicit GraphError(const std::string& what)
      : Error(ErrorCategory::kGraph, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::kIo, what) {}
};

class InfeasibleError : public Error {
 public:
  explicit InfeasibleError(const std::string& what)
      : Error(ErrorCategory::kInfeasible, what) {}
};

class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what)
      : Error(ErrorCategory::kTransport, what) {}
};

}  // namespace edgesplit
