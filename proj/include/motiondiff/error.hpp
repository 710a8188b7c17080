// Copyright 2026 The motiondiff Authors
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

namespace motiondiff {

/// Base class for every error raised by the library. The CLI maps the
/// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid hyperparameter, flag or preset (e.g. T < 2, K > T, lambda < 0).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that should agree do not.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Diffusion step or joint index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Motion length beyond what the model was configured for.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. The message carries a line number or JSON pointer.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input that parses but violates a mathematical precondition (e.g. a
/// matrix that is not a rotation).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during training or sampling.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace motiondiff
