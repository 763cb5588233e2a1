/* Copyright 2026 The ModulePort Authors. All Rights Reserved.

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

namespace moduleport {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller asked for something the configuration rules forbid (indivisible
// layer counts, bad offsets, missing inputs). The CLI maps these to exit 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Inputs are well-formed but their shapes disagree. CLI exit 2.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Fewer matched samples than a statistic needs.
class InsufficientSamplesError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

// Student latent space wider than the teacher's; only pruning is supported.
class WideningError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

// NaN or Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Problem too large for an exhaustive routine.
class SizeLimitError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Container decoding failures. Each subclass names one way a file can be bad.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class MalformedHeaderError : public FormatError {
 public:
  using FormatError::FormatError;
};

class InconsistentShapeError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace moduleport
