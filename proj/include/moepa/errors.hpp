// Copyright 2026 The moepa Authors
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

namespace moepa {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Dimensions or settings that do not fit together (d/E/k mismatch, bad profile).
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// A call argument outside its documented domain (k > E, accuracy > 1, ...).
class ArgumentError : public Error {
  public:
    using Error::Error;
};

/// An operation invoked out of order, e.g. backward without its paired forward.
class UsageError : public Error {
  public:
    using Error::Error;
};

/// Input data that is well-formed on disk but unusable (empty dataset, NaN weights).
class DataError : public Error {
  public:
    using Error::Error;
};

/// Filesystem failure: cannot open, read or write.
class IoError : public Error {
  public:
    using Error::Error;
};

enum class ParseErrorKind {
    BadMagic,
    VersionMismatch,
    Truncated,
    TrailingData,
    InvariantViolation,
};

inline const char *to_string(ParseErrorKind kind) {
    switch (kind) {
        case ParseErrorKind::BadMagic:
            return "bad magic";
        case ParseErrorKind::VersionMismatch:
            return "version mismatch";
        case ParseErrorKind::Truncated:
            return "truncated file";
        case ParseErrorKind::TrailingData:
            return "trailing data";
        case ParseErrorKind::InvariantViolation:
            return "invariant violation";
    }
    return "unknown";
}

/// A binary trace or checkpoint file that could not be decoded.
class ParseError : public Error {
  public:
    ParseError(ParseErrorKind kind, const std::string &detail)
        : Error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

    ParseErrorKind kind() const noexcept { return kind_; }

  private:
    ParseErrorKind kind_;
};

}  // namespace moepa
