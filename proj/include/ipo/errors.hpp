// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace ipo {

/// Bad or unknown configuration; CLI exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint or other run artifact that should exist does not; exit status 3.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ipo
