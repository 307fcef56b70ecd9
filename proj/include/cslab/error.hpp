// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

#include <stdexcept>
#include <string>

namespace cslab {

/// Base of every library error. The CLI maps each subclass onto its own exit
/// code, see exit_code().
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class DataError : public Error {
public:
  using Error::Error;
};

/// Shape or dimension mismatch on a tensor primitive.
class ShapeError : public Error {
public:
  using Error::Error;
};

class IndexError : public Error {
public:
  using Error::Error;
};

class LengthError : public Error {
public:
  using Error::Error;
};

class ArgumentError : public Error {
public:
  using Error::Error;
};

/// Non-finite value where a finite one is required.
class NumericError : public Error {
public:
  using Error::Error;
};

class DivergenceError : public Error {
public:
  using Error::Error;
};

class IncompatibleError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

enum class ExitCode : int {
  ok = 0,
  usage = 1,
  config = 2,
  data = 3,
  divergence = 4,
  io = 5,
  internal = 6,
};

inline ExitCode exit_code(const std::exception &e) {
  if (dynamic_cast<const ConfigError *>(&e) || dynamic_cast<const ArgumentError *>(&e) ||
      dynamic_cast<const IncompatibleError *>(&e))
    return ExitCode::config;
  if (dynamic_cast<const DataError *>(&e) || dynamic_cast<const LengthError *>(&e) ||
      dynamic_cast<const IndexError *>(&e))
    return ExitCode::data;
  if (dynamic_cast<const DivergenceError *>(&e) || dynamic_cast<const NumericError *>(&e))
    return ExitCode::divergence;
  if (dynamic_cast<const IoError *>(&e))
    return ExitCode::io;
  return ExitCode::internal;
}

} // namespace cslab
