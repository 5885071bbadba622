// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace beeplan {

/// Base class for all recoverable domain errors raised by the toolkit.
/// The CLI maps these to exit code 1; anything else is a bug.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// cluster_model
class ParseError : public Error {
public:
  using Error::Error;
};
class ValidationError : public Error {
public:
  using Error::Error;
};

// planner
class NoFeasiblePlan : public Error {
public:
  using Error::Error;
};
class InfeasiblePlan : public Error {
public:
  using Error::Error;
};
class TooLarge : public Error {
public:
  using Error::Error;
};

// codec
class OddLength : public Error {
public:
  using Error::Error;
};
class LaneLengthMismatch : public Error {
public:
  using Error::Error;
};
class BackendUnknown : public Error {
public:
  using Error::Error;
};
class CorruptContainer : public Error {
public:
  using Error::Error;
};

// specdec_runtime
class BadDistribution : public Error {
public:
  using Error::Error;
};
class ShapeMismatch : public Error {
public:
  using Error::Error;
};
class DimMismatch : public Error {
public:
  using Error::Error;
};
class CorruptOffsets : public Error {
public:
  using Error::Error;
};
class IndexOutOfRegion : public Error {
public:
  using Error::Error;
};

// pipeline / wire
class ConnectionLost : public Error {
public:
  using Error::Error;
};
class FrameCorrupt : public Error {
public:
  using Error::Error;
};

} // namespace beeplan
