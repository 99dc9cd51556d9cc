#pragma once

#include <stdexcept>
#include <string>

namespace vip {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between operands.
class DimError : public Error {
 public:
  using Error::Error;
};

// Out-of-range index (gather, slice, token lookup).
class IndexError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation's contract (non-scalar backward,
// empty ROI, invalid configuration, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent file content (weight files, PPM, box lists).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure (missing file, unwritable path).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace vip
