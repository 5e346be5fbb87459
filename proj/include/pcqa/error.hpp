#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pcqa {

enum class ErrorKind {
  MissingProperty,
  MalformedHeader,
  TruncatedBody,
  DegenerateCloud,
  UnknownSplit,
  MosOutOfRange,
  InvalidManifest,
  KTooLarge,
  NTooLarge,
  EmptyBall,
  FilterLengthMismatch,
  CloudTooSmall,
  EmptyResult,
  ShapeMismatch,
  OddChannelCount,
  ConstantVector,
  TooFewEntries,
  ConfigMismatch,
  InvalidConfig,
  InvalidArgument,
  FitDiverged,
  Io,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace pcqa
