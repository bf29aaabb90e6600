#pragma once

#include <stdexcept>
#include <string>

namespace g2p {

// Error hierarchy. Everything the library throws derives from g2p::Error so
// callers can catch one type; the CLI maps the subclasses to exit codes.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes disagree with an op's contract.
struct ShapeError : Error {
  using Error::Error;
};

// A token/index is outside its valid range.
struct IndexError : Error {
  using Error::Error;
};

// A precondition on an API call was violated.
struct ContractError : Error {
  using Error::Error;
};

// Invalid model or run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// NaN/Inf produced by a forward op, or training diverged.
struct NumericalError : Error {
  using Error::Error;
};

// File could not be read/written.
struct IoError : Error {
  using Error::Error;
};

// Malformed file content (corpus line, checkpoint, config).
struct ParseError : Error {
  using Error::Error;
};

// Input sequence exceeds a configured maximum length.
struct LengthError : Error {
  using Error::Error;
};

// A word is not present in the lexicon.
struct GenerationError : Error {
  using Error::Error;
};

struct VocabularyError : Error {
  using Error::Error;
};

}  // namespace g2p
