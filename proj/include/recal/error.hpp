#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace recal {

// Base of every error raised by the library. The CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string id, std::string reason)
      : Error("record '" + id + "': " + reason), id_(std::move(id)), reason_(std::move(reason)) {}
  const std::string& id() const noexcept { return id_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string id_;
  std::string reason_;
};

class DuplicateId : public Error {
 public:
  explicit DuplicateId(std::string id) : Error("duplicate id '" + id + "'"), id_(std::move(id)) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

#define RECAL_SIMPLE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

RECAL_SIMPLE_ERROR(EmptyInput)
RECAL_SIMPLE_ERROR(LengthMismatch)
RECAL_SIMPLE_ERROR(DimensionMismatch)
RECAL_SIMPLE_ERROR(DegenerateData)
RECAL_SIMPLE_ERROR(DegenerateInput)
RECAL_SIMPLE_ERROR(TooFewPoints)
RECAL_SIMPLE_ERROR(MissingEmbeddings)
RECAL_SIMPLE_ERROR(MissingAttention)
RECAL_SIMPLE_ERROR(MissingGroundTruth)
RECAL_SIMPLE_ERROR(SubmittedEqualsTruth)
RECAL_SIMPLE_ERROR(EmptyGrid)
RECAL_SIMPLE_ERROR(SchemaError)

#undef RECAL_SIMPLE_ERROR

}  // namespace recal
