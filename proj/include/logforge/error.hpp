#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace logforge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestError : public Error {
 public:
  IngestError(std::string source, const std::string& what)
      : Error(source + ": " + what), source_(std::move(source)) {}
  const std::string& source() const { return source_; }

 private:
  std::string source_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Raised by the query parser. offset is 1-based into the query text.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, std::string message,
             std::vector<std::string> expected = {})
      : Error("syntax error at offset " + std::to_string(offset) + ": " +
              message),
        offset_(offset),
        message_(std::move(message)),
        expected_(std::move(expected)) {}
  std::size_t offset() const { return offset_; }
  const std::string& message() const { return message_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  std::size_t offset_;
  std::string message_;
  std::vector<std::string> expected_;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

}  // namespace logforge
