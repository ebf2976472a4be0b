#pragma once

#include <stdexcept>
#include <string>

namespace lcf {

// All library failures derive from Error so callers can map them to exit codes.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Shape or rank disagreement between operands.
class DimensionError : public Error {
   public:
    using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
   public:
    using Error::Error;
};

// Invalid configuration values (even conv kernel, L > H, bad ranges ...).
class ConfigError : public Error {
   public:
    using Error::Error;
};

// NaN/Inf produced or consumed.
class NumericError : public Error {
   public:
    using Error::Error;
};

// Malformed input data such as audio that is too short for one frame.
class InputError : public Error {
   public:
    using Error::Error;
};

class IoError : public Error {
   public:
    using Error::Error;
};

// Binary file decoding failure; carries the byte offset where decoding stopped.
class FormatError : public Error {
   public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const { return offset_; }

   private:
    std::size_t offset_;
};

}  // namespace lcf
