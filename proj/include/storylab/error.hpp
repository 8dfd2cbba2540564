#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace storylab {

enum class ErrorKind {
  dimension,
  index,
  contract,
  length,
  numeric,
  data,
  config,
  io,
  training,
};

std::string_view to_string(ErrorKind kind);

// Base for every error the library raises. The kind maps onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define STORYLAB_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& message) : Error(ErrorKind::Kind, message) {} \
  };

STORYLAB_DEFINE_ERROR(DimensionError, dimension)
STORYLAB_DEFINE_ERROR(IndexError, index)
STORYLAB_DEFINE_ERROR(ContractError, contract)
STORYLAB_DEFINE_ERROR(LengthError, length)
STORYLAB_DEFINE_ERROR(NumericError, numeric)
STORYLAB_DEFINE_ERROR(DataError, data)
STORYLAB_DEFINE_ERROR(ConfigError, config)
STORYLAB_DEFINE_ERROR(IoError, io)
STORYLAB_DEFINE_ERROR(TrainingError, training)

#undef STORYLAB_DEFINE_ERROR

}  // namespace storylab
