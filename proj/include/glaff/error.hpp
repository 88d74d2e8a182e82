// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace glaff {

/// Base class of every error thrown by the toolkit. `category()` is the
/// short machine-readable tag the CLI prints on failure.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define GLAFF_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(tag, what) {}       \
  };

GLAFF_DEFINE_ERROR(DimensionError, "dimension")
GLAFF_DEFINE_ERROR(DomainError, "domain")
GLAFF_DEFINE_ERROR(DataError, "data")
GLAFF_DEFINE_ERROR(UsageError, "usage")
GLAFF_DEFINE_ERROR(ConfigError, "config")
GLAFF_DEFINE_ERROR(ParseError, "parse")
GLAFF_DEFINE_ERROR(IngestionError, "ingestion")
GLAFF_DEFINE_ERROR(CheckpointError, "checkpoint")
GLAFF_DEFINE_ERROR(DivergenceError, "divergence")
GLAFF_DEFINE_ERROR(IoError, "io")
GLAFF_DEFINE_ERROR(GradcheckError, "gradcheck")

#undef GLAFF_DEFINE_ERROR

}  // namespace glaff
