#pragma once

#include <stdexcept>
#include <string>

namespace twbsim {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A parameter lies outside its mathematical domain.
struct DomainError : Error {
  using Error::Error;
};

/// An estimator is undefined on the supplied data (e.g. zero total mean).
struct EstimationError : Error {
  using Error::Error;
};

/// Too few shots or samples to form the requested statistic.
struct InsufficientData : Error {
  using Error::Error;
};

/// Invalid run configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// Malformed external data file.
struct DataError : Error {
  using Error::Error;
};

/// A spurious-event cascade exceeded the per-shot event cap.
struct CascadeOverflow : Error {
  using Error::Error;
};

}  // namespace twbsim
