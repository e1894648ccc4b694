#ifndef NETSPILL_ERRORS_HPP
#define NETSPILL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace netspill {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Bad input data or bad parameters. The CLI maps these to exit code 2.
class InputError : public Error {
public:
  using Error::Error;
};

/// Numerical or estimation failure on otherwise valid input. Exit code 1.
class EstimationError : public Error {
public:
  using Error::Error;
};

#define NETSPILL_DEFINE_ERROR(Name, Base)                                      \
  class Name : public Base {                                                   \
  public:                                                                      \
    using Base::Base;                                                          \
  };

// data ingestion
NETSPILL_DEFINE_ERROR(ParseError, InputError)
NETSPILL_DEFINE_ERROR(DuplicateError, InputError)
NETSPILL_DEFINE_ERROR(MetadataError, InputError)
NETSPILL_DEFINE_ERROR(ConfigError, InputError)
NETSPILL_DEFINE_ERROR(DomainError, InputError)
NETSPILL_DEFINE_ERROR(DimensionError, InputError)

// network construction
NETSPILL_DEFINE_ERROR(DegenerateDistanceError, EstimationError)
NETSPILL_DEFINE_ERROR(NormalizationError, EstimationError)

// regression machinery
NETSPILL_DEFINE_ERROR(SingularDesignError, EstimationError)
NETSPILL_DEFINE_ERROR(WeakInstrumentError, EstimationError)
NETSPILL_DEFINE_ERROR(UnderidentifiedError, EstimationError)
NETSPILL_DEFINE_ERROR(InsufficientUnitsError, EstimationError)
NETSPILL_DEFINE_ERROR(DegenerateGroupError, EstimationError)
NETSPILL_DEFINE_ERROR(ConvergenceError, EstimationError)

// impacts and homophily
NETSPILL_DEFINE_ERROR(StabilityError, EstimationError)
NETSPILL_DEFINE_ERROR(SingularityError, EstimationError)
NETSPILL_DEFINE_ERROR(UnreliableSEError, EstimationError)
NETSPILL_DEFINE_ERROR(QuantileError, InputError)
NETSPILL_DEFINE_ERROR(DegenerateLabelsError, InputError)

#undef NETSPILL_DEFINE_ERROR

/// Missing (unit, period) cell in a panel that must be balanced.
class BalanceError : public InputError {
public:
  BalanceError(std::string unit, std::string period)
      : InputError("unbalanced panel: missing cell for unit '" + unit +
                   "', period '" + period + "'"),
        unit_(std::move(unit)), period_(std::move(period)) {}

  const std::string &unit() const noexcept { return unit_; }
  const std::string &period() const noexcept { return period_; }

private:
  std::string unit_;
  std::string period_;
};

} // namespace netspill

#endif // NETSPILL_ERRORS_HPP
