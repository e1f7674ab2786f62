#pragma once

#include <stdexcept>
#include <string>

namespace pdm {

// Error taxonomy shared across the library. Each subclass corresponds to one
// failure family so callers and tests can catch precisely.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SchemaError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct StructureError : Error {
    using Error::Error;
};
struct IntegrityError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct StatsError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

}  // namespace pdm
