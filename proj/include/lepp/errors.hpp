#pragma once

#include <stdexcept>
#include <string>

namespace lepp {

// Base of every error raised by the library. The CLI maps subclasses to exit
// codes (config 2, numerical 3, missing artifact 4).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// A NaN or Inf appeared in a computed value.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Solver stability bound (CFL, diffusion number) violated.
class StabilityError : public Error {
public:
    using Error::Error;
};

class MissingArtifactError : public Error {
public:
    using Error::Error;
};

}  // namespace lepp
