#pragma once

#include <stdexcept>
#include <string>

namespace esk {

// All recoverable failures (bad input files, violated preconditions) are
// reported with this type. The message names the offending property.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed container or unsupported encoding in an input file.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace esk
