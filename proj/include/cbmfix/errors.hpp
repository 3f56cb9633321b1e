#pragma once

#include <stdexcept>
#include <string>

namespace cbmfix {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shapes of the operands do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Reading or writing a file failed at the OS level.
class IoError : public Error {
public:
    using Error::Error;
};

// A file was readable but its contents are invalid (checksum, dims, NaN).
class FormatError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace cbmfix
