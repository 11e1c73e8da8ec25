#pragma once

#include <stdexcept>
#include <string>

namespace doge {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or unsupported input (LP/JSON text, weight files, CLI values).
class ParseError : public Error {
public:
    using Error::Error;
};

// A constraint or the whole instance admits no 0-1 assignment.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace doge
