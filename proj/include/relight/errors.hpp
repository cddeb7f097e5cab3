#pragma once

#include <stdexcept>
#include <string>

namespace relight {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/image dimensions do not line up with what an operation requires.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// An argument is outside its documented domain (sigma <= 0, empty scale list, ...).
class ParamError : public Error {
public:
    explicit ParamError(const std::string& msg) : Error("parameter error: " + msg) {}
};

// Non-finite values surfaced mid-computation; message names the stage and step.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Filesystem / decode / format-version failures; message carries the path.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

} // namespace relight
