#pragma once

#include <stdexcept>
#include <string>

namespace mixpretrain {

// All library failures derive from Error so callers can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct GeometryError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct ModeError : Error {
    using Error::Error;
};

struct ParseError : Error {
    ParseError(const std::string& what, std::size_t line_no)
        : Error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
    std::size_t line;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace mixpretrain
