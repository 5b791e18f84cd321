#ifndef SCQPCR_ERROR_HPP
#define SCQPCR_ERROR_HPP

#include <stdexcept>
#include <string>

/**
 * @file error.hpp
 *
 * @brief Exception types thrown by the library.
 *
 * Every error carries a category so that the command line tool can map it to
 * a distinct exit code.
 */

namespace scqpcr {

enum class ErrorKind {
    malformed_input,
    insufficient_data,
    domain,
    io
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), my_kind(kind) {}

    ErrorKind kind() const noexcept { return my_kind; }

private:
    ErrorKind my_kind;
};

struct MalformedInput : public Error {
    explicit MalformedInput(const std::string& message) : Error(ErrorKind::malformed_input, message) {}
};

struct InsufficientData : public Error {
    explicit InsufficientData(const std::string& message) : Error(ErrorKind::insufficient_data, message) {}
};

struct DomainError : public Error {
    explicit DomainError(const std::string& message) : Error(ErrorKind::domain, message) {}
};

struct IoError : public Error {
    explicit IoError(const std::string& message) : Error(ErrorKind::io, message) {}
};

}

#endif
