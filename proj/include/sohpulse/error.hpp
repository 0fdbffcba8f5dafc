#pragma once

#include <stdexcept>
#include <string>

namespace sohpulse {

// Every failure raised by the toolkit derives from Error so callers can catch
// one type; kind() distinguishes the cases the CLI reports differently.
enum class ErrorKind {
    Domain,
    DegenerateWindow,
    InsufficientData,
    Divergence,
    Collinearity,
    InvalidCorrection,
    UnknownBattery,
    Precondition,
    Parse,
    DuplicateKey,
    JoinMismatch,
    Io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace sohpulse
