#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace perfts {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind : int {
    usage = 2,
    io = 3,
    data = 4,
    invariant = 5,
    numeric = 6,
};

inline std::string_view error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage: return "usage";
        case ErrorKind::io: return "io";
        case ErrorKind::data: return "data";
        case ErrorKind::invariant: return "invariant";
        case ErrorKind::numeric: return "numeric";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace perfts
