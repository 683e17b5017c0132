#pragma once

#include <stdexcept>
#include <string>

namespace lexforge {

// All recoverable failures in the library surface as this type. Each message
// carries enough context (line number, parameter name, document id) for the
// CLI to report it verbatim.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& message) {
    throw Error(message);
}

inline void check(bool ok, const std::string& message) {
    if (!ok) fail(message);
}

}  // namespace lexforge
