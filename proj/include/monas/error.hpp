#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace monas {

/// Error with a stable machine-readable code ("shape_mismatch", "bad_magic",
/// "constraint", ...) next to the human-readable message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error("[" + code + "] " + message), code_(std::move(code)) {}

    const std::string& code() const { return code_; }

private:
    std::string code_;
};

}  // namespace monas
