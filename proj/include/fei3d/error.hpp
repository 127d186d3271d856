#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fei3d {

enum class ErrorKind {
    shape,
    domain,
    config,
    data,
    format,
    protocol,
    alignment,
    numeric,
    io,
    usage,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Single exception type for the toolkit; the kind is machine-readable so the
// CLI can emit it verbatim in its error JSON.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string &message) : std::runtime_error(message), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace fei3d
