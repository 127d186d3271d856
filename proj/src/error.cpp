#include "fei3d/error.hpp"

namespace fei3d {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::shape: return "shape";
        case ErrorKind::domain: return "domain";
        case ErrorKind::config: return "config";
        case ErrorKind::data: return "data";
        case ErrorKind::format: return "format";
        case ErrorKind::protocol: return "protocol";
        case ErrorKind::alignment: return "alignment";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::io: return "io";
        case ErrorKind::usage: return "usage";
    }
    return "unknown";
}

}  // namespace fei3d
