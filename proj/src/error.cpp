#include "micloc/error.hpp"

namespace micloc {

const char* error_code_name(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::singular_geometry: return "singular-geometry";
    case ErrorCode::insufficient_data: return "insufficient-data";
    case ErrorCode::state: return "state";
    case ErrorCode::io: return "io";
    case ErrorCode::file_not_found: return "file-not-found";
    case ErrorCode::format: return "format";
    case ErrorCode::out_of_range: return "out-of-range";
    }
    return "unknown";
}

} // namespace micloc
