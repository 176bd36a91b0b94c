#pragma once

#include <stdexcept>
#include <string>

namespace micloc {

enum class ErrorCode {
    invalid_argument = 1,
    dimension_mismatch,
    singular_geometry,
    insufficient_data,
    state,
    io,
    file_not_found,
    format,
    out_of_range,
};

const char* error_code_name(ErrorCode code) noexcept;

// Every failure raised by the library carries one of the codes above so the
// C layer can translate it without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what)
{
    if (!cond) fail(ErrorCode::invalid_argument, what);
}

} // namespace micloc
