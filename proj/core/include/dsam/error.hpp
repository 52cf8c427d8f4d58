#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dsam {

enum class Errc {
    MissingPair,
    EmptyMask,
    BadSize,
    BadShape,
    BadBox,
    BadSegments,
    BadRadius,
    BadMask,
    BadBatch,
    BadConfig,
    FailedRun,
    Io,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message);

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& message);

}  // namespace dsam
