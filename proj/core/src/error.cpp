#include "dsam/error.hpp"

namespace dsam {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::MissingPair: return "MissingPair";
        case Errc::EmptyMask: return "EmptyMask";
        case Errc::BadSize: return "BadSize";
        case Errc::BadShape: return "BadShape";
        case Errc::BadBox: return "BadBox";
        case Errc::BadSegments: return "BadSegments";
        case Errc::BadRadius: return "BadRadius";
        case Errc::BadMask: return "BadMask";
        case Errc::BadBatch: return "BadBatch";
        case Errc::BadConfig: return "BadConfig";
        case Errc::FailedRun: return "FailedRun";
        case Errc::Io: return "Io";
    }
    return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace dsam
