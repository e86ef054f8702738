#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace orthosis {

enum class ErrorCode {
    Arity,
    Range,
    Time,
    EmptyStream,
    SingleSample,
    MissingClass,
    UntrainedForest,
    InvalidThreshold,
    TooShort,
    NoPeaks,
    InvariantViolation,
    LengthMismatch,
    EmptyInput,
    InvalidConfig,
    InvalidScript,
    Io,
    Schema,
    Validation,
    EmptyLog,
    NotCalibrated,
    BadMessage,
    NoGroundTruth,
    InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::Arity: return "ArityError";
        case ErrorCode::Range: return "RangeError";
        case ErrorCode::Time: return "TimeError";
        case ErrorCode::EmptyStream: return "EmptyStream";
        case ErrorCode::SingleSample: return "SingleSample";
        case ErrorCode::MissingClass: return "MissingClass";
        case ErrorCode::UntrainedForest: return "UntrainedForest";
        case ErrorCode::InvalidThreshold: return "InvalidThreshold";
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::NoPeaks: return "NoPeaks";
        case ErrorCode::InvariantViolation: return "InvariantViolation";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::InvalidScript: return "InvalidScript";
        case ErrorCode::Io: return "IoError";
        case ErrorCode::Schema: return "SchemaError";
        case ErrorCode::Validation: return "ValidationError";
        case ErrorCode::EmptyLog: return "EmptyLog";
        case ErrorCode::NotCalibrated: return "NotCalibrated";
        case ErrorCode::BadMessage: return "BadMessage";
        case ErrorCode::NoGroundTruth: return "NoGroundTruth";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

// Every failure in the library surfaces as this exception; code() lets
// callers branch without parsing the message.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

    ErrorCode code() const noexcept { return code_; }
    /// The message without the code prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorCode code_;
    std::string message_;
};

}  // namespace orthosis
