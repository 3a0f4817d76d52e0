#pragma once

#include <stdexcept>
#include <string>

namespace cftclip {

enum class ErrorCode {
    // corpus
    NotFound,
    EmptyContent,
    SchemaError,
    IoError,
    MissingEmbedding,
    DimensionMismatch,
    EmptyCorpus,
    InvalidFractions,
    // cfgen
    NoCandidates,
    VocabularyExhausted,
    // encoders
    DecodeError,
    PreprocessError,
    EmptyAfterTokenization,
    PlanOutOfRange,
    CheckpointLoadError,
    // training
    NothingTrainable,
    DataExhausted,
    NonPositiveTemperature,
    // assess
    EmptyInput,
    NonFiniteValue,
    LengthMismatch,
    UndefinedCorrelation,
    NoLabels,
    // cli
    ConfigError,
    MissingInput,
    RuntimeFailure,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::NotFound: return "NotFound";
        case ErrorCode::EmptyContent: return "EmptyContent";
        case ErrorCode::SchemaError: return "SchemaError";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::MissingEmbedding: return "MissingEmbedding";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::InvalidFractions: return "InvalidFractions";
        case ErrorCode::NoCandidates: return "NoCandidates";
        case ErrorCode::VocabularyExhausted: return "VocabularyExhausted";
        case ErrorCode::DecodeError: return "DecodeError";
        case ErrorCode::PreprocessError: return "PreprocessError";
        case ErrorCode::EmptyAfterTokenization: return "EmptyAfterTokenization";
        case ErrorCode::PlanOutOfRange: return "PlanOutOfRange";
        case ErrorCode::CheckpointLoadError: return "CheckpointLoadError";
        case ErrorCode::NothingTrainable: return "NothingTrainable";
        case ErrorCode::DataExhausted: return "DataExhausted";
        case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::UndefinedCorrelation: return "UndefinedCorrelation";
        case ErrorCode::NoLabels: return "NoLabels";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::MissingInput: return "MissingInput";
        case ErrorCode::RuntimeFailure: return "RuntimeFailure";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Whole-file rejection error for JSONL corpora; carries the offending line and field.
class SchemaError : public Error {
public:
    SchemaError(int line, const std::string& field, const std::string& message)
        : Error(ErrorCode::SchemaError,
                "line " + std::to_string(line) + ", field '" + field + "': " + message),
          line_(line), field_(field) {}

    int line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    int line_;
    std::string field_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace cftclip
