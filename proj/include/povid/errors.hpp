#pragma once

#include <stdexcept>
#include <string>

namespace povid {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct UnknownWordError : Error {
    explicit UnknownWordError(const std::string& word)
        : Error("unknown word: '" + word + "'"), word(word) {}
    std::string word;
};

struct EmptySceneError : Error {
    explicit EmptySceneError(const std::string& what) : Error(what) {}
};

struct NoCandidateError : Error {
    explicit NoCandidateError(const std::string& what) : Error(what) {}
};

struct NoRelationError : Error {
    explicit NoRelationError(const std::string& what) : Error(what) {}
};

struct NoAttributeError : Error {
    explicit NoAttributeError(const std::string& what) : Error(what) {}
};

struct MalformedAnswerError : Error {
    explicit MalformedAnswerError(const std::string& what) : Error(what) {}
};

struct AnnotatorError : Error {
    explicit AnnotatorError(const std::string& what) : Error(what) {}
};

struct InvalidStepCount : Error {
    explicit InvalidStepCount(const std::string& what) : Error(what) {}
};

struct StepOutOfRange : Error {
    explicit StepOutOfRange(const std::string& what) : Error(what) {}
};

struct LengthExceeded : Error {
    explicit LengthExceeded(const std::string& what) : Error(what) {}
};

struct NonFiniteLoss : Error {
    explicit NonFiniteLoss(const std::string& what) : Error(what) {}
};

struct DivergenceError : Error {
    explicit DivergenceError(const std::string& what) : Error(what) {}
};

struct CorruptCheckpoint : Error {
    explicit CorruptCheckpoint(const std::string& what) : Error(what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(what) {}
};

}  // namespace povid
