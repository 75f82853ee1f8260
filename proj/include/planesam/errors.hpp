#pragma once

#include <stdexcept>
#include <string>

namespace planesam {

// Every failure surfaced by the library derives from Error. The CLI maps the
// three families below onto process exit codes (config 2, data 3, numeric 4).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class NumericFault : public Error {
public:
    using Error::Error;
};

// Data-family refinements.
class LoadError : public DataError {
public:
    using DataError::DataError;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class GenerationError : public DataError {
public:
    using DataError::DataError;
};

class SamplingError : public DataError {
public:
    using DataError::DataError;
};

class CheckpointError : public DataError {
public:
    using DataError::DataError;
};

// Argument-contract violations on pure functions (bad shapes, non-binary
// targets, degenerate prompts). Treated as data errors by the CLI.
class InputError : public DataError {
public:
    using DataError::DataError;
};

class ShapeError : public InputError {
public:
    using InputError::InputError;
};

class PromptError : public InputError {
public:
    using InputError::InputError;
};

}  // namespace planesam
