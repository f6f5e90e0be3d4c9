#pragma once

#include <stdexcept>
#include <string>

namespace pinas {

// Process exit codes shared by every command-line entry point.
enum class ExitCode : int {
    ok = 0,
    config = 2,
    contract = 3,
    numeric = 4,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept = 0;
};

// Bad configuration, malformed input files, shape mismatches at graph build time.
class ConfigError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

// Input data that cannot be ingested (truncated or malformed files).
class IngestionError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::contract; }
};

// Operation invoked in the wrong state (e.g. backward without forward).
class StateError : public ContractError {
public:
    using ContractError::ContractError;
};

// A pipeline stage was requested before the stage it depends on.
class PrerequisiteError : public ContractError {
public:
    using ContractError::ContractError;
};

class NumericError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

// Embeddings became constant across inputs during contrastive training.
class CollapseError : public NumericError {
public:
    CollapseError(const std::string& what, long step, double metric)
        : NumericError(what), step_(step), metric_(metric) {}
    long step() const noexcept { return step_; }
    double metric() const noexcept { return metric_; }

private:
    long step_;
    double metric_;
};

}  // namespace pinas
