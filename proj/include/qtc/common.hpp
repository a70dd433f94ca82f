#pragma once

#include <stdexcept>
#include <string>

namespace qtc {

// Exit codes shared by the CLI and the typed errors below. Each error class
// maps to a distinct code so scripted callers can branch on $?.
enum class ExitCode : int {
    ok = 0,
    failure = 1,
    usage = 2,
    missing_input = 3,
    schema = 4,
    diverged = 5,
};

class Error : public std::runtime_error {
  public:
    Error(ExitCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ExitCode code() const { return code_; }

  private:
    ExitCode code_;
};

class IoError : public Error {
  public:
    explicit IoError(const std::string& msg) : Error(ExitCode::missing_input, msg) {}
};

class SchemaError : public Error {
  public:
    explicit SchemaError(const std::string& msg) : Error(ExitCode::schema, msg) {}
};

class DivergenceError : public Error {
  public:
    DivergenceError(int step, const std::string& msg)
        : Error(ExitCode::diverged, msg), step_(step) {}
    int step() const { return step_; }

  private:
    int step_;
};

}  // namespace qtc
