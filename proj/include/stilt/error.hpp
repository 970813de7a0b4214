#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stilt {

// Base for every domain failure. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define STILT_ERROR(Name)                                                \
    class Name : public Error {                                          \
    public:                                                              \
        explicit Name(const std::string& what) : Error(#Name, what) {}   \
    }

// corpus_synth
STILT_ERROR(EmptyCorpus);
STILT_ERROR(InvalidDistribution);
STILT_ERROR(GenerationExhausted);
STILT_ERROR(InsufficientCorpus);

// datasets
STILT_ERROR(WrongTaskType);
STILT_ERROR(SampleTooLarge);

// trainer
STILT_ERROR(ArchitectureMismatch);
STILT_ERROR(ProtocolViolation);
STILT_ERROR(CheckpointError);

// sweep
STILT_ERROR(LedgerCorrupt);
STILT_ERROR(DatasetMissing);
STILT_ERROR(SpecError);
STILT_ERROR(TrainingFailed);

// stats
STILT_ERROR(EmptyInput);
STILT_ERROR(NonBinaryLabels);
STILT_ERROR(MixedMetrics);
STILT_ERROR(GridMismatch);
STILT_ERROR(IoError);

#undef STILT_ERROR

class GeneratorUnavailable : public Error {
public:
    enum class Cause { transport, malformed };

    GeneratorUnavailable(Cause cause, int retries, const std::string& detail)
        : Error("GeneratorUnavailable",
                std::string(cause == Cause::transport ? "transport" : "malformed") + " after " +
                    std::to_string(retries) + " retries: " + detail),
          cause_(cause), retries_(retries) {}

    Cause cause() const noexcept { return cause_; }
    int retries() const noexcept { return retries_; }

private:
    Cause cause_;
    int retries_;
};

// Raised while reading JSONL; line numbers are 1-based.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& detail)
        : Error("ParseError", "line " + std::to_string(line) + ": " + detail), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class InvariantViolation : public Error {
public:
    InvariantViolation(std::size_t line, std::string rule)
        : Error("InvariantViolation", "line " + std::to_string(line) + ": " + rule),
          line_(line), rule_(std::move(rule)) {}
    std::size_t line() const noexcept { return line_; }
    const std::string& rule() const noexcept { return rule_; }

private:
    std::size_t line_;
    std::string rule_;
};

class WorkerCrashed : public Error {
public:
    WorkerCrashed(int exit_code, const std::string& stderr_tail)
        : Error("WorkerCrashed", "exit code " + std::to_string(exit_code) + "; stderr: " + stderr_tail),
          exit_code_(exit_code), stderr_tail_(stderr_tail) {}
    int exit_code() const noexcept { return exit_code_; }
    const std::string& stderr_tail() const noexcept { return stderr_tail_; }

private:
    int exit_code_;
    std::string stderr_tail_;
};

class Timeout : public Error {
public:
    explicit Timeout(double limit_s)
        : Error("Timeout", "worker exceeded " + std::to_string(limit_s) + " s"), limit_s_(limit_s) {}
    double limit_s() const noexcept { return limit_s_; }

private:
    double limit_s_;
};

}  // namespace stilt
