#pragma once

#include "stilt/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace stilt {

// Wire protocol: newline-delimited JSON over the worker's stdin/stdout.
// One job message in; zero or more log messages, then one result message, out.

nlohmann::ordered_json job_message(const TrainJob& job);

/// Parses a job message. The returned job has an opaque base checkpoint
/// (backend "worker") when one is named. Throws ProtocolViolation.
TrainJob parse_job_message(const nlohmann::json& msg);

nlohmann::ordered_json log_message(std::string_view text);
nlohmann::ordered_json result_message(const TrainResult& result);

/// Validates a result message and converts it. Throws ProtocolViolation.
TrainResult parse_result_message(const nlohmann::json& msg);

struct WorkerOptions {
    std::vector<std::string> command;
    std::chrono::duration<double> timeout{3600.0};
    /// Receives the text of every log message; defaults to debug logging.
    std::function<void(const std::string&)> on_log;
};

/// Splits a command string on whitespace, honoring single and double quotes.
std::vector<std::string> split_command(std::string_view command);

/// Spawns the worker, sends the job and waits for its result. Throws
/// WorkerCrashed (non-zero exit or signal), ProtocolViolation and Timeout.
/// The worker is killed and reaped before any exception leaves.
TrainResult run_worker_job(const TrainJob& job, const WorkerOptions& options);

/// Worker side backed by the reference trainer: answers every job line read
/// from `in` with one result line on `out`. Returns the number of jobs served.
std::size_t serve_worker(std::istream& in, std::ostream& out, const ReferenceOptions& reference);

}  // namespace stilt
