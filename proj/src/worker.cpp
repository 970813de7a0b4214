#include "stilt/worker.hpp"

#include "stilt/error.hpp"
#include "stilt/log.hpp"

#include <fmt/core.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace stilt {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::size_t kStderrTail = 4096;

ProtocolViolation violation(const std::string& detail) { return ProtocolViolation(detail); }

const json& require(const json& msg, const char* key, json::value_t type, const char* what) {
    auto it = msg.find(key);
    if (it == msg.end()) throw violation(fmt::format("{} message lacks '{}'", what, key));
    const bool ok = type == json::value_t::number_float
                        ? it->is_number()
                        : (type == json::value_t::number_integer ? it->is_number_integer() : it->type() == type);
    if (!ok) throw violation(fmt::format("{} message field '{}' has the wrong type", what, key));
    return *it;
}

const json& require_string_or_null(const json& msg, const char* key, const char* what) {
    auto it = msg.find(key);
    if (it == msg.end()) throw violation(fmt::format("{} message lacks '{}'", what, key));
    if (!it->is_string() && !it->is_null()) throw violation(fmt::format("{} field '{}' must be a string or null", what, key));
    return *it;
}

}  // namespace

ojson job_message(const TrainJob& job) {
    if (!job.max_epochs) throw std::invalid_argument("job message needs a resolved max_epochs");
    ojson m;
    m["type"] = "job";
    m["phase"] = to_string(job.phase);
    m["train_path"] = job.train_path.string();
    m["dev_path"] = job.dev_path.string();
    m["hyperparams"] = {{"learning_rate", job.hyperparams.learning_rate},
                        {"effective_batch", job.hyperparams.effective_batch},
                        {"warmup_ratio", job.hyperparams.warmup_ratio},
                        {"seed", job.hyperparams.seed}};
    m["base_checkpoint"] = job.base_checkpoint ? ojson(job.base_checkpoint->uri.string()) : ojson(nullptr);
    m["max_epochs"] = *job.max_epochs;
    m["output_dir"] = job.output_dir.string();
    return m;
}

TrainJob parse_job_message(const json& msg) {
    if (!msg.is_object()) throw violation("message is not an object");
    if (msg.value("type", "") != "job") throw violation("expected a job message");
    TrainJob job;
    try {
        job.phase = parse_phase(require(msg, "phase", json::value_t::string, "job").get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw violation(e.what());
    }
    job.train_path = require(msg, "train_path", json::value_t::string, "job").get<std::string>();
    job.dev_path = require(msg, "dev_path", json::value_t::string, "job").get<std::string>();
    const json& hp = require(msg, "hyperparams", json::value_t::object, "job");
    job.hyperparams.learning_rate = require(hp, "learning_rate", json::value_t::number_float, "hyperparams").get<double>();
    const auto batch = require(hp, "effective_batch", json::value_t::number_integer, "hyperparams").get<std::int64_t>();
    if (batch <= 0) throw violation("effective_batch must be positive");
    job.hyperparams.effective_batch = static_cast<std::size_t>(batch);
    job.hyperparams.warmup_ratio = require(hp, "warmup_ratio", json::value_t::number_float, "hyperparams").get<double>();
    job.hyperparams.seed = require(hp, "seed", json::value_t::number_integer, "hyperparams").get<std::int64_t>();
    const json& base = require_string_or_null(msg, "base_checkpoint", "job");
    if (base.is_string()) {
        Checkpoint c;
        c.uri = base.get<std::string>();
        c.backend = "worker";
        job.base_checkpoint = c;
    }
    const auto epochs = require(msg, "max_epochs", json::value_t::number_integer, "job").get<std::int64_t>();
    if (epochs < 0) throw violation("max_epochs must be non-negative");
    job.max_epochs = static_cast<std::size_t>(epochs);
    job.output_dir = require(msg, "output_dir", json::value_t::string, "job").get<std::string>();
    job.backend = "worker";
    return job;
}

ojson log_message(std::string_view text) { return {{"type", "log"}, {"message", std::string(text)}}; }

ojson result_message(const TrainResult& r) {
    ojson m;
    m["type"] = "result";
    m["status"] = to_string(r.status);
    m["dev_metric"] = r.dev_metric;
    m["metric_name"] = to_string(r.metric_name);
    m["best_epoch"] = r.best_epoch;
    m["checkpoint"] = r.checkpoint.uri.string();
    m["error"] = r.error.empty() ? ojson(nullptr) : ojson(r.error);
    return m;
}

TrainResult parse_result_message(const json& msg) {
    if (!msg.is_object() || msg.value("type", "") != "result") throw violation("expected a result message");
    TrainResult r;
    const auto status = require(msg, "status", json::value_t::string, "result").get<std::string>();
    if (status != "ok" && status != "failed") throw violation("result status '" + status + "' is neither ok nor failed");
    r.status = status == "ok" ? RunStatus::ok : RunStatus::failed;
    r.dev_metric = require(msg, "dev_metric", json::value_t::number_float, "result").get<double>();
    try {
        r.metric_name = parse_metric_name(require(msg, "metric_name", json::value_t::string, "result").get<std::string>());
    } catch (const InvariantViolation& e) {
        throw violation(e.what());
    }
    const auto epoch = require(msg, "best_epoch", json::value_t::number_integer, "result").get<std::int64_t>();
    if (epoch < 0) throw violation("best_epoch must be non-negative");
    r.best_epoch = static_cast<std::size_t>(epoch);
    r.checkpoint.uri = require(msg, "checkpoint", json::value_t::string, "result").get<std::string>();
    r.checkpoint.backend = "worker";
    const json& err = require_string_or_null(msg, "error", "result");
    if (err.is_string()) r.error = err.get<std::string>();
    const double lo = r.metric_name == MetricName::mcc ? -1.0 : 0.0;
    if (!(r.dev_metric >= lo && r.dev_metric <= 1.0)) {
        throw violation(fmt::format("dev_metric {} outside [{}, 1]", r.dev_metric, lo));
    }
    return r;
}

std::vector<std::string> split_command(std::string_view command) {
    std::vector<std::string> out;
    std::string cur;
    bool in_word = false;
    char quote = 0;
    for (char c : command) {
        if (quote) {
            if (c == quote) quote = 0;
            else cur += c;
        } else if (c == '\'' || c == '"') {
            quote = c;
            in_word = true;
        } else if (c == ' ' || c == '\t' || c == '\n') {
            if (in_word) out.push_back(std::move(cur));
            cur.clear();
            in_word = false;
        } else {
            cur += c;
            in_word = true;
        }
    }
    if (quote) throw std::invalid_argument("unterminated quote in worker command");
    if (in_word) out.push_back(std::move(cur));
    return out;
}

// ---------------------------------------------------------------------------
// Orchestrator side

namespace {

struct Fd {
    int fd = -1;
    Fd() = default;
    explicit Fd(int f) : fd(f) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    ~Fd() { reset(); }
    void reset() {
        if (fd >= 0) ::close(fd);
        fd = -1;
    }
};

void make_pipe(Fd& read_end, Fd& write_end) {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) throw IoError(std::string("pipe: ") + std::strerror(errno));
    read_end.fd = fds[0];
    write_end.fd = fds[1];
}

// Kills and reaps the child unless it was already reaped.
struct Child {
    pid_t pid = -1;
    ~Child() {
        if (pid > 0) {
            ::kill(pid, SIGKILL);
            int st = 0;
            ::waitpid(pid, &st, 0);
        }
    }
    int wait() {
        int st = 0;
        while (::waitpid(pid, &st, 0) < 0 && errno == EINTR) {
        }
        pid = -1;
        if (WIFEXITED(st)) return WEXITSTATUS(st);
        if (WIFSIGNALED(st)) return 128 + WTERMSIG(st);
        return -1;
    }
};

void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

}  // namespace

TrainResult run_worker_job(const TrainJob& input_job, const WorkerOptions& options) {
    if (options.command.empty()) throw std::invalid_argument("no worker command configured");
    ignore_sigpipe();

    TrainJob job = input_job;
    if (!job.max_epochs) job.max_epochs = default_max_epochs(job.phase, read_jsonl(job.train_path).examples.size());
    const std::string request = job_message(job).dump() + "\n";

    Fd in_r, in_w, out_r, out_w, err_r, err_w;
    make_pipe(in_r, in_w);
    make_pipe(out_r, out_w);
    make_pipe(err_r, err_w);

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_r.fd, STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_w.fd, STDOUT_FILENO);
    posix_spawn_file_actions_adddup2(&actions, err_w.fd, STDERR_FILENO);

    std::vector<char*> argv;
    for (const auto& a : options.command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);

    Child child;
    const int rc = ::posix_spawnp(&child.pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) {
        child.pid = -1;
        throw WorkerCrashed(127, fmt::format("cannot spawn '{}': {}", options.command.front(), std::strerror(rc)));
    }
    in_r.reset();
    out_w.reset();
    err_w.reset();

    // Small enough to fit in the pipe buffer; a worker that exits early
    // surfaces below as a crash.
    std::size_t written = 0;
    while (written < request.size()) {
        const ssize_t n = ::write(in_w.fd, request.data() + written, request.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            break;
        }
        written += static_cast<std::size_t>(n);
    }
    in_w.reset();

    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(options.timeout);
    std::string out_buf, err_tail;
    std::optional<TrainResult> result;
    auto handle_line = [&](const std::string& line) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) return;
        json msg;
        try {
            msg = json::parse(line);
        } catch (const json::parse_error& e) {
            throw violation(fmt::format("unparseable worker output: {}", e.what()));
        }
        if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
            throw violation("worker message lacks a string 'type'");
        }
        const auto type = msg["type"].get<std::string>();
        if (type == "log") {
            const auto& text = require(msg, "message", json::value_t::string, "log").get_ref<const std::string&>();
            if (options.on_log) options.on_log(text);
            else log::debug("worker: {}", text);
        } else if (type == "result") {
            if (result) throw violation("worker sent more than one result");
            result = parse_result_message(msg);
        } else {
            throw violation("unknown worker message type '" + type + "'");
        }
    };

    bool out_open = true, err_open = true;
    char buf[8192];
    while (out_open || err_open) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) throw Timeout(options.timeout.count());
        pollfd fds[2] = {{out_open ? out_r.fd : -1, POLLIN, 0}, {err_open ? err_r.fd : -1, POLLIN, 0}};
        const int ready = ::poll(fds, 2, static_cast<int>(std::min<std::int64_t>(left.count(), 1000)));
        if (ready < 0) {
            if (errno == EINTR) continue;
            throw IoError(std::string("poll: ") + std::strerror(errno));
        }
        if (out_open && (fds[0].revents & (POLLIN | POLLHUP | POLLERR))) {
            const ssize_t n = ::read(out_r.fd, buf, sizeof buf);
            if (n <= 0) {
                out_open = false;
            } else {
                out_buf.append(buf, static_cast<std::size_t>(n));
                std::size_t nl;
                while ((nl = out_buf.find('\n')) != std::string::npos) {
                    const std::string line = out_buf.substr(0, nl);
                    out_buf.erase(0, nl + 1);
                    handle_line(line);
                }
            }
        }
        if (err_open && (fds[1].revents & (POLLIN | POLLHUP | POLLERR))) {
            const ssize_t n = ::read(err_r.fd, buf, sizeof buf);
            if (n <= 0) {
                err_open = false;
            } else {
                err_tail.append(buf, static_cast<std::size_t>(n));
                if (err_tail.size() > kStderrTail) err_tail.erase(0, err_tail.size() - kStderrTail);
            }
        }
    }
    if (!out_buf.empty()) handle_line(out_buf);

    const int code = child.wait();
    if (code != 0) throw WorkerCrashed(code, err_tail);
    if (!result) throw violation("worker exited without a result message");
    if (!result->checkpoint.uri.empty()) result->checkpoint.digest = path_digest(result->checkpoint.uri);
    return *result;
}

// ---------------------------------------------------------------------------
// Worker side

std::size_t serve_worker(std::istream& in, std::ostream& out, const ReferenceOptions& reference) {
    std::size_t served = 0;
    std::string line;
    auto emit = [&](const ojson& msg) { out << msg.dump() << '\n' << std::flush; };
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        TrainResult result;
        try {
            TrainJob job = parse_job_message(json::parse(line));
            if (job.base_checkpoint) job.base_checkpoint = describe_checkpoint(job.base_checkpoint->uri);
            job.backend = "reference";
            job.reference = reference;
            emit(log_message(fmt::format("{} phase on {}", to_string(job.phase), job.train_path.string())));
            result = train(job);
        } catch (const std::exception& e) {
            result = TrainResult{};
            result.status = RunStatus::failed;
            result.error = e.what();
        }
        emit(result_message(result));
        ++served;
    }
    return served;
}

}  // namespace stilt
