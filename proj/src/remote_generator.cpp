#include "stilt/corpus_synth.hpp"
#include "stilt/error.hpp"
#include "stilt/log.hpp"

#include <httplib.h>
#include <json.hpp>

#include <thread>

namespace stilt {

namespace {

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;    // request path
};

Endpoint parse_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    const std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto slash = url.find('/', host_start);
    Endpoint ep;
    ep.origin = url.substr(0, slash);
    std::string base = slash == std::string::npos ? "" : url.substr(slash);
    while (!base.empty() && base.back() == '/') base.pop_back();
    ep.path = base + "/v1/generate";
    return ep;
}

}  // namespace

RemoteGenerator::RemoteGenerator(std::string endpoint) : RemoteGenerator(std::move(endpoint), Options{}) {}

RemoteGenerator::RemoteGenerator(std::string endpoint, Options options)
    : endpoint_(std::move(endpoint)), options_(options) {}

std::vector<std::string> RemoteGenerator::generate(const GenRequest& request) const {
    return remote_generate(endpoint_, request, options_);
}

std::vector<std::string> remote_generate(const std::string& endpoint, const GenRequest& request,
                                         const RemoteGenerator::Options& options) {
    using Cause = GeneratorUnavailable::Cause;
    const Endpoint ep = parse_endpoint(endpoint);

    nlohmann::ordered_json body;
    body["prefix"] = request.prefix;
    body["num_samples"] = request.num_samples;
    body["max_new_tokens"] = request.max_new_tokens;
    body["top_p"] = request.top_p;
    body["seed"] = request.seed;
    const std::string payload = body.dump();

    std::string last_error;
    auto backoff = options.initial_backoff;
    for (int attempt = 0;; ++attempt) {
        httplib::Client client(ep.origin);
        client.set_connection_timeout(options.timeout);
        client.set_read_timeout(options.timeout);
        client.set_write_timeout(options.timeout);
        auto res = client.Post(ep.path, payload, "application/json");

        bool retryable = true;
        if (!res) {
            last_error = httplib::to_string(res.error());
        } else if (res->status == 200) {
            nlohmann::json reply;
            try {
                reply = nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                throw GeneratorUnavailable(Cause::malformed, attempt, std::string("unparseable body: ") + e.what());
            }
            auto it = reply.is_object() ? reply.find("continuations") : reply.end();
            if (it == reply.end() || !it->is_array()) {
                throw GeneratorUnavailable(Cause::malformed, attempt, "missing 'continuations' array");
            }
            if (it->size() != request.num_samples) {
                throw GeneratorUnavailable(Cause::malformed, attempt,
                                           fmt::format("expected {} continuations, got {}", request.num_samples,
                                                       it->size()));
            }
            std::vector<std::string> out;
            for (const auto& c : *it) {
                if (!c.is_string()) throw GeneratorUnavailable(Cause::malformed, attempt, "non-string continuation");
                out.push_back(c.get<std::string>());
            }
            return out;
        } else {
            last_error = fmt::format("HTTP {}", res->status);
            retryable = res->status >= 500;
        }

        if (!retryable) throw GeneratorUnavailable(Cause::malformed, attempt, last_error);
        if (attempt >= options.max_retries) throw GeneratorUnavailable(Cause::transport, attempt, last_error);
        log::warn("generate: {} ({}), retrying in {} ms", endpoint, last_error, backoff.count());
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
    }
}

}  // namespace stilt
