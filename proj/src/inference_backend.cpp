#include "duet/error.hpp"
#include "duet/planner.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>

using nlohmann::json;

namespace duet {

namespace {

struct Endpoint {
    std::string origin; // scheme://host[:port]
    std::string path;
};

Endpoint split_url(const std::string& url) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos)
        throw ConfigError("inference endpoint must be an absolute URL: " + url);
    auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos)
        return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

std::string context_excerpt(const FileChange& change, std::string_view source) {
    constexpr int radius = 15;
    const auto lines = TextLines::split(source).lines;
    std::string out;
    for (const auto& h : change.hunks) {
        const auto region = h.changed_region();
        const int from = std::max(1, region.start - radius);
        const int to = std::min(static_cast<int>(lines.size()), region.end + radius);
        out += "--- " + change.path + " lines " + std::to_string(from) + "-" + std::to_string(to) + "\n";
        for (int i = from; i <= to; ++i)
            out += std::to_string(i) + ": " + lines[static_cast<std::size_t>(i - 1)] + "\n";
    }
    return out;
}

} // namespace

InferenceConfig InferenceConfig::from_env() {
    InferenceConfig cfg;
    if (const char* url = std::getenv("DUET_INFERENCE_ENDPOINT"))
        cfg.url = url;
    if (const char* key = std::getenv("DUET_INFERENCE_API_KEY"))
        cfg.api_key = key;
    return cfg;
}

InferenceBackend::InferenceBackend(InferenceConfig config) : config_(std::move(config)) {
    if (config_.url.empty())
        throw ConfigError("inference endpoint not configured (set DUET_INFERENCE_ENDPOINT)");
    config_.max_round_trips = std::clamp(config_.max_round_trips, 1, 3);
}

json InferenceBackend::build_request(const PlanRequest& request, const std::string& feedback) const {
    std::string instructions = sensitivity_instructions(request.level);
    instructions +=
        "\nReturn a marker plan for the change as a JSON object matching the schema. Span ranges are 1-based "
        "line numbers in the target version of " +
        request.change.path +
        ". Set handles_exit_points when a span contains return statements or can raise.\n";
    instructions += "Target-version context:\n" + context_excerpt(request.change, request.target_source);
    if (!feedback.empty())
        instructions += "\nYour previous answer was rejected: " + feedback + "\n";
    return {{"instructions", instructions},
            {"change", render_git_like(request.change)},
            {"schema", marker_plan_schema()}};
}

MarkerPlan InferenceBackend::plan(const PlanRequest& request) {
    const auto endpoint = split_url(config_.url);
    const int line_count = static_cast<int>(TextLines::split(request.target_source).lines.size());

    std::string feedback;
    for (int round = 1;; ++round) {
        httplib::Client client(endpoint.origin);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        httplib::Headers headers;
        if (!config_.api_key.empty())
            headers.emplace("Authorization", "Bearer " + config_.api_key);

        ++requests_;
        auto res = client.Post(endpoint.path, headers, build_request(request, feedback).dump(), "application/json");
        if (!res)
            throw BackendError("inference request failed: " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300)
            throw BackendError("inference endpoint returned HTTP " + std::to_string(res->status));

        try {
            auto body = json::parse(res->body, nullptr, false);
            if (body.is_discarded() || !body.is_object())
                throw SchemaViolation("$", "response is not a JSON object");
            auto plan = body.find("plan");
            if (plan == body.end())
                throw SchemaViolation("$.plan", "missing plan");
            return validate_plan(*plan, request.change, line_count, id(), request.level);
        } catch (const SchemaViolation& e) {
            if (round >= config_.max_round_trips)
                throw;
            feedback = e.what();
        }
    }
}

} // namespace duet
