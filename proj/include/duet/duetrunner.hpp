#pragma once

#include "duet/artifact.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <sys/types.h>
#include <vector>

namespace duet {

struct CommandSpec {
    std::vector<std::string> argv;
    std::map<std::string, std::string> env;
    std::string base_url; // e.g. http://127.0.0.1:8101
};

struct WorkloadStep {
    std::string id; // endpoint id used in reports
    std::string method{"GET"};
    std::string path_template; // `{param}` placeholders
    std::map<std::string, std::vector<std::string>> params;
    double weight{1.0};
    std::string body;
    std::string content_type{"application/json"};
};

struct RunConfig {
    CommandSpec cmd_a;
    CommandSpec cmd_b;
    std::optional<CommandSpec> aa_cmd; // uninstrumented counterpart of A, used for A/A runs
    std::vector<int> cpu_set_a;
    std::vector<int> cpu_set_b;
    std::optional<int> reserved_os_core;
    std::optional<std::size_t> warmup_requests; // default: 10% of measured
    std::size_t measured_requests{1000};
    std::vector<WorkloadStep> workload;
    std::string health_path{"/healthz"};
    int timeout_ms{5000};
    int health_timeout_ms{15000};
    std::uint64_t seed{0};
    std::int64_t sync_bound_ns{1'000'000};

    /// Relative argv[0] and paths are resolved against `base_dir`. Throws ConfigError.
    static RunConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
    static RunConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    std::size_t warmup() const noexcept { return warmup_requests ? *warmup_requests : measured_requests / 10; }

    /// Disjoint cpu sets, reserved core outside both, positive weights, known placeholders.
    void validate() const;
};

struct GeneratedRequest {
    std::int64_t seq{};
    std::string endpoint;
    std::string method;
    std::string path;
    std::string body;
    std::string content_type;

    bool operator==(const GeneratedRequest&) const = default;
};

/// The full request sequence (warmup then measured), a pure function of the
/// workload and the seed.
std::vector<GeneratedRequest> generate_requests(const RunConfig& cfg);

struct SutProcess {
    char version{'A'};
    pid_t pid{-1};
    std::string base_url;
    std::filesystem::path log_path;
    std::optional<std::string> affinity_warning;
};

/// Owns both SUT processes; terminates them on destruction.
class DuetHandles {
public:
    DuetHandles() = default;
    DuetHandles(SutProcess a, SutProcess b) : a_(std::move(a)), b_(std::move(b)) {}
    DuetHandles(DuetHandles&& other) noexcept;
    DuetHandles& operator=(DuetHandles&& other) noexcept;
    DuetHandles(const DuetHandles&) = delete;
    DuetHandles& operator=(const DuetHandles&) = delete;
    ~DuetHandles();

    const SutProcess& a() const noexcept { return a_; }
    const SutProcess& b() const noexcept { return b_; }

    /// Whether the process is still running (reaps it if not).
    bool alive(char version);
    /// SIGTERM, then SIGKILL after `grace`. Safe to call twice.
    void shutdown(std::chrono::milliseconds grace = std::chrono::milliseconds(5000));

private:
    SutProcess a_;
    SutProcess b_;
};

struct LaunchOptions {
    bool aa_mode{false};
};

/// Starts both SUTs (A first), applies CPU affinity and waits for their health
/// endpoints. Span output goes to `<artifact_dir>/spans-<tag>.ndjson`.
/// Throws HealthCheckTimeout (the other SUT is stopped first) or ConfigError.
DuetHandles launch_duet(const RunConfig& cfg, const std::filesystem::path& artifact_dir,
                        const LaunchOptions& options = {});

struct RunOutcome {
    std::vector<PairedMeasurement> pairs;
    std::size_t dropped{0};
    std::map<std::string, std::size_t> dropped_by_reason;
    std::vector<std::int64_t> dispatch_skew_ns; // one per attempted pair
    bool completed{false};
    std::string abort_reason;
    std::string started_at;
    std::string finished_at;
};

/// Sends every generated request to both SUTs, each pair released at a shared
/// instant by two worker threads. Warmup pairs are discarded.
RunOutcome run_workload(DuetHandles& handles, const RunConfig& cfg, const std::filesystem::path& artifact_dir);

/// Stops the SUTs (so recorders flush) and writes client_pairs.csv and run_metadata.json.
nlohmann::json collect_artifacts(DuetHandles& handles, const RunConfig& cfg, const RunOutcome& outcome,
                                 const std::filesystem::path& artifact_dir, const LaunchOptions& options = {});

/// launch + run + collect. Returns the outcome; artifacts are always written once
/// the SUTs were launched.
RunOutcome run_duet(const RunConfig& cfg, const std::filesystem::path& artifact_dir, const LaunchOptions& options = {});

} // namespace duet
