#pragma once

#include "duet/changeset.hpp"
#include "duet/util.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace duet {

enum class Sensitivity { low, medium, high };

std::string_view to_string(Sensitivity level) noexcept;
Sensitivity parse_sensitivity(std::string_view text); // throws ConfigError

/// Planner instructions for a level. The wording is a placeholder; only the
/// level-to-rule mapping is load-bearing for the heuristic backend.
const std::string& sensitivity_instructions(Sensitivity level);

struct MarkerSpan {
    std::string name;
    std::string path;
    LineRange new_range;
    std::optional<LineRange> old_range;
    std::map<std::string, std::string> attributes;
    bool handles_exit_points{false};

    bool operator==(const MarkerSpan&) const = default;
};

struct MarkerPlan {
    std::string change_fingerprint;
    std::string path;
    std::vector<MarkerSpan> spans; // empty means "skip"
    std::string backend_id;
    Sensitivity sensitivity{Sensitivity::medium};

    bool operator==(const MarkerPlan&) const = default;
};

nlohmann::json plan_to_json(const MarkerPlan& plan);
/// Canonical text form. Stable key order, two-space indent, trailing newline.
std::string serialize_plan(const MarkerPlan& plan);

/// JSON schema for marker-plan documents, sent to inference backends.
const nlohmann::json& marker_plan_schema();

/// Checks a raw plan document against the marker-plan schema for `change`.
/// Missing `fingerprint`/`backend`/`sensitivity` are filled from the arguments;
/// present ones must agree. Throws SchemaViolation.
MarkerPlan validate_plan(const nlohmann::json& raw, const FileChange& change,
                         std::optional<int> target_line_count = std::nullopt,
                         std::string_view backend_id = "unknown", Sensitivity level = Sensitivity::medium);

/// Reads a plan file written by `duet plan`; backend and sensitivity are taken from the document.
MarkerPlan load_plan_document(const nlohmann::json& doc, const FileChange& change,
                              std::optional<int> target_line_count = std::nullopt);

MarkerPlan heuristic_plan(const FileChange& change, std::string_view target_source, Sensitivity level);

struct PlanRequest {
    const FileChange& change;
    std::string_view target_source;
    Sensitivity level;
};

class PlannerBackend {
public:
    virtual ~PlannerBackend() = default;
    virtual std::string id() const = 0;
    /// Throws BackendError or SchemaViolation; plan_changes turns both into skips.
    virtual MarkerPlan plan(const PlanRequest& request) = 0;
};

class HeuristicBackend final : public PlannerBackend {
public:
    std::string id() const override { return "heuristic"; }
    MarkerPlan plan(const PlanRequest& request) override;
};

struct InferenceConfig {
    std::string url;
    std::string api_key;
    std::chrono::milliseconds timeout{30000};
    /// 1 = single shot. Iterative mode re-prompts with the validation error, capped at 3.
    int max_round_trips{1};

    static InferenceConfig from_env();
};

/// Asks an HTTP inference service for a plan document. Only the parsed plan is
/// ever used; response text never reaches a source tree.
class InferenceBackend final : public PlannerBackend {
public:
    explicit InferenceBackend(InferenceConfig config);

    std::string id() const override { return "inference"; }
    MarkerPlan plan(const PlanRequest& request) override;

    std::size_t requests_sent() const noexcept { return requests_.load(); }

private:
    nlohmann::json build_request(const PlanRequest& request, const std::string& feedback) const;

    InferenceConfig config_;
    std::atomic<std::size_t> requests_{0};
};

/// Directory of plan files named `<fingerprint>-<level>-<backend>.json`.
class PlanCache {
public:
    explicit PlanCache(std::filesystem::path dir);

    std::optional<MarkerPlan> lookup(const FileChange& change, Sensitivity level, const std::string& backend_id) const;
    void store(const MarkerPlan& plan);

    std::filesystem::path entry_path(const std::string& fingerprint, Sensitivity level,
                                     const std::string& backend_id) const;
    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::mutex write_mutex_;
};

struct PlanOutcome {
    MarkerPlan plan;
    std::optional<std::string> skip_reason; // "backend_error", "schema_violation", "source_unavailable"
    std::string detail;
    bool from_cache{false};
};

/// Returns the target-version text of a path, or nullopt if unavailable.
using SourceProvider = std::function<std::optional<std::string>(const std::string& path)>;

SourceProvider directory_source(std::filesystem::path root);

std::vector<PlanOutcome> plan_changes(const ChangeSet& changes, Sensitivity level, PlannerBackend& backend,
                                      PlanCache* cache, const SourceProvider& sources, std::size_t workers = 4);

} // namespace duet
