#pragma once

#include "duet/analyzer.hpp"
#include "duet/changeset.hpp"
#include "duet/instrumenter.hpp"
#include "duet/planner.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace duet {

inline constexpr int kInfiniteDistance = std::numeric_limits<int>::max();

struct GeneratedSpan {
    std::string name;
    std::string path;
    LineRange range; // target-version lines

    bool operator==(const GeneratedSpan&) const = default;
};

/// max(|Δstart|, |Δend|); kInfiniteDistance when the paths differ.
int span_distance(const std::string& gen_path, LineRange gen, const std::string& ideal_path, LineRange ideal) noexcept;

struct HitEntry {
    std::string span_name;
    std::optional<std::string> change_id; // nearest relevant change within k (ties: lowest id)
    std::optional<int> distance;          // to the nearest relevant ideal span on the same path

    bool operator==(const HitEntry&) const = default;
};

struct LocalizationReport {
    int k{5};
    std::size_t generated{0};
    std::size_t hits{0};
    std::size_t relevant{0};
    std::size_t relevant_found{0};
    std::size_t neutral{0};
    std::size_t neutral_clean{0};
    std::optional<double> precision; // null when the denominator is 0
    std::optional<double> recall;
    std::optional<double> specificity;
    std::vector<int> localization_errors;
    std::vector<HitEntry> matrix;

    bool operator==(const LocalizationReport&) const = default;
};

/// Metrics over a path index of the ground truth.
LocalizationReport compute_metrics(const std::vector<GeneratedSpan>& generated,
                                   const std::vector<GroundTruthChange>& truth, int k);

/// Independent oracle: full pairwise distance table, no indexing.
LocalizationReport brute_force_metrics(const std::vector<GeneratedSpan>& generated,
                                       const std::vector<GroundTruthChange>& truth, int k);

nlohmann::json to_json(const LocalizationReport& r);

struct TaskReport {
    std::string task;
    LocalizationReport report;
};

struct AveragedMetrics {
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> specificity;
};

/// Macro: mean of the defined per-task ratios. Micro: ratios of pooled counts.
AveragedMetrics macro_average(const std::vector<TaskReport>& tasks);
AveragedMetrics micro_average(const std::vector<TaskReport>& tasks);

/// `localization_report.json` body.
nlohmann::json localization_report_json(const std::vector<TaskReport>& tasks);

/// Spans of the given plans, for scoring.
std::vector<GeneratedSpan> spans_of(const std::vector<MarkerPlan>& plans);

// ---------------------------------------------------------------------------
// Severity sweep

struct CellVerdicts {
    Verdict span{Verdict::no_change};
    Verdict endpoint{Verdict::no_change};
};

struct CellResult {
    std::map<std::string, CellVerdicts> endpoints; // by endpoint id
    std::string error;                             // non-empty when the cell failed
};

/// Produces the verdicts of one severity cell. May throw; the sweep records the
/// error for that cell and carries on.
using CellRunner = std::function<CellResult(double severity)>;

struct SeverityGrid {
    std::vector<double> severities;
    std::map<double, CellResult> cells;

    /// Smallest severity > 0 whose verdict at the given level is regression.
    std::optional<double> minimal_detected(const std::string& endpoint, bool span_level) const;
    std::vector<std::string> endpoint_ids() const;
    nlohmann::json to_json() const;
};

SeverityGrid severity_sweep(const std::vector<double>& severities, const CellRunner& runner);

/// Severity ladder used by default.
const std::vector<double>& default_severities();

/// Cell runner over pre-recorded artifacts, one directory per severity.
CellRunner artifact_cell_runner(std::map<double, std::filesystem::path> artifact_dirs, AnalyzeOptions options);

struct PipelineSpec {
    /// argv of a version-pair generator; `{severity}` and `{out}` are substituted.
    /// The generator writes `<out>/A`, `<out>/B` and `<out>/changes.json`.
    std::vector<std::string> generator;
    /// Run config with `{tree}` in argv/env replaced by the instrumented tree of each side.
    nlohmann::json run_config;
    std::filesystem::path run_config_dir;
    LanguageAdapter adapter;
    Sensitivity sensitivity{Sensitivity::medium};
    AnalyzeOptions analyze;
    std::filesystem::path work_dir;
};

/// Cell runner that generates, plans (heuristic backend), instruments, benchmarks
/// and analyzes one version pair per severity.
CellRunner pipeline_cell_runner(PipelineSpec spec);

} // namespace duet
