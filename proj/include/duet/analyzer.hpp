#pragma once

#include "duet/artifact.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace duet {

enum class Verdict { no_change, regression, improvement };

std::string_view to_string(Verdict v) noexcept;
Verdict parse_verdict(std::string_view text);

/// Δᵢ = (x_B / x_A − 1) · 100 per pair. Throws ZeroBaseline if some x_A is 0.
std::vector<double> relative_changes(std::span<const double> x_a, std::span<const double> x_b);
std::vector<double> relative_changes(const std::vector<PairedMeasurement>& pairs);

/// Quantile of sorted data by linear interpolation between order statistics
/// (Hyndman-Fan type 7): h = (n − 1)·p, interpolate x[floor(h)] and x[floor(h) + 1].
/// This is the only quantile rule used in the analyzer.
double quantile_sorted(std::span<const double> sorted, double p);
double median(std::vector<double> values);

struct BootstrapOptions {
    std::size_t resamples{10000};
    double level{0.95};
    std::uint64_t seed{0};
    std::size_t threads{1};
};

struct DetectionResult {
    double relative_median{};
    double ci_lower{};
    double ci_upper{};
    double level{};
    std::size_t resamples{};
    std::uint64_t seed{};
    Verdict verdict{Verdict::no_change};
    std::size_t n{};
    /// Percentile intervals can exclude the sample median on tiny n.
    bool median_outside_ci{false};
};

/// Percentile bootstrap of the median. Resamples are drawn in fixed-size chunks, each
/// with its own engine seeded from (seed, chunk index), so results do not depend on
/// `threads`. Throws InsufficientData when n < 2 or resamples < 100.
DetectionResult bootstrap_ci_median(std::span<const double> series, const BootstrapOptions& options = {});

/// The sorted medians of every bootstrap resample (used by tests and exports).
std::vector<double> bootstrap_medians(std::span<const double> series, const BootstrapOptions& options);

Verdict verdict(const DetectionResult& result) noexcept;
Verdict verdict(double ci_lower, double ci_upper) noexcept;

/// Regression if any input is a regression, else improvement if any is, else no_change.
Verdict aggregate_verdicts(std::span<const Verdict> verdicts);

/// Hellinger distance of two samples over `bins` equal-width bins spanning the pooled range.
double hellinger(std::span<const double> a, std::span<const double> b, std::size_t bins = 50);

struct QQPoint {
    int percentile{};
    double q_a{};
    double q_b{};
};

/// Percentiles 1..99 of both samples under the analyzer quantile rule.
std::vector<QQPoint> qq_points(std::span<const double> a, std::span<const double> b);

nlohmann::json to_json(const DetectionResult& r);

struct AnalyzeOptions {
    BootstrapOptions bootstrap;
    bool aa_mode{false};
    std::size_t hellinger_bins{50};
};

struct SourceAnalysis {
    std::string source;
    DetectionResult result;
    std::optional<double> hellinger;
    std::vector<QQPoint> qq;
};

struct EndpointAnalysis {
    SourceAnalysis client;
    std::map<std::string, SourceAnalysis> spans; // spans observed on this endpoint's requests
    Verdict span_verdict{Verdict::no_change};     // aggregate over `spans`
};

struct AnalysisReport {
    std::map<std::string, EndpointAnalysis> endpoints;
    std::map<std::string, SourceAnalysis> spans; // over all measured requests
    std::vector<std::string> warnings;
    nlohmann::json to_json(const AnalyzeOptions& options) const;
};

/// Reads a benchmark artifact directory and writes `analysis.json` into `out_dir`
/// (the artifact directory when empty).
AnalysisReport analyze_artifact(const std::filesystem::path& artifact_dir, const AnalyzeOptions& options,
                                const std::filesystem::path& out_dir = {});

} // namespace duet
