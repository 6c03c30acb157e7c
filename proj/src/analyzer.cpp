#include "duet/analyzer.hpp"

#include "duet/error.hpp"
#include "duet/spanstore.hpp"
#include "duet/util.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <thread>

using nlohmann::json;
namespace fs = std::filesystem;

namespace duet {

std::string_view to_string(Verdict v) noexcept {
    switch (v) {
    case Verdict::no_change: return "no_change";
    case Verdict::regression: return "regression";
    case Verdict::improvement: return "improvement";
    }
    return "no_change";
}

Verdict parse_verdict(std::string_view text) {
    if (text == "no_change")
        return Verdict::no_change;
    if (text == "regression")
        return Verdict::regression;
    if (text == "improvement")
        return Verdict::improvement;
    throw ConfigError("unknown verdict: " + std::string(text));
}

std::vector<double> relative_changes(std::span<const double> x_a, std::span<const double> x_b) {
    if (x_a.size() != x_b.size())
        throw InsufficientData("paired series differ in length");
    std::vector<double> out;
    out.reserve(x_a.size());
    for (std::size_t i = 0; i < x_a.size(); ++i) {
        if (x_a[i] == 0.0)
            throw ZeroBaseline("pair " + std::to_string(i) + " has a zero baseline");
        out.push_back((x_b[i] / x_a[i] - 1.0) * 100.0);
    }
    return out;
}

std::vector<double> relative_changes(const std::vector<PairedMeasurement>& pairs) {
    std::vector<double> a, b;
    a.reserve(pairs.size());
    b.reserve(pairs.size());
    for (const auto& p : pairs) {
        a.push_back(static_cast<double>(p.x_a_ns));
        b.push_back(static_cast<double>(p.x_b_ns));
    }
    return relative_changes(a, b);
}

double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty())
        throw InsufficientData("quantile of an empty sample");
    const double h = static_cast<double>(sorted.size() - 1) * std::clamp(p, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return quantile_sorted(values, 0.5);
}

namespace {

constexpr std::size_t kChunk = 256;

std::uint64_t chunk_seed(std::uint64_t seed, std::size_t chunk) {
    return splitmix64(seed ^ splitmix64(0x6475657462730000ULL + chunk));
}

void run_chunk(std::span<const double> sorted, std::uint64_t seed, std::size_t chunk, std::size_t count,
               std::vector<std::uint32_t>& counts, double* out) {
    const std::size_t n = sorted.size();
    const std::size_t k1 = (n - 1) / 2;
    const std::size_t k2 = n / 2;
    std::mt19937_64 engine(chunk_seed(seed, chunk));
    for (std::size_t r = 0; r < count; ++r) {
        std::fill(counts.begin(), counts.end(), 0u);
        for (std::size_t i = 0; i < n; ++i)
            ++counts[bounded_draw(engine, n)];
        std::size_t cum = 0;
        std::size_t i = 0;
        while (cum + counts[i] <= k1)
            cum += counts[i++];
        const double v1 = sorted[i];
        while (cum + counts[i] <= k2)
            cum += counts[i++];
        const double v2 = sorted[i];
        out[r] = 0.5 * (v1 + v2);
    }
}

} // namespace

std::vector<double> bootstrap_medians(std::span<const double> series, const BootstrapOptions& options) {
    if (series.size() < 2)
        throw InsufficientData("bootstrap needs at least 2 values, got " + std::to_string(series.size()));
    if (options.resamples < 100)
        throw InsufficientData("bootstrap needs at least 100 resamples");
    for (double v : series)
        if (!std::isfinite(v))
            throw InsufficientData("series contains a non-finite value");

    std::vector<double> sorted(series.begin(), series.end());
    std::sort(sorted.begin(), sorted.end());

    const std::size_t B = options.resamples;
    const std::size_t chunks = (B + kChunk - 1) / kChunk;
    std::vector<double> medians(B);
    const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, chunks);

    auto work = [&](std::size_t first_chunk, std::size_t step) {
        std::vector<std::uint32_t> counts(sorted.size());
        for (std::size_t c = first_chunk; c < chunks; c += step) {
            const std::size_t begin = c * kChunk;
            run_chunk(sorted, options.seed, c, std::min(kChunk, B - begin), counts, medians.data() + begin);
        }
    };
    if (threads == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(work, t, threads);
    }
    std::sort(medians.begin(), medians.end());
    return medians;
}

DetectionResult bootstrap_ci_median(std::span<const double> series, const BootstrapOptions& options) {
    if (!(options.level > 0.0 && options.level < 1.0))
        throw ConfigError("confidence level must lie in (0, 1)");
    const auto medians = bootstrap_medians(series, options);
    DetectionResult r;
    r.relative_median = median(std::vector<double>(series.begin(), series.end()));
    const double alpha = 1.0 - options.level;
    r.ci_lower = quantile_sorted(medians, alpha / 2.0);
    r.ci_upper = quantile_sorted(medians, 1.0 - alpha / 2.0);
    r.level = options.level;
    r.resamples = options.resamples;
    r.seed = options.seed;
    r.n = series.size();
    r.median_outside_ci = r.relative_median < r.ci_lower || r.relative_median > r.ci_upper;
    r.verdict = verdict(r);
    return r;
}

Verdict verdict(double ci_lower, double ci_upper) noexcept {
    if (ci_lower > 0.0)
        return Verdict::regression;
    if (ci_upper < 0.0)
        return Verdict::improvement;
    return Verdict::no_change;
}

Verdict verdict(const DetectionResult& result) noexcept { return verdict(result.ci_lower, result.ci_upper); }

Verdict aggregate_verdicts(std::span<const Verdict> verdicts) {
    bool improvement = false;
    for (auto v : verdicts) {
        if (v == Verdict::regression)
            return Verdict::regression;
        improvement |= v == Verdict::improvement;
    }
    return improvement ? Verdict::improvement : Verdict::no_change;
}

double hellinger(std::span<const double> a, std::span<const double> b, std::size_t bins) {
    if (a.empty() || b.empty())
        throw InsufficientData("hellinger needs two non-empty samples");
    bins = std::max<std::size_t>(1, bins);
    const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
    const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
    const double lo = std::min(*amin, *bmin);
    const double hi = std::max(*amax, *bmax);
    const double width = hi - lo;
    auto histogram = [&](std::span<const double> xs) {
        std::vector<double> h(bins, 0.0);
        for (double x : xs) {
            std::size_t idx = 0;
            if (width > 0.0)
                idx = std::min(bins - 1, static_cast<std::size_t>((x - lo) / width * static_cast<double>(bins)));
            h[idx] += 1.0;
        }
        for (auto& v : h)
            v /= static_cast<double>(xs.size());
        return h;
    };
    const auto p = histogram(a);
    const auto q = histogram(b);
    // 0.5 * sum (sqrt p - sqrt q)^2 equals 1 - BC but stays exactly 0 for equal histograms.
    double sq = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
        const double d = std::sqrt(p[i]) - std::sqrt(q[i]);
        sq += d * d;
    }
    return std::sqrt(std::clamp(0.5 * sq, 0.0, 1.0));
}

std::vector<QQPoint> qq_points(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty())
        throw InsufficientData("Q-Q needs two non-empty samples");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    std::vector<QQPoint> out;
    out.reserve(99);
    for (int p = 1; p <= 99; ++p)
        out.push_back({p, quantile_sorted(sa, p / 100.0), quantile_sorted(sb, p / 100.0)});
    return out;
}

json to_json(const DetectionResult& r) {
    return {{"median_pct", r.relative_median},
            {"ci", {r.ci_lower, r.ci_upper}},
            {"level", r.level},
            {"resamples", r.resamples},
            {"verdict", to_string(r.verdict)},
            {"n_pairs", r.n}};
}

namespace {

json source_json(const SourceAnalysis& s) {
    auto j = to_json(s.result);
    if (s.hellinger) {
        j["hellinger"] = *s.hellinger;
        json qq = json::array();
        for (const auto& p : s.qq)
            qq.push_back({p.percentile, p.q_a, p.q_b});
        j["qq"] = qq;
    }
    return j;
}

std::optional<SourceAnalysis> analyze_series(const std::string& source, std::vector<double> x_a,
                                             std::vector<double> x_b, const AnalyzeOptions& options,
                                             std::vector<std::string>& warnings, bool with_distribution) {
    std::vector<double> a, b;
    std::size_t zero = 0;
    for (std::size_t i = 0; i < x_a.size(); ++i) {
        if (x_a[i] <= 0.0) {
            ++zero;
            continue;
        }
        a.push_back(x_a[i]);
        b.push_back(x_b[i]);
    }
    if (zero > 0)
        warnings.push_back(source + ": dropped " + std::to_string(zero) + " pairs with a zero baseline");
    if (a.size() < 2) {
        warnings.push_back(source + ": only " + std::to_string(a.size()) + " usable pairs, not analyzed");
        return std::nullopt;
    }
    SourceAnalysis s;
    s.source = source;
    s.result = bootstrap_ci_median(relative_changes(a, b), options.bootstrap);
    if (s.result.median_outside_ci)
        warnings.push_back(source + ": sample median lies outside the percentile interval");
    if (with_distribution) {
        s.hellinger = hellinger(a, b, options.hellinger_bins);
        s.qq = qq_points(a, b);
    }
    return s;
}

} // namespace

json AnalysisReport::to_json(const AnalyzeOptions& options) const {
    json eps = json::object();
    for (const auto& [id, ep] : endpoints) {
        auto j = source_json(ep.client);
        json spans_j = json::object();
        for (const auto& [name, s] : ep.spans)
            spans_j[name] = source_json(s);
        j["spans"] = spans_j;
        j["span_verdict"] = duet::to_string(ep.span_verdict);
        eps[id] = j;
    }
    json spans_j = json::object();
    for (const auto& [name, s] : spans)
        spans_j[name] = source_json(s);
    return {{"level", options.bootstrap.level},
            {"resamples", options.bootstrap.resamples},
            {"seed", options.bootstrap.seed},
            {"aa_mode", options.aa_mode},
            {"endpoints", eps},
            {"spans", spans_j},
            {"warnings", warnings}};
}

AnalysisReport analyze_artifact(const fs::path& artifact_dir, const AnalyzeOptions& options, const fs::path& out_dir) {
    AnalysisReport report;
    const auto pairs = read_client_pairs(artifact_dir / kClientPairsFile);

    std::map<std::string, std::vector<const PairedMeasurement*>> by_endpoint;
    std::map<std::int64_t, std::string> endpoint_of;
    for (const auto& p : pairs) {
        by_endpoint[p.endpoint].push_back(&p);
        endpoint_of[p.request_seq] = p.endpoint;
    }

    for (const auto& [id, ps] : by_endpoint) {
        std::vector<double> a, b;
        for (const auto* p : ps) {
            a.push_back(static_cast<double>(p->x_a_ns));
            b.push_back(static_cast<double>(p->x_b_ns));
        }
        if (auto s = analyze_series(id, a, b, options, report.warnings, options.aa_mode))
            report.endpoints[id].client = std::move(*s);
    }

    const auto read_a = read_spans(artifact_dir / span_file_name('A'));
    const auto read_b = read_spans(artifact_dir / span_file_name('B'));
    for (const auto* r : {&read_a, &read_b})
        for (const auto& problem : r->problems)
            report.warnings.push_back("corrupted span record " + problem);
    for (auto& w : nesting_warnings(read_a.spans))
        report.warnings.push_back("A: " + w);
    for (auto& w : nesting_warnings(read_b.spans))
        report.warnings.push_back("B: " + w);

    std::set<std::string> names;
    for (const auto& s : read_a.spans)
        names.insert(s.name);
    for (const auto& s : read_b.spans)
        names.insert(s.name);

    for (const auto& name : names) {
        const auto series = pair_spans(read_a.spans, read_b.spans, name);
        if (series.dropped_a + series.dropped_b > 0)
            report.warnings.push_back("span " + name + ": dropped " + std::to_string(series.dropped_a) + " A and " +
                                      std::to_string(series.dropped_b) + " B records without a unique partner");
        std::vector<double> all_a, all_b;
        std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_endpoint;
        for (std::size_t i = 0; i < series.seqs.size(); ++i) {
            auto it = endpoint_of.find(series.seqs[i]);
            if (it == endpoint_of.end())
                continue; // warmup or a dropped client pair
            all_a.push_back(series.x_a[i]);
            all_b.push_back(series.x_b[i]);
            per_endpoint[it->second].first.push_back(series.x_a[i]);
            per_endpoint[it->second].second.push_back(series.x_b[i]);
        }
        if (auto s = analyze_series("span " + name, all_a, all_b, options, report.warnings, false)) {
            s->source = name;
            report.spans[name] = std::move(*s);
        }
        for (auto& [ep, ab] : per_endpoint) {
            if (auto s = analyze_series("span " + name + " on " + ep, ab.first, ab.second, options, report.warnings,
                                        false)) {
                s->source = name;
                report.endpoints[ep].spans[name] = std::move(*s);
            }
        }
    }

    for (auto& [id, ep] : report.endpoints) {
        if (ep.client.source.empty())
            ep.client.source = id;
        std::vector<Verdict> vs;
        for (const auto& [_, s] : ep.spans)
            vs.push_back(s.result.verdict);
        ep.span_verdict = aggregate_verdicts(vs);
    }

    const fs::path target = out_dir.empty() ? artifact_dir : out_dir;
    fs::create_directories(target);
    write_file_atomic(target / "analysis.json", report.to_json(options).dump(2) + "\n");
    return report;
}

} // namespace duet
