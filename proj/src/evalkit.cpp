#include "duet/evalkit.hpp"

#include "duet/duetrunner.hpp"
#include "duet/error.hpp"
#include "duet/process.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

using nlohmann::json;
namespace fs = std::filesystem;

namespace duet {

int span_distance(const std::string& gen_path, LineRange gen, const std::string& ideal_path, LineRange ideal) noexcept {
    if (gen_path != ideal_path)
        return kInfiniteDistance;
    return std::max(std::abs(gen.start - ideal.start), std::abs(gen.end - ideal.end));
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0)
        return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

void finish(LocalizationReport& r) {
    r.precision = ratio(r.hits, r.generated);
    r.recall = ratio(r.relevant_found, r.relevant);
    r.specificity = ratio(r.neutral_clean, r.neutral);
}

} // namespace

LocalizationReport compute_metrics(const std::vector<GeneratedSpan>& generated,
                                   const std::vector<GroundTruthChange>& truth, int k) {
    LocalizationReport r;
    r.k = k;
    r.generated = generated.size();

    std::map<std::string, std::vector<const GroundTruthChange*>> relevant_by_path;
    std::map<std::string, std::vector<const GeneratedSpan*>> spans_by_path;
    for (const auto& g : truth)
        if (g.relevant && g.ideal_span)
            relevant_by_path[g.path].push_back(&g);
    for (const auto& s : generated)
        spans_by_path[s.path].push_back(&s);

    for (const auto& s : generated) {
        HitEntry e{s.name, std::nullopt, std::nullopt};
        auto it = relevant_by_path.find(s.path);
        if (it != relevant_by_path.end()) {
            const GroundTruthChange* best = nullptr;
            int best_d = kInfiniteDistance;
            for (const auto* g : it->second) {
                const int d = span_distance(s.path, s.range, g->path, *g->ideal_span);
                if (d < best_d || (d == best_d && best && g->change_id < best->change_id)) {
                    best = g;
                    best_d = d;
                }
            }
            if (best) {
                e.distance = best_d;
                r.localization_errors.push_back(best_d);
                if (best_d <= k) {
                    e.change_id = best->change_id;
                    ++r.hits;
                }
            }
        }
        r.matrix.push_back(std::move(e));
    }

    for (const auto& g : truth) {
        auto it = spans_by_path.find(g.path);
        const std::vector<const GeneratedSpan*> none;
        const auto& spans = it == spans_by_path.end() ? none : it->second;
        if (g.relevant) {
            ++r.relevant;
            if (g.ideal_span && std::any_of(spans.begin(), spans.end(), [&](const GeneratedSpan* s) {
                    return span_distance(s->path, s->range, g.path, *g.ideal_span) <= k;
                }))
                ++r.relevant_found;
        } else {
            ++r.neutral;
            const bool touched = std::any_of(spans.begin(), spans.end(), [&](const GeneratedSpan* s) {
                return std::any_of(g.regions.begin(), g.regions.end(), [&](const LineRange& region) {
                    return span_distance(s->path, s->range, g.path, region) <= k;
                });
            });
            if (!touched)
                ++r.neutral_clean;
        }
    }
    finish(r);
    return r;
}

LocalizationReport brute_force_metrics(const std::vector<GeneratedSpan>& generated,
                                       const std::vector<GroundTruthChange>& truth, int k) {
    // Full table: dist[i][j] between span i and ground-truth entry j (ideal span, or
    // the closest region for neutral entries). Nothing is indexed or pruned.
    const std::size_t n = generated.size();
    const std::size_t m = truth.size();
    constexpr long long inf = static_cast<long long>(kInfiniteDistance);
    std::vector<std::vector<long long>> dist(n, std::vector<long long>(m, inf));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const auto& s = generated[i];
            const auto& g = truth[j];
            if (s.path.compare(g.path) != 0)
                continue;
            std::vector<LineRange> targets;
            if (g.relevant) {
                if (g.ideal_span)
                    targets.push_back(*g.ideal_span);
            } else {
                targets = g.regions;
            }
            for (const auto& t : targets) {
                long long ds = s.range.start - t.start;
                long long de = s.range.end - t.end;
                if (ds < 0)
                    ds = -ds;
                if (de < 0)
                    de = -de;
                dist[i][j] = std::min(dist[i][j], ds > de ? ds : de);
            }
        }
    }

    LocalizationReport r;
    r.k = k;
    r.generated = n;
    for (std::size_t i = 0; i < n; ++i) {
        long long best = inf;
        std::optional<std::string> best_id;
        for (std::size_t j = 0; j < m; ++j) {
            if (!truth[j].relevant || dist[i][j] == inf)
                continue;
            if (dist[i][j] < best || (dist[i][j] == best && best_id && truth[j].change_id < *best_id)) {
                best = dist[i][j];
                best_id = truth[j].change_id;
            }
        }
        HitEntry e{generated[i].name, std::nullopt, std::nullopt};
        if (best_id) {
            e.distance = static_cast<int>(best);
            r.localization_errors.push_back(static_cast<int>(best));
            if (best <= k) {
                e.change_id = best_id;
                ++r.hits;
            }
        }
        r.matrix.push_back(e);
    }
    for (std::size_t j = 0; j < m; ++j) {
        bool near = false;
        for (std::size_t i = 0; i < n; ++i)
            if (dist[i][j] <= k)
                near = true;
        if (truth[j].relevant) {
            ++r.relevant;
            if (near)
                ++r.relevant_found;
        } else {
            ++r.neutral;
            if (!near)
                ++r.neutral_clean;
        }
    }
    r.precision = r.generated ? std::optional<double>(static_cast<double>(r.hits) / static_cast<double>(r.generated))
                              : std::nullopt;
    r.recall = r.relevant ? std::optional<double>(static_cast<double>(r.relevant_found) / static_cast<double>(r.relevant))
                          : std::nullopt;
    r.specificity = r.neutral
                        ? std::optional<double>(static_cast<double>(r.neutral_clean) / static_cast<double>(r.neutral))
                        : std::nullopt;
    return r;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

} // namespace

json to_json(const LocalizationReport& r) {
    json matrix = json::array();
    for (const auto& e : r.matrix)
        matrix.push_back({{"span", e.span_name},
                          {"change_id", e.change_id ? json(*e.change_id) : json(nullptr)},
                          {"distance", e.distance ? json(*e.distance) : json(nullptr)}});
    return {{"k", r.k},
            {"precision_at_k", opt(r.precision)},
            {"recall_at_k", opt(r.recall)},
            {"specificity_at_k", opt(r.specificity)},
            {"counts",
             {{"generated", r.generated},
              {"hits", r.hits},
              {"relevant", r.relevant},
              {"relevant_found", r.relevant_found},
              {"neutral", r.neutral},
              {"neutral_clean", r.neutral_clean}}},
            {"localization_errors", r.localization_errors},
            {"hit_matrix", matrix}};
}

AveragedMetrics macro_average(const std::vector<TaskReport>& tasks) {
    auto mean = [&](auto field) -> std::optional<double> {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& t : tasks)
            if (auto v = field(t.report)) {
                sum += *v;
                ++n;
            }
        if (n == 0)
            return std::nullopt;
        return sum / static_cast<double>(n);
    };
    return {mean([](const LocalizationReport& r) { return r.precision; }),
            mean([](const LocalizationReport& r) { return r.recall; }),
            mean([](const LocalizationReport& r) { return r.specificity; })};
}

AveragedMetrics micro_average(const std::vector<TaskReport>& tasks) {
    std::size_t hits = 0, gen = 0, found = 0, rel = 0, clean = 0, neutral = 0;
    for (const auto& t : tasks) {
        hits += t.report.hits;
        gen += t.report.generated;
        found += t.report.relevant_found;
        rel += t.report.relevant;
        clean += t.report.neutral_clean;
        neutral += t.report.neutral;
    }
    return {ratio(hits, gen), ratio(found, rel), ratio(clean, neutral)};
}

json localization_report_json(const std::vector<TaskReport>& tasks) {
    json per_task = json::object();
    for (const auto& t : tasks)
        per_task[t.task] = to_json(t.report);
    auto avg = [](const AveragedMetrics& a) {
        return json{{"precision_at_k", opt(a.precision)},
                    {"recall_at_k", opt(a.recall)},
                    {"specificity_at_k", opt(a.specificity)}};
    };
    return {{"k", tasks.empty() ? 5 : tasks.front().report.k},
            {"tasks", per_task},
            {"macro_average", avg(macro_average(tasks))},
            {"micro_average", avg(micro_average(tasks))}};
}

std::vector<GeneratedSpan> spans_of(const std::vector<MarkerPlan>& plans) {
    std::vector<GeneratedSpan> out;
    for (const auto& p : plans)
        for (const auto& s : p.spans)
            out.push_back({s.name, s.path.empty() ? p.path : s.path, s.new_range});
    return out;
}

// ---------------------------------------------------------------------------
// Severity sweep

namespace {

std::string severity_key(double s) {
    std::ostringstream os;
    os << s;
    return os.str();
}

} // namespace

const std::vector<double>& default_severities() {
    static const std::vector<double> ladder{0, 1, 2, 3, 5, 10, 20, 50, 100};
    return ladder;
}

SeverityGrid severity_sweep(const std::vector<double>& severities, const CellRunner& runner) {
    SeverityGrid grid;
    grid.severities = severities;
    std::sort(grid.severities.begin(), grid.severities.end());
    for (double s : grid.severities) {
        try {
            grid.cells[s] = runner(s);
        } catch (const std::exception& e) {
            grid.cells[s] = CellResult{{}, e.what()};
        }
    }
    return grid;
}

std::vector<std::string> SeverityGrid::endpoint_ids() const {
    std::set<std::string> ids;
    for (const auto& [_, cell] : cells)
        for (const auto& [id, __] : cell.endpoints)
            ids.insert(id);
    return {ids.begin(), ids.end()};
}

std::optional<double> SeverityGrid::minimal_detected(const std::string& endpoint, bool span_level) const {
    for (double s : severities) {
        if (s <= 0.0)
            continue;
        auto cell = cells.find(s);
        if (cell == cells.end())
            continue;
        auto it = cell->second.endpoints.find(endpoint);
        if (it == cell->second.endpoints.end())
            continue;
        if ((span_level ? it->second.span : it->second.endpoint) == Verdict::regression)
            return s;
    }
    return std::nullopt;
}

json SeverityGrid::to_json() const {
    json rows = json::array();
    for (const auto& id : endpoint_ids()) {
        for (bool span_level : {true, false}) {
            json cells_j = json::object();
            for (double s : severities) {
                auto cell = cells.find(s);
                json v = nullptr;
                if (cell != cells.end()) {
                    auto it = cell->second.endpoints.find(id);
                    if (it != cell->second.endpoints.end())
                        v = duet::to_string(span_level ? it->second.span : it->second.endpoint);
                }
                cells_j[severity_key(s)] = v;
            }
            auto min = minimal_detected(id, span_level);
            rows.push_back({{"endpoint", id},
                            {"source", span_level ? "span" : "endpoint"},
                            {"cells", cells_j},
                            {"minimal_detected_severity", min ? json(*min) : json(nullptr)}});
        }
    }
    json errors = json::object();
    for (const auto& [s, cell] : cells)
        if (!cell.error.empty())
            errors[severity_key(s)] = cell.error;
    return {{"legend", {"no_change", "regression", "improvement"}},
            {"severities", severities},
            {"rows", rows},
            {"errors", errors}};
}

CellRunner artifact_cell_runner(std::map<double, fs::path> artifact_dirs, AnalyzeOptions options) {
    return [dirs = std::move(artifact_dirs), options](double severity) {
        auto it = dirs.find(severity);
        if (it == dirs.end())
            throw IoError("no artifact for severity " + severity_key(severity));
        const auto report = analyze_artifact(it->second, options, it->second);
        CellResult cell;
        for (const auto& [id, ep] : report.endpoints)
            cell.endpoints[id] = {ep.span_verdict, ep.client.result.verdict};
        return cell;
    };
}

namespace {

json replace_tree(json j, const std::string& tree) {
    if (j.is_string()) {
        auto s = j.get<std::string>();
        for (auto pos = s.find("{tree}"); pos != std::string::npos; pos = s.find("{tree}", pos + tree.size()))
            s.replace(pos, 6, tree);
        return s;
    }
    if (j.is_array() || j.is_object())
        for (auto& v : j)
            v = replace_tree(v, tree);
    return j;
}

} // namespace

CellRunner pipeline_cell_runner(PipelineSpec spec) {
    return [spec = std::move(spec)](double severity) {
        const fs::path cell_dir = spec.work_dir / ("severity-" + severity_key(severity));
        fs::remove_all(cell_dir);
        fs::create_directories(cell_dir);
        const fs::path gen_dir = cell_dir / "generated";

        std::vector<std::string> argv;
        for (auto part : spec.generator) {
            for (auto [key, value] : {std::pair<std::string, std::string>{"{severity}", severity_key(severity)},
                                      std::pair<std::string, std::string>{"{out}", gen_dir.string()}})
                for (auto pos = part.find(key); pos != std::string::npos; pos = part.find(key, pos + value.size()))
                    part.replace(pos, key.size(), value);
            argv.push_back(part);
        }
        const auto gen = run_command(argv, std::chrono::minutes(10));
        if (gen.exit_code != 0)
            throw Error("generator failed: " + gen.output);

        auto changes_doc = nlohmann::json::parse(read_file(gen_dir / "changes.json"));
        const auto labeled = parse_json_changes(changes_doc);
        HeuristicBackend backend;
        PlanCache cache(cell_dir / "plans");
        const auto outcomes =
            plan_changes(labeled.changes, spec.sensitivity, backend, &cache, directory_source(gen_dir / "B"));
        SymmetricRun run;
        run.tree_a = gen_dir / "A";
        run.tree_b = gen_dir / "B";
        run.changes = &labeled.changes;
        for (const auto& o : outcomes)
            if (!o.skip_reason)
                run.plans.push_back(o.plan);
        run.adapter = spec.adapter;
        run.out_root = cell_dir;
        run.run_id = "instrumented";
        const auto instrumented = apply_plan_symmetric(run);

        json a_cfg = replace_tree(spec.run_config, instrumented.a.root_dir.string());
        json b_cfg = replace_tree(spec.run_config, instrumented.b.root_dir.string());
        a_cfg["cmd_b"] = b_cfg["cmd_b"];
        const auto cfg = RunConfig::from_json(a_cfg, spec.run_config_dir);
        const fs::path artifact = cell_dir / "bench";
        const auto outcome = run_duet(cfg, artifact);
        if (!outcome.completed)
            throw Error("benchmark aborted: " + outcome.abort_reason);
        const auto report = analyze_artifact(artifact, spec.analyze, artifact);
        CellResult cell;
        for (const auto& [id, ep] : report.endpoints)
            cell.endpoints[id] = {ep.span_verdict, ep.client.result.verdict};
        return cell;
    };
}

} // namespace duet
