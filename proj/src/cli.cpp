#include "duet/cli.hpp"

#include "duet/analyzer.hpp"
#include "duet/changeset.hpp"
#include "duet/duetrunner.hpp"
#include "duet/error.hpp"
#include "duet/evalkit.hpp"
#include "duet/instrumenter.hpp"
#include "duet/planner.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

using nlohmann::json;
namespace fs = std::filesystem;

namespace duet {

namespace {

/// Usage problems found after parsing (missing inputs and the like).
struct UsageError : Error {
    using Error::Error;
};

json read_json(const fs::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw IoError(e.what());
    }
    auto doc = json::parse(text, nullptr, false);
    if (doc.is_discarded())
        throw ConfigError(path.string() + " is not valid JSON");
    return doc;
}

void write_json(const fs::path& path, const json& doc) {
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    write_file_atomic(path, doc.dump(2) + "\n");
}

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    json tool; // parsed --config

    fs::path out_dir() const {
        if (!out.empty())
            return out;
        if (tool.contains("out"))
            return tool["out"].get<std::string>();
        return "duet-out";
    }
    std::uint64_t seed_or(std::uint64_t fallback) const {
        if (seed)
            return *seed;
        if (tool.contains("seed"))
            return tool["seed"].get<std::uint64_t>();
        return fallback;
    }
    std::string setting(const std::string& cli_value, const char* key, const std::string& fallback) const {
        if (!cli_value.empty())
            return cli_value;
        if (tool.contains(key) && tool[key].is_string())
            return tool[key].get<std::string>();
        return fallback;
    }
};

LanguageAdapter resolve_adapter(const std::string& spec) {
    if (spec.empty() || spec == "python")
        return LanguageAdapter::python();
    return LanguageAdapter::load(spec);
}

fs::path plan_file_name(const MarkerPlan& plan) { return plan.change_fingerprint + ".json"; }

/// Plans in `dir` that belong to `changes`, matched by fingerprint.
std::vector<MarkerPlan> load_plans(const fs::path& dir, const ChangeSet& changes) {
    std::vector<MarkerPlan> plans;
    if (!fs::is_directory(dir))
        throw IoError("plan directory " + dir.string() + " does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".json")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        auto doc = read_json(f);
        if (!doc.is_object() || !doc.contains("fingerprint"))
            continue;
        const auto fp = doc["fingerprint"].get<std::string>();
        const FileChange* fc = nullptr;
        for (const auto& c : changes.file_changes)
            if (c.fingerprint == fp)
                fc = &c;
        if (!fc)
            continue;
        plans.push_back(load_plan_document(doc, *fc));
    }
    return plans;
}

// ---------------------------------------------------------------------------

int cmd_extract(const Globals& g, const std::string& diff, const std::string& json_in, const std::string& base,
                const std::string& target, std::ostream& out) {
    if (diff.empty() == json_in.empty())
        throw UsageError("extract needs exactly one of --diff or --json");
    const fs::path dir = g.out_dir();
    if (!diff.empty()) {
        const auto changes = parse_unified_diff(read_file(diff), base, target);
        write_json(dir / "changeset.json", changeset_to_json(changes));
        out << "extracted " << changes.file_changes.size() << " file changes to " << (dir / "changeset.json").string()
            << "\n";
    } else {
        const auto labeled = parse_json_changes(read_json(json_in));
        write_json(dir / "changeset.json", changeset_to_json(labeled.changes));
        write_json(dir / "ground_truth.json", ground_truth_to_json(labeled.ground_truth));
        out << "extracted " << labeled.changes.file_changes.size() << " file changes and "
            << labeled.ground_truth.size() << " ground-truth entries to " << dir.string() << "\n";
    }
    return 0;
}

struct PlanArgs {
    std::string changes;
    std::string source;
    std::string backend;
    std::string sensitivity;
    std::string cache;
    std::size_t workers{4};
    int round_trips{1};
};

int cmd_plan(const Globals& g, const PlanArgs& a, std::ostream& out) {
    const fs::path dir = g.out_dir();
    const fs::path changes_path = a.changes.empty() ? dir / "changeset.json" : fs::path(a.changes);
    if (!fs::exists(changes_path))
        throw UsageError("changeset file " + changes_path.string() + " not found (run extract or pass --changes)");
    if (a.source.empty())
        throw UsageError("plan needs --source (target version tree)");
    const auto changes = changeset_from_json(read_json(changes_path));
    const auto level = parse_sensitivity(g.setting(a.sensitivity, "sensitivity", "medium"));
    const auto backend_name = g.setting(a.backend, "backend", "heuristic");

    std::unique_ptr<PlannerBackend> backend;
    if (backend_name == "heuristic") {
        backend = std::make_unique<HeuristicBackend>();
    } else if (backend_name == "inference") {
        auto cfg = InferenceConfig::from_env();
        cfg.max_round_trips = a.round_trips;
        backend = std::make_unique<InferenceBackend>(cfg);
    } else {
        throw UsageError("unknown backend " + backend_name);
    }

    PlanCache cache(a.cache.empty() ? dir / "plan-cache" : fs::path(a.cache));
    const auto outcomes = plan_changes(changes, level, *backend, &cache, directory_source(a.source), a.workers);

    const fs::path plan_dir = dir / "plans";
    fs::create_directories(plan_dir);
    json report = json::array();
    std::size_t planned = 0, skipped = 0, spans = 0;
    for (const auto& o : outcomes) {
        json entry = {{"path", o.plan.path}, {"fingerprint", o.plan.change_fingerprint}, {"from_cache", o.from_cache}};
        if (o.skip_reason) {
            ++skipped;
            entry["skipped"] = *o.skip_reason;
            entry["detail"] = o.detail;
        } else {
            ++planned;
            spans += o.plan.spans.size();
            write_file_atomic(plan_dir / plan_file_name(o.plan), serialize_plan(o.plan));
            entry["plan_file"] = plan_file_name(o.plan).string();
            entry["spans"] = o.plan.spans.size();
        }
        report.push_back(entry);
    }
    write_json(dir / "plan_report.json", report);
    out << "planned " << planned << " changes (" << spans << " spans), skipped " << skipped << "\n";
    return 0;
}

struct InstrumentArgs {
    std::string changes;
    std::string plans;
    std::string tree_a;
    std::string tree_b;
    std::string adapter;
    std::string run_id;
    std::size_t workers{4};
    std::string strip;
    std::string strip_out;
};

int cmd_instrument(const Globals& g, const InstrumentArgs& a, std::ostream& out) {
    const auto adapter = resolve_adapter(g.setting(a.adapter, "adapter", "python"));
    if (!a.strip.empty()) {
        std::optional<fs::path> target;
        if (!a.strip_out.empty())
            target = a.strip_out;
        const auto root = strip_instrumentation(a.strip, adapter, target);
        out << "stripped " << root.string() << "\n";
        return 0;
    }
    const fs::path dir = g.out_dir();
    if (a.tree_a.empty() || a.tree_b.empty())
        throw UsageError("instrument needs --tree-a and --tree-b (or --strip)");
    const fs::path changes_path = a.changes.empty() ? dir / "changeset.json" : fs::path(a.changes);
    if (!fs::exists(changes_path))
        throw UsageError("changeset file " + changes_path.string() + " not found");
    const auto changes = changeset_from_json(read_json(changes_path));
    const fs::path plan_dir = a.plans.empty() ? dir / "plans" : fs::path(a.plans);

    SymmetricRun run;
    run.tree_a = a.tree_a;
    run.tree_b = a.tree_b;
    run.changes = &changes;
    run.plans = load_plans(plan_dir, changes);
    run.adapter = adapter;
    run.out_root = dir;
    run.run_id = a.run_id.empty() ? "run-" + std::to_string(g.seed_or(0)) : a.run_id;
    run.workers = a.workers;
    const auto result = apply_plan_symmetric(run);
    const auto& r = result.report;
    out << "applied " << r.count(SpanStatus::applied) << " spans; skipped " << r.count(SpanStatus::skipped_asymmetric)
        << " asymmetric, " << r.count(SpanStatus::skipped_syntax) << " syntax, "
        << r.count(SpanStatus::skipped_unmappable) << " unmappable -> " << result.run_dir.string() << "\n";
    return 0;
}

int cmd_bench(const Globals& g, const std::string& run_config, bool aa, const std::string& artifact,
              std::ostream& out, std::ostream& err) {
    const std::string cfg_path = g.setting(run_config, "run_config", "");
    if (cfg_path.empty())
        throw UsageError("bench needs --run-config");
    auto cfg = RunConfig::load(cfg_path);
    if (g.seed)
        cfg.seed = *g.seed;
    const fs::path dir = artifact.empty() ? g.out_dir() / "bench" : fs::path(artifact);
    LaunchOptions options;
    options.aa_mode = aa;
    const auto outcome = run_duet(cfg, dir, options);
    out << "measured " << outcome.pairs.size() << " pairs, dropped " << outcome.dropped << " -> " << dir.string()
        << "\n";
    if (!outcome.completed) {
        err << "benchmark aborted: " << outcome.abort_reason << "\n";
        return 1;
    }
    return 0;
}

struct AnalyzeArgs {
    std::string artifact;
    std::size_t resamples{10000};
    double level{0.95};
    bool aa{false};
    std::size_t threads{1};
    std::size_t bins{50};
};

int cmd_analyze(const Globals& g, const AnalyzeArgs& a, std::ostream& out) {
    if (a.artifact.empty())
        throw UsageError("analyze needs --artifact");
    AnalyzeOptions options;
    options.bootstrap.resamples = a.resamples;
    options.bootstrap.level = a.level;
    options.bootstrap.seed = g.seed_or(0);
    options.bootstrap.threads = a.threads;
    options.aa_mode = a.aa;
    options.hellinger_bins = a.bins;
    const fs::path target = g.out.empty() ? fs::path(a.artifact) : fs::path(g.out);
    const auto report = analyze_artifact(a.artifact, options, target);
    for (const auto& [id, ep] : report.endpoints) {
        out << id << ": endpoint " << to_string(ep.client.result.verdict) << " (median "
            << ep.client.result.relative_median << "%), spans " << to_string(ep.span_verdict);
        if (ep.client.hellinger)
            out << ", hellinger " << *ep.client.hellinger;
        out << "\n";
    }
    out << "wrote " << (target / "analysis.json").string() << "\n";
    return 0;
}

struct EvaluateArgs {
    std::vector<std::string> tasks;
    int k{5};
    bool sweep{false};
    std::vector<std::string> artifacts;
    std::string pipeline;
    std::vector<double> severities;
    std::size_t resamples{10000};
    double level{0.95};
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a, std::ostream& out) {
    const fs::path dir = g.out_dir();
    if (a.sweep) {
        CellRunner runner;
        AnalyzeOptions options;
        options.bootstrap.resamples = a.resamples;
        options.bootstrap.level = a.level;
        options.bootstrap.seed = g.seed_or(0);
        std::vector<double> severities = a.severities;
        if (!a.artifacts.empty()) {
            std::map<double, fs::path> dirs;
            for (const auto& spec : a.artifacts) {
                auto eq = spec.find('=');
                if (eq == std::string::npos)
                    throw UsageError("--artifacts expects severity=dir, got " + spec);
                dirs[std::stod(spec.substr(0, eq))] = spec.substr(eq + 1);
            }
            if (severities.empty())
                for (const auto& [s, _] : dirs)
                    severities.push_back(s);
            runner = artifact_cell_runner(dirs, options);
        } else if (!a.pipeline.empty()) {
            const auto doc = read_json(a.pipeline);
            PipelineSpec spec;
            spec.generator = doc.at("generator").get<std::vector<std::string>>();
            const fs::path base = fs::path(a.pipeline).parent_path();
            const fs::path run_cfg = base / doc.at("run_config").get<std::string>();
            spec.run_config = read_json(run_cfg);
            spec.run_config_dir = run_cfg.parent_path();
            spec.adapter = resolve_adapter(doc.value("adapter", std::string("python")));
            spec.sensitivity = parse_sensitivity(doc.value("sensitivity", std::string("medium")));
            spec.analyze = options;
            spec.work_dir = dir / "sweep";
            runner = pipeline_cell_runner(spec);
        } else {
            throw UsageError("--sweep needs --artifacts or --pipeline");
        }
        if (severities.empty())
            severities = default_severities();
        const auto grid = severity_sweep(severities, runner);
        write_json(dir / "severity_grid.json", grid.to_json());
        out << "wrote " << (dir / "severity_grid.json").string() << "\n";
        return 0;
    }

    if (a.tasks.empty())
        throw UsageError("evaluate needs --task name,changes.json,plans_dir (repeatable) or --sweep");
    std::vector<TaskReport> reports;
    for (const auto& t : a.tasks) {
        std::vector<std::string> parts;
        std::stringstream ss(t);
        for (std::string p; std::getline(ss, p, ',');)
            parts.push_back(p);
        if (parts.size() != 3)
            throw UsageError("--task expects name,changes.json,plans_dir, got " + t);
        const auto labeled = parse_json_changes(read_json(parts[1]));
        const auto plans = load_plans(parts[2], labeled.changes);
        reports.push_back({parts[0], compute_metrics(spans_of(plans), labeled.ground_truth, a.k)});
    }
    const auto doc = localization_report_json(reports);
    write_json(dir / "localization_report.json", doc);
    const auto macro = macro_average(reports);
    auto show = [](const std::optional<double>& v) {
        std::ostringstream os;
        if (v)
            os << *v;
        else
            os << "null";
        return os.str();
    };
    out << "macro precision@" << a.k << " " << show(macro.precision) << ", recall@" << a.k << " "
        << show(macro.recall) << ", specificity@" << a.k << " " << show(macro.specificity) << "\n";
    return 0;
}

int cmd_report(const Globals& g, const std::string& analysis, std::ostream& out) {
    if (analysis.empty())
        throw UsageError("report needs --analysis");
    const auto doc = read_json(analysis);
    const fs::path dir = g.out_dir();
    fs::create_directories(dir);

    std::string ci = "source,kind,median_pct,ci_lower,ci_upper,level,verdict,n_pairs\n";
    auto ci_row = [&](const std::string& source, const std::string& kind, const json& s) {
        std::ostringstream os;
        os.precision(10);
        os << source << ',' << kind << ',' << s.at("median_pct").get<double>() << ','
           << s.at("ci")[0].get<double>() << ',' << s.at("ci")[1].get<double>() << ',' << s.at("level").get<double>()
           << ',' << s.at("verdict").get<std::string>() << ',' << s.at("n_pairs").get<std::size_t>() << '\n';
        ci += os.str();
    };
    std::string qq = "source,percentile,q_a_ns,q_b_ns\n";
    for (const auto& [id, ep] : doc.at("endpoints").items()) {
        ci_row(id, "endpoint", ep);
        if (ep.contains("spans"))
            for (const auto& [name, s] : ep["spans"].items())
                ci_row(id + "/" + name, "span", s);
        if (ep.contains("qq"))
            for (const auto& p : ep["qq"]) {
                std::ostringstream os;
                os.precision(12);
                os << id << ',' << p[0].get<int>() << ',' << p[1].get<double>() << ',' << p[2].get<double>() << '\n';
                qq += os.str();
            }
    }
    write_file_atomic(dir / "ci.csv", ci);
    write_file_atomic(dir / "qq.csv", qq);
    out << "wrote " << (dir / "ci.csv").string() << " and " << (dir / "qq.csv").string() << "\n";
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Duet benchmarking with change-targeted instrumentation", "duet"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "Tool config JSON (sensitivity, backend, adapter, run_config, seed, out)");
    app.add_option("--seed", g.seed, "Seed for every stochastic step");
    app.add_option("--out", g.out, "Output directory");

    std::string diff, json_in, base, target;
    auto* extract = app.add_subcommand("extract", "Parse a diff or annotated JSON change set");
    extract->add_option("--diff", diff, "Unified diff file");
    extract->add_option("--json", json_in, "Annotated JSON change set");
    extract->add_option("--base", base, "Base version id (diff input)");
    extract->add_option("--target", target, "Target version id (diff input)");

    PlanArgs pa;
    auto* plan = app.add_subcommand("plan", "Plan measurement spans for each change");
    plan->add_option("--changes", pa.changes, "changeset.json from extract");
    plan->add_option("--source", pa.source, "Target version source tree");
    plan->add_option("--backend", pa.backend, "heuristic | inference");
    plan->add_option("--sensitivity", pa.sensitivity, "low | medium | high");
    plan->add_option("--cache", pa.cache, "Plan cache directory");
    plan->add_option("--workers", pa.workers, "Parallel planner calls");
    plan->add_option("--round-trips", pa.round_trips, "Inference attempts per change (1-3)");

    InstrumentArgs ia;
    auto* instrument = app.add_subcommand("instrument", "Insert spans into both versions symmetrically");
    instrument->add_option("--changes", ia.changes, "changeset.json from extract");
    instrument->add_option("--plans", ia.plans, "Plan directory");
    instrument->add_option("--tree-a", ia.tree_a, "Base version tree");
    instrument->add_option("--tree-b", ia.tree_b, "Target version tree");
    instrument->add_option("--adapter", ia.adapter, "Adapter JSON file or 'python'");
    instrument->add_option("--run-id", ia.run_id, "Run directory name");
    instrument->add_option("--workers", ia.workers, "Parallel file workers");
    instrument->add_option("--strip", ia.strip, "Remove instrumentation from this tree instead");
    instrument->add_option("--strip-out", ia.strip_out, "Write the stripped copy here (default: in place)");

    std::string run_config, artifact;
    bool aa = false;
    auto* bench = app.add_subcommand("bench", "Run the duet benchmark");
    bench->add_option("--run-config", run_config, "Run config JSON");
    bench->add_flag("--aa", aa, "Instrumented A against uninstrumented aa_cmd");
    bench->add_option("--artifact", artifact, "Artifact directory (default <out>/bench)");

    AnalyzeArgs aa_args;
    auto* analyze = app.add_subcommand("analyze", "Bootstrap analysis of a benchmark artifact");
    analyze->add_option("--artifact", aa_args.artifact, "Artifact directory");
    analyze->add_option("--resamples", aa_args.resamples, "Bootstrap resamples");
    analyze->add_option("--level", aa_args.level, "Confidence level");
    analyze->add_flag("--aa", aa_args.aa, "Add Hellinger distance and Q-Q points");
    analyze->add_option("--threads", aa_args.threads, "Bootstrap threads");
    analyze->add_option("--bins", aa_args.bins, "Hellinger bins");

    EvaluateArgs ea;
    auto* evaluate = app.add_subcommand("evaluate", "Score plans against ground truth, or run a severity sweep");
    evaluate->add_option("--task", ea.tasks, "name,changes.json,plans_dir");
    evaluate->add_option("-k", ea.k, "Line threshold");
    evaluate->add_flag("--sweep", ea.sweep, "Severity sweep");
    evaluate->add_option("--artifacts", ea.artifacts, "severity=artifact_dir (sweep over recorded runs)");
    evaluate->add_option("--pipeline", ea.pipeline, "Pipeline spec JSON (sweep with a generator)");
    evaluate->add_option("--severities", ea.severities, "Severity ladder");
    evaluate->add_option("--resamples", ea.resamples, "Bootstrap resamples");
    evaluate->add_option("--level", ea.level, "Confidence level");

    std::string analysis;
    auto* report = app.add_subcommand("report", "Plot-ready CSV exports");
    report->add_option("--analysis", analysis, "analysis.json");

    std::vector<std::string> argv_store{"duet"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store)
        argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (!g.config.empty())
            g.tool = read_json(g.config);
        if (*extract)
            return cmd_extract(g, diff, json_in, base, target, out);
        if (*plan)
            return cmd_plan(g, pa, out);
        if (*instrument)
            return cmd_instrument(g, ia, out);
        if (*bench)
            return cmd_bench(g, run_config, aa, artifact, out, err);
        if (*analyze)
            return cmd_analyze(g, aa_args, out);
        if (*evaluate)
            return cmd_evaluate(g, ea, out);
        if (*report)
            return cmd_report(g, analysis, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

} // namespace duet
