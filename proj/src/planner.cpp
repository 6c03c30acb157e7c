#include "duet/planner.hpp"

#include "duet/error.hpp"

#include <algorithm>
#include <regex>
#include <set>
#include <thread>

using nlohmann::json;
namespace fs = std::filesystem;

namespace duet {

std::string_view to_string(Sensitivity level) noexcept {
    switch (level) {
    case Sensitivity::low: return "low";
    case Sensitivity::medium: return "medium";
    case Sensitivity::high: return "high";
    }
    return "medium";
}

Sensitivity parse_sensitivity(std::string_view text) {
    if (text == "low")
        return Sensitivity::low;
    if (text == "medium")
        return Sensitivity::medium;
    if (text == "high")
        return Sensitivity::high;
    throw ConfigError("unknown sensitivity level '" + std::string(text) + "' (expected low, medium or high)");
}

const std::string& sensitivity_instructions(Sensitivity level) {
    // Placeholder wording.
    static const std::string low =
        "Only mark changes that alter loop structure or loop bounds. Skip everything else, including comments "
        "and logging.";
    static const std::string medium =
        "Mark changes that alter loops or change numeric parameters such as limits, sizes and iteration "
        "counts. Skip comments, logging and renames.";
    static const std::string high =
        "Mark any change that could plausibly affect latency: loops, changed numeric parameters, collection "
        "operations (sorting, shuffling, copying), I/O calls and recursion. Skip comments and logging.";
    switch (level) {
    case Sensitivity::low: return low;
    case Sensitivity::high: return high;
    case Sensitivity::medium: break;
    }
    return medium;
}

namespace {

json range_json(const LineRange& r) {
    return {{"start", r.start}, {"end", r.end}};
}

} // namespace

json plan_to_json(const MarkerPlan& plan) {
    json spans = json::array();
    for (const auto& s : plan.spans) {
        spans.push_back({{"name", s.name},
                         {"path", s.path},
                         {"new_range", range_json(s.new_range)},
                         {"old_range", s.old_range ? range_json(*s.old_range) : json(nullptr)},
                         {"attributes", s.attributes},
                         {"handles_exit_points", s.handles_exit_points}});
    }
    return {{"fingerprint", plan.change_fingerprint},
            {"spans", spans},
            {"backend", plan.backend_id},
            {"sensitivity", std::string(to_string(plan.sensitivity))}};
}

std::string serialize_plan(const MarkerPlan& plan) {
    return plan_to_json(plan).dump(2) + "\n";
}

const json& marker_plan_schema() {
    static const json schema = json::parse(R"({
  "type": "object",
  "additionalProperties": false,
  "required": ["spans"],
  "properties": {
    "fingerprint": {"type": "string"},
    "backend": {"type": "string"},
    "sensitivity": {"enum": ["low", "medium", "high"]},
    "spans": {
      "type": "array",
      "items": {
        "type": "object",
        "additionalProperties": false,
        "required": ["name", "new_range"],
        "properties": {
          "name": {"type": "string", "pattern": "^[a-z0-9_.-]+$"},
          "path": {"type": "string"},
          "new_range": {"$ref": "#/definitions/range"},
          "old_range": {"oneOf": [{"type": "null"}, {"$ref": "#/definitions/range"}]},
          "attributes": {"type": "object", "additionalProperties": {"type": "string"}},
          "handles_exit_points": {"type": "boolean"}
        }
      }
    }
  },
  "definitions": {
    "range": {
      "type": "object",
      "additionalProperties": false,
      "required": ["start", "end"],
      "properties": {"start": {"type": "integer", "minimum": 1}, "end": {"type": "integer", "minimum": 1}}
    }
  }
})");
    return schema;
}

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& at) {
    for (const auto& [key, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw SchemaViolation(at + "." + key, "unknown key");
    }
}

LineRange validate_range(const json& v, const std::string& at) {
    if (!v.is_object())
        throw SchemaViolation(at, "range must be an object");
    reject_unknown_keys(v, {"start", "end"}, at);
    auto s = v.find("start");
    auto e = v.find("end");
    if (s == v.end() || e == v.end())
        throw SchemaViolation(at, "range needs start and end");
    if (!s->is_number_integer() || !e->is_number_integer())
        throw SchemaViolation(at, "start and end must be integers");
    LineRange r{s->get<int>(), e->get<int>()};
    if (r.start < 1)
        throw SchemaViolation(at + ".start", "lines are 1-based");
    if (r.end < r.start)
        throw SchemaViolation(at, "end < start");
    return r;
}

bool valid_span_name(const std::string& name) {
    static const std::regex pattern("^[a-z0-9_.-]+$");
    return std::regex_match(name, pattern);
}

} // namespace

MarkerPlan validate_plan(const json& raw, const FileChange& change, std::optional<int> target_line_count,
                         std::string_view backend_id, Sensitivity level) {
    if (!raw.is_object())
        throw SchemaViolation("$", "plan must be an object");
    reject_unknown_keys(raw, {"fingerprint", "spans", "backend", "sensitivity"}, "$");

    MarkerPlan plan;
    plan.path = change.path;
    plan.change_fingerprint = change.fingerprint;
    plan.backend_id = std::string(backend_id);
    plan.sensitivity = level;

    if (auto it = raw.find("fingerprint"); it != raw.end()) {
        if (!it->is_string())
            throw SchemaViolation("$.fingerprint", "expected string");
        if (it->get<std::string>() != change.fingerprint)
            throw SchemaViolation("$.fingerprint", "fingerprint mismatch");
    }
    if (auto it = raw.find("backend"); it != raw.end()) {
        if (!it->is_string())
            throw SchemaViolation("$.backend", "expected string");
        if (it->get<std::string>() != backend_id)
            throw SchemaViolation("$.backend", "backend mismatch");
    }
    if (auto it = raw.find("sensitivity"); it != raw.end()) {
        if (!it->is_string())
            throw SchemaViolation("$.sensitivity", "expected string");
        Sensitivity doc_level{};
        try {
            doc_level = parse_sensitivity(it->get<std::string>());
        } catch (const ConfigError&) {
            throw SchemaViolation("$.sensitivity", "unknown level");
        }
        if (doc_level != level)
            throw SchemaViolation("$.sensitivity", "sensitivity mismatch");
    }

    auto spans = raw.find("spans");
    if (spans == raw.end())
        throw SchemaViolation("$.spans", "missing required key");
    if (!spans->is_array())
        throw SchemaViolation("$.spans", "expected array");

    std::set<std::string> names;
    for (std::size_t i = 0; i < spans->size(); ++i) {
        const std::string at = "$.spans[" + std::to_string(i) + "]";
        const auto& s = (*spans)[i];
        if (!s.is_object())
            throw SchemaViolation(at, "span must be an object");
        reject_unknown_keys(s, {"name", "path", "new_range", "old_range", "attributes", "handles_exit_points"}, at);

        MarkerSpan span;
        auto name = s.find("name");
        if (name == s.end() || !name->is_string())
            throw SchemaViolation(at + ".name", "name must be a string");
        span.name = name->get<std::string>();
        if (!valid_span_name(span.name))
            throw SchemaViolation(at + ".name", "name must match [a-z0-9_.-]+");
        if (!names.insert(span.name).second)
            throw SchemaViolation(at + ".name", "duplicate name");

        span.path = change.path;
        if (auto p = s.find("path"); p != s.end()) {
            if (!p->is_string())
                throw SchemaViolation(at + ".path", "expected string");
            if (p->get<std::string>() != change.path)
                throw SchemaViolation(at + ".path", "span path differs from the plan's file");
        }

        auto nr = s.find("new_range");
        if (nr == s.end())
            throw SchemaViolation(at + ".new_range", "missing required key");
        span.new_range = validate_range(*nr, at + ".new_range");
        if (target_line_count && span.new_range.end > *target_line_count)
            throw SchemaViolation(at + ".new_range", "range beyond end of file");

        if (auto orr = s.find("old_range"); orr != s.end() && !orr->is_null())
            span.old_range = validate_range(*orr, at + ".old_range");

        if (auto attrs = s.find("attributes"); attrs != s.end()) {
            if (!attrs->is_object())
                throw SchemaViolation(at + ".attributes", "expected object");
            for (const auto& [k, v] : attrs->items()) {
                if (!v.is_string())
                    throw SchemaViolation(at + ".attributes." + k, "attribute values must be strings");
                span.attributes[k] = v.get<std::string>();
            }
        }
        if (auto ex = s.find("handles_exit_points"); ex != s.end()) {
            if (!ex->is_boolean())
                throw SchemaViolation(at + ".handles_exit_points", "expected boolean");
            span.handles_exit_points = ex->get<bool>();
        }
        plan.spans.push_back(std::move(span));
    }
    return plan;
}

MarkerPlan load_plan_document(const json& doc, const FileChange& change, std::optional<int> target_line_count) {
    if (!doc.is_object())
        throw SchemaViolation("$", "plan must be an object");
    auto backend = doc.find("backend");
    if (backend == doc.end() || !backend->is_string())
        throw SchemaViolation("$.backend", "plan files must name their backend");
    auto level = doc.find("sensitivity");
    if (level == doc.end() || !level->is_string())
        throw SchemaViolation("$.sensitivity", "plan files must name their sensitivity");
    Sensitivity parsed{};
    try {
        parsed = parse_sensitivity(level->get<std::string>());
    } catch (const ConfigError&) {
        throw SchemaViolation("$.sensitivity", "unknown level");
    }
    return validate_plan(doc, change, target_line_count, backend->get<std::string>(), parsed);
}

MarkerPlan HeuristicBackend::plan(const PlanRequest& request) {
    auto plan = heuristic_plan(request.change, request.target_source, request.level);
    plan.backend_id = id();
    return plan;
}

PlanCache::PlanCache(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec)
        throw IoError("cannot create plan cache " + dir_.string() + ": " + ec.message());
}

fs::path PlanCache::entry_path(const std::string& fingerprint, Sensitivity level, const std::string& backend_id) const {
    return dir_ / (fingerprint + "-" + std::string(to_string(level)) + "-" + slugify(backend_id) + ".json");
}

std::optional<MarkerPlan> PlanCache::lookup(const FileChange& change, Sensitivity level,
                                            const std::string& backend_id) const {
    auto path = entry_path(change.fingerprint, level, backend_id);
    std::error_code ec;
    if (!fs::exists(path, ec))
        return std::nullopt;
    try {
        auto doc = json::parse(read_file(path));
        return validate_plan(doc, change, std::nullopt, backend_id, level);
    } catch (const std::exception&) {
        // unreadable or stale entry: treat as a miss, the next store overwrites it
        return std::nullopt;
    }
}

void PlanCache::store(const MarkerPlan& plan) {
    std::lock_guard lock(write_mutex_);
    write_file_atomic(entry_path(plan.change_fingerprint, plan.sensitivity, plan.backend_id), serialize_plan(plan));
}

SourceProvider directory_source(fs::path root) {
    return [root = std::move(root)](const std::string& path) -> std::optional<std::string> {
        std::error_code ec;
        auto full = root / path;
        if (!fs::is_regular_file(full, ec))
            return std::nullopt;
        return read_file(full);
    };
}

std::vector<PlanOutcome> plan_changes(const ChangeSet& changes, Sensitivity level, PlannerBackend& backend,
                                      PlanCache* cache, const SourceProvider& sources, std::size_t workers) {
    const auto& files = changes.file_changes;
    std::vector<PlanOutcome> outcomes(files.size());
    const std::string backend_id = backend.id();

    auto plan_one = [&](std::size_t i) {
        const auto& fc = files[i];
        PlanOutcome out;
        out.plan.change_fingerprint = fc.fingerprint;
        out.plan.path = fc.path;
        out.plan.backend_id = backend_id;
        out.plan.sensitivity = level;

        if (cache) {
            if (auto hit = cache->lookup(fc, level, backend_id)) {
                out.plan = std::move(*hit);
                out.from_cache = true;
                return out;
            }
        }
        auto source = sources ? sources(fc.path) : std::nullopt;
        if (!source) {
            out.skip_reason = "source_unavailable";
            out.detail = "target version of " + fc.path + " not found";
            return out;
        }
        try {
            auto plan = backend.plan(PlanRequest{fc, *source, level});
            // Re-check whatever the backend produced; nothing unvalidated leaves the planner.
            const int line_count = static_cast<int>(TextLines::split(*source).lines.size());
            out.plan = validate_plan(plan_to_json(plan), fc, line_count, backend_id, level);
            if (cache)
                cache->store(out.plan);
        } catch (const SchemaViolation& e) {
            out.skip_reason = "schema_violation";
            out.detail = e.what();
        } catch (const std::exception& e) {
            out.skip_reason = "backend_error";
            out.detail = e.what();
        }
        return out;
    };

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < files.size(); i = next++)
            outcomes[i] = plan_one(i);
    };
    const std::size_t n_threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(files.size(), 1));
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < n_threads; ++t)
            pool.emplace_back(worker);
        worker();
    }
    return outcomes;
}

} // namespace duet
