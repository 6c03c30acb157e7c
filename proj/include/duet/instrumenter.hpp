#pragma once

#include "duet/changeset.hpp"
#include "duet/planner.hpp"
#include "duet/util.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace duet {

/// Text templates for one target language.
///
/// Placeholders: `{indent}` leading whitespace of the spanned block, `{name}` span
/// name, `{var}` an identifier derived from the name, `{attributes}` a JSON object
/// literal of the span attributes. `exit_wrap_template` must contain exactly one
/// line of the form `{indent}<extra>{body}`; the original lines are re-emitted
/// there, each prefixed with `<extra>`.
struct LanguageAdapter {
    std::string id;
    std::string comment_prefix;
    std::string prelude; // optional, inserted once per instrumented file
    std::string span_begin_template;
    std::string span_end_template;
    std::string exit_wrap_template;
    std::vector<std::string> exit_keywords;
    std::vector<std::string> syntax_check_command; // argv, `{file}` replaced by the path

    static LanguageAdapter from_json(const nlohmann::json& doc); // throws ConfigError
    static LanguageAdapter load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    /// Text between `{indent}` and `{body}` in the wrap template.
    std::string body_prefix() const;

    static LanguageAdapter python();
};

/// Maps a span from target to base coordinates through the file's hunks.
/// Returns nullopt when a boundary lands inside code that only exists in the target.
std::optional<LineRange> map_to_old_coordinates(const MarkerSpan& span, const FileChange& change);

struct SpanInsertion {
    std::string name;
    LineRange range;
    std::map<std::string, std::string> attributes;
    bool wrap_exits{false};
};

/// Inserts one span. The block is wrapped when its lines contain an adapter exit
/// keyword (or `force_wrap`). Throws RangeOutOfBounds.
std::string insert_span(std::string_view file_text, const std::string& name, LineRange range,
                        const LanguageAdapter& adapter, const std::map<std::string, std::string>& attributes = {},
                        bool force_wrap = false);

/// Whether the adapter wants `range` of `file_text` exit-wrapped.
bool needs_exit_wrap(std::string_view file_text, LineRange range, const LanguageAdapter& adapter);

struct InsertionFailure {
    std::string name;
    std::string reason;
};

struct MultiInsertResult {
    std::string text;
    std::vector<InsertionFailure> failed; // spans left out of `text`
    std::map<std::string, LineRange> final_ranges; // begin-hook line to end-hook line
};

/// Inserts every span whose placement is structurally possible; the rest are
/// reported in `failed` and not inserted.
MultiInsertResult insert_spans(std::string_view file_text, const std::vector<SpanInsertion>& spans,
                               const LanguageAdapter& adapter);

/// Removes hooks and unwraps exit wrappers. Throws SentinelCorrupted.
std::string strip_instrumentation_text(std::string_view text, const LanguageAdapter& adapter,
                                       const std::string& file_label = "<text>");

/// Strips every file in `tree` in place (or into `out` when given). Returns the stripped root.
std::filesystem::path strip_instrumentation(const std::filesystem::path& tree, const LanguageAdapter& adapter,
                                            const std::optional<std::filesystem::path>& out = std::nullopt);

enum class SpanStatus { applied, skipped_asymmetric, skipped_syntax, skipped_unmappable };
std::string_view to_string(SpanStatus status) noexcept;

struct SpanReport {
    std::string name;
    std::string path;
    SpanStatus status{SpanStatus::applied};
    std::string reason;
    LineRange new_range;
    std::optional<LineRange> old_range;
};

struct InstrumentedTree {
    std::filesystem::path root_dir;
    VersionTag version_tag{VersionTag::A};
    std::vector<std::pair<std::string, LineRange>> applied_spans;
    std::vector<std::pair<std::string, std::string>> skipped;
};

struct InsertionReport {
    std::vector<SpanReport> spans;
    nlohmann::json metadata;

    std::size_t count(SpanStatus status) const;
};

struct SymmetricRun {
    std::filesystem::path tree_a;
    std::filesystem::path tree_b;
    const ChangeSet* changes{nullptr};
    std::vector<MarkerPlan> plans;
    LanguageAdapter adapter;
    std::filesystem::path out_root;
    std::string run_id;
    std::size_t workers{4};
};

struct SymmetricResult {
    InstrumentedTree a;
    InstrumentedTree b;
    InsertionReport report;
    std::filesystem::path run_dir;
};

/// Copies both trees to `<out_root>/<run_id>/{A,B}`, inserts every plan span into
/// both or neither, syntax-checks each touched file and writes metadata.json.
SymmetricResult apply_plan_symmetric(const SymmetricRun& run);

/// Runs the adapter's syntax check. Throws ToolMissing if the checker cannot be executed.
bool syntax_check(const std::filesystem::path& file, const LanguageAdapter& adapter, std::string* output = nullptr);

inline constexpr std::string_view kToolVersion = "0.1.0";

} // namespace duet
