#pragma once

#include "duet/util.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace duet {

enum class LineTag { context, add, del };

struct HunkLine {
    LineTag tag{LineTag::context};
    std::string text;
    /// The line was followed by "\ No newline at end of file".
    bool no_newline{false};

    bool operator==(const HunkLine&) const = default;
};

struct Hunk {
    int old_start{};
    int old_count{};
    int new_start{};
    int new_count{};
    std::vector<HunkLine> lines;

    bool operator==(const Hunk&) const = default;

    /// Target-version line numbers and texts of the added lines.
    std::vector<std::pair<int, std::string>> added_lines() const;

    /// Smallest target-version range covering the changed lines. Pure deletions
    /// collapse to the line that now sits where the removed block was.
    LineRange changed_region() const;
};

struct FileChange {
    std::string path;
    std::vector<Hunk> hunks;
    /// 64 lowercase hex chars, see fingerprint().
    std::string fingerprint;

    bool operator==(const FileChange&) const = default;
};

struct ChangeSet {
    std::string base_version_id;
    std::string target_version_id;
    std::vector<FileChange> file_changes;

    bool operator==(const ChangeSet&) const = default;

    const FileChange* find(std::string_view path) const;
};

struct GroundTruthChange {
    std::string path;
    std::string change_id;
    bool relevant{false};
    std::optional<LineRange> ideal_span;
    std::string note;
    /// Changed-line regions of this change in target coordinates (one per hunk).
    std::vector<LineRange> regions;

    bool operator==(const GroundTruthChange&) const = default;
};

struct LabeledChangeSet {
    ChangeSet changes;
    std::vector<GroundTruthChange> ground_truth;
};

/// Parses git/GNU style unified diff text. Throws MalformedDiff.
ChangeSet parse_unified_diff(std::string_view text, std::string base_version_id = {},
                             std::string target_version_id = {});

/// Parses the annotated JSON change format. Throws SchemaError.
LabeledChangeSet parse_json_changes(const nlohmann::json& doc);

std::string fingerprint(const FileChange& change);

std::string render_git_like(const FileChange& change);
std::string render_git_like(const ChangeSet& changes);

// Stage files written by `duet extract`.
nlohmann::json changeset_to_json(const ChangeSet& changes);
ChangeSet changeset_from_json(const nlohmann::json& doc);
nlohmann::json ground_truth_to_json(const std::vector<GroundTruthChange>& gt);
std::vector<GroundTruthChange> ground_truth_from_json(const nlohmann::json& doc);

} // namespace duet
