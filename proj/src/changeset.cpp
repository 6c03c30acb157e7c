#include "duet/changeset.hpp"

#include "duet/error.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>

using nlohmann::json;

namespace duet {

namespace {

constexpr std::string_view kNoNewline = "\\ No newline at end of file";

char tag_char(LineTag tag) {
    switch (tag) {
    case LineTag::add: return '+';
    case LineTag::del: return '-';
    case LineTag::context: break;
    }
    return ' ';
}

bool parse_int(std::string_view s, std::size_t& pos, int& out) {
    auto begin = s.data() + pos;
    auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), out);
    if (ec != std::errc{} || ptr == begin || out < 0)
        return false;
    pos += static_cast<std::size_t>(ptr - begin);
    return true;
}

// "@@ -s[,c] +s[,c] @@[ heading]"
bool parse_hunk_header(std::string_view line, Hunk& hunk) {
    std::size_t pos = 0;
    if (!line.starts_with("@@ -"))
        return false;
    pos = 4;
    if (!parse_int(line, pos, hunk.old_start))
        return false;
    hunk.old_count = 1;
    if (pos < line.size() && line[pos] == ',') {
        ++pos;
        if (!parse_int(line, pos, hunk.old_count))
            return false;
    }
    if (line.substr(pos, 2) != " +")
        return false;
    pos += 2;
    if (!parse_int(line, pos, hunk.new_start))
        return false;
    hunk.new_count = 1;
    if (pos < line.size() && line[pos] == ',') {
        ++pos;
        if (!parse_int(line, pos, hunk.new_count))
            return false;
    }
    return line.substr(pos, 3) == " @@";
}

std::string header_path(std::string_view rest) {
    auto tab = rest.find('\t');
    if (tab != std::string_view::npos)
        rest = rest.substr(0, tab);
    std::string path(trim(rest));
    if (path.size() >= 2 && path.front() == '"' && path.back() == '"')
        path = path.substr(1, path.size() - 2);
    return path;
}

std::string strip_first_component(const std::string& p) {
    auto slash = p.find('/');
    return slash == std::string::npos ? p : p.substr(slash + 1);
}

std::string resolve_path(const std::string& old_path, const std::string& new_path) {
    const bool old_null = old_path == "/dev/null";
    const bool new_null = new_path == "/dev/null";
    if (old_null && new_null)
        return {};
    if (new_null)
        return strip_first_component(old_path);
    if (old_null)
        return strip_first_component(new_path);
    if (old_path.find('/') != std::string::npos && new_path.find('/') != std::string::npos &&
        strip_first_component(old_path) == strip_first_component(new_path))
        return strip_first_component(new_path);
    return new_path;
}

void check_hunk_order(const std::vector<Hunk>& hunks, std::size_t line_no) {
    for (std::size_t i = 1; i < hunks.size(); ++i) {
        const auto& prev = hunks[i - 1];
        const auto& cur = hunks[i];
        int prev_old_end = prev.old_start + prev.old_count;
        int prev_new_end = prev.new_start + prev.new_count;
        if (cur.old_start < prev_old_end || cur.new_start < prev_new_end || cur.old_start < prev.old_start)
            throw MalformedDiff(line_no, "hunks overlap or are out of order");
    }
}

void finish_file(std::map<std::string, FileChange>& files, FileChange& current, std::size_t line_no) {
    if (current.path.empty())
        return;
    check_hunk_order(current.hunks, line_no);
    current.fingerprint = fingerprint(current);
    auto path = current.path;
    if (!files.emplace(path, std::move(current)).second)
        throw MalformedDiff(line_no, "file appears twice: " + path);
    current = FileChange{};
}

bool is_unsupported_header(std::string_view line) {
    static constexpr std::string_view prefixes[] = {
        "old mode ",    "new mode ",    "rename from ",   "rename to ",          "copy from ",
        "copy to ",     "similarity index ", "dissimilarity index ", "Binary files ", "GIT binary patch",
    };
    return std::any_of(std::begin(prefixes), std::end(prefixes),
                       [&](std::string_view p) { return line.starts_with(p); });
}

} // namespace

std::vector<std::pair<int, std::string>> Hunk::added_lines() const {
    std::vector<std::pair<int, std::string>> out;
    int new_line = new_count > 0 ? new_start : new_start + 1;
    for (const auto& l : lines) {
        if (l.tag == LineTag::add)
            out.emplace_back(new_line, l.text);
        if (l.tag != LineTag::del)
            ++new_line;
    }
    return out;
}

LineRange Hunk::changed_region() const {
    int new_line = new_count > 0 ? new_start : new_start + 1;
    int first = 0;
    int last = 0;
    int deletion_point = 0;
    for (const auto& l : lines) {
        if (l.tag == LineTag::add) {
            if (first == 0)
                first = new_line;
            last = new_line;
        } else if (l.tag == LineTag::del && deletion_point == 0) {
            deletion_point = new_line;
        }
        if (l.tag != LineTag::del)
            ++new_line;
    }
    if (first != 0)
        return {first, last};
    int p = std::max(1, deletion_point != 0 ? deletion_point : new_start);
    return {p, p};
}

const FileChange* ChangeSet::find(std::string_view path) const {
    for (const auto& fc : file_changes)
        if (fc.path == path)
            return &fc;
    return nullptr;
}

ChangeSet parse_unified_diff(std::string_view text, std::string base_version_id, std::string target_version_id) {
    ChangeSet out;
    out.base_version_id = std::move(base_version_id);
    out.target_version_id = std::move(target_version_id);

    const auto lines = TextLines::split(text).lines;
    std::map<std::string, FileChange> files;
    FileChange current;
    bool have_file = false;

    std::size_t i = 0;
    while (i < lines.size()) {
        const std::string_view line = lines[i];
        const std::size_t line_no = i + 1;

        if (is_unsupported_header(line))
            throw MalformedDiff(line_no, "binary, rename and mode changes are not supported");

        if (line.starts_with("--- ") && i + 1 < lines.size() && lines[i + 1].starts_with("+++ ")) {
            finish_file(files, current, line_no);
            auto path = resolve_path(header_path(line.substr(4)), header_path(std::string_view(lines[i + 1]).substr(4)));
            if (path.empty())
                throw MalformedDiff(line_no, "both sides are /dev/null");
            current.path = std::move(path);
            have_file = true;
            i += 2;
            continue;
        }
        if (line.starts_with("--- "))
            throw MalformedDiff(line_no + 1, "expected '+++' header");

        if (line.starts_with("@@")) {
            if (!have_file)
                throw MalformedDiff(line_no, "hunk before file header");
            Hunk hunk;
            if (!parse_hunk_header(line, hunk))
                throw MalformedDiff(line_no, "bad hunk header");
            ++i;
            int old_seen = 0;
            int new_seen = 0;
            while (old_seen < hunk.old_count || new_seen < hunk.new_count) {
                if (i >= lines.size())
                    throw MalformedDiff(line_no, "hunk truncated: header says -" + std::to_string(hunk.old_count) + " +" +
                                                     std::to_string(hunk.new_count) + ", got -" +
                                                     std::to_string(old_seen) + " +" + std::to_string(new_seen));
                const std::string& body = lines[i];
                const std::size_t body_no = i + 1;
                HunkLine hl;
                char c = body.empty() ? ' ' : body[0];
                if (c == '\\') {
                    if (hunk.lines.empty())
                        throw MalformedDiff(body_no, "no-newline marker without a preceding line");
                    hunk.lines.back().no_newline = true;
                    ++i;
                    continue;
                }
                if (c == ' ')
                    hl.tag = LineTag::context;
                else if (c == '+')
                    hl.tag = LineTag::add;
                else if (c == '-')
                    hl.tag = LineTag::del;
                else
                    throw MalformedDiff(body_no, "unexpected line inside hunk");
                hl.text = body.empty() ? std::string{} : body.substr(1);
                if (hl.tag != LineTag::add && ++old_seen > hunk.old_count)
                    throw MalformedDiff(body_no, "more old-side lines than the header declares");
                if (hl.tag != LineTag::del && ++new_seen > hunk.new_count)
                    throw MalformedDiff(body_no, "more new-side lines than the header declares");
                hunk.lines.push_back(std::move(hl));
                ++i;
            }
            if (i < lines.size() && lines[i].starts_with("\\")) {
                hunk.lines.back().no_newline = true;
                ++i;
            }
            // A body line right after a complete hunk means the header undercounted.
            if (i < lines.size() && !lines[i].empty() && (lines[i][0] == ' ' || lines[i][0] == '+' || lines[i][0] == '-') &&
                !lines[i].starts_with("--- ") && !lines[i].starts_with("+++ "))
                throw MalformedDiff(i + 1, "hunk has more lines than its header declares");
            current.hunks.push_back(std::move(hunk));
            continue;
        }

        if (line.starts_with("diff ")) {
            finish_file(files, current, line_no);
            have_file = false;
        }
        // index lines, new/deleted file mode, commit preamble: ignored
        ++i;
    }
    finish_file(files, current, lines.size());

    for (auto& [path, fc] : files)
        out.file_changes.push_back(std::move(fc));
    return out;
}

std::string fingerprint(const FileChange& change) {
    std::string canonical = change.path;
    canonical += '\n';
    for (const auto& h : change.hunks) {
        canonical += "@@ -" + std::to_string(h.old_start) + "," + std::to_string(h.old_count) + " +" +
                     std::to_string(h.new_start) + "," + std::to_string(h.new_count) + " @@\n";
        for (const auto& l : h.lines) {
            canonical += tag_char(l.tag);
            canonical += l.text;
            canonical += '\n';
            if (l.no_newline) {
                canonical += kNoNewline;
                canonical += '\n';
            }
        }
    }
    return sha256_hex(canonical);
}

std::string render_git_like(const FileChange& change) {
    std::string out = "--- a/" + change.path + "\n+++ b/" + change.path + "\n";
    auto range = [](int start, int count) {
        return count == 1 ? std::to_string(start) : std::to_string(start) + "," + std::to_string(count);
    };
    for (const auto& h : change.hunks) {
        out += "@@ -" + range(h.old_start, h.old_count) + " +" + range(h.new_start, h.new_count) + " @@\n";
        for (const auto& l : h.lines) {
            out += tag_char(l.tag);
            out += l.text;
            out += '\n';
            if (l.no_newline) {
                out += kNoNewline;
                out += '\n';
            }
        }
    }
    return out;
}

std::string render_git_like(const ChangeSet& changes) {
    std::string out;
    for (const auto& fc : changes.file_changes) {
        out += "diff --git a/" + fc.path + " b/" + fc.path + "\n";
        out += render_git_like(fc);
    }
    return out;
}

namespace {

const json& require(const json& obj, const std::string& key, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end())
        throw SchemaError(path + "." + key, "missing required key");
    return *it;
}

std::string require_string(const json& obj, const std::string& key, const std::string& path) {
    const auto& v = require(obj, key, path);
    if (!v.is_string())
        throw SchemaError(path + "." + key, "expected string");
    return v.get<std::string>();
}

std::optional<LineRange> parse_span_object(const json& v, const std::string& path) {
    if (v.is_null())
        return std::nullopt;
    if (!v.is_object())
        throw SchemaError(path, "expected object or null");
    const auto& s = require(v, "start", path);
    const auto& e = require(v, "end", path);
    if (!s.is_number_integer() || !e.is_number_integer())
        throw SchemaError(path, "start/end must be integers");
    LineRange r{s.get<int>(), e.get<int>()};
    if (r.start < 1)
        throw SchemaError(path + ".start", "lines are 1-based");
    if (r.end < r.start)
        throw SchemaError(path, "end < start");
    return r;
}

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> known, const std::string& path) {
    for (const auto& [key, _] : obj.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw SchemaError(path + "." + key, "unknown key");
}

} // namespace

LabeledChangeSet parse_json_changes(const json& doc) {
    if (!doc.is_object())
        throw SchemaError("$", "expected object");
    reject_unknown_keys(doc, {"base", "target", "changes"}, "$");
    LabeledChangeSet out;
    out.changes.base_version_id = require_string(doc, "base", "$");
    out.changes.target_version_id = require_string(doc, "target", "$");
    const auto& changes = require(doc, "changes", "$");
    if (!changes.is_array())
        throw SchemaError("$.changes", "expected array");

    std::map<std::string, FileChange> files;
    std::map<std::string, std::string> hunk_owner; // "path@old_start" -> change path in doc, for error paths
    std::set<std::string> ids;
    for (std::size_t i = 0; i < changes.size(); ++i) {
        const std::string at = "changes[" + std::to_string(i) + "]";
        const auto& c = changes[i];
        if (!c.is_object())
            throw SchemaError(at, "expected object");
        reject_unknown_keys(c, {"id", "path", "diff", "relevant", "ideal_span", "note"}, at);
        GroundTruthChange gt;
        gt.change_id = require_string(c, "id", at);
        gt.path = require_string(c, "path", at);
        const auto diff = require_string(c, "diff", at);
        const auto& rel = require(c, "relevant", at);
        if (!rel.is_boolean())
            throw SchemaError(at + ".relevant", "expected boolean");
        gt.relevant = rel.get<bool>();
        if (auto it = c.find("ideal_span"); it != c.end())
            gt.ideal_span = parse_span_object(*it, at + ".ideal_span");
        if (auto it = c.find("note"); it != c.end()) {
            if (!it->is_string())
                throw SchemaError(at + ".note", "expected string");
            gt.note = it->get<std::string>();
        }
        if (gt.relevant && !gt.ideal_span)
            throw SchemaError(at + ".ideal_span", "required when relevant is true");
        if (!gt.relevant && gt.ideal_span)
            throw SchemaError(at + ".ideal_span", "must be null when relevant is false");
        if (gt.path.empty())
            throw SchemaError(at + ".path", "empty path");
        if (!ids.insert(gt.change_id).second)
            throw SchemaError(at + ".id", "duplicate change id");

        std::string text = diff;
        if (text.find("\n+++ ") == std::string::npos && !text.starts_with("--- "))
            text = "--- a/" + gt.path + "\n+++ b/" + gt.path + "\n" + text;
        ChangeSet parsed;
        try {
            parsed = parse_unified_diff(text);
        } catch (const MalformedDiff& e) {
            throw SchemaError(at + ".diff", e.what());
        }
        if (parsed.file_changes.size() > 1 ||
            (parsed.file_changes.size() == 1 && parsed.file_changes[0].path != gt.path))
            throw SchemaError(at + ".diff", "diff must touch exactly the file named in path");

        auto& fc = files[gt.path];
        fc.path = gt.path;
        if (!parsed.file_changes.empty()) {
            for (auto& h : parsed.file_changes[0].hunks) {
                gt.regions.push_back(h.changed_region());
                fc.hunks.push_back(std::move(h));
            }
        }
        out.ground_truth.push_back(std::move(gt));
    }

    for (auto& [path, fc] : files) {
        std::stable_sort(fc.hunks.begin(), fc.hunks.end(),
                         [](const Hunk& a, const Hunk& b) { return a.old_start < b.old_start; });
        try {
            check_hunk_order(fc.hunks, 0);
        } catch (const MalformedDiff&) {
            throw SchemaError("$.changes", "hunks of changes to " + path + " overlap");
        }
        fc.fingerprint = fingerprint(fc);
        out.changes.file_changes.push_back(std::move(fc));
    }
    return out;
}

json changeset_to_json(const ChangeSet& changes) {
    json files = json::array();
    for (const auto& fc : changes.file_changes)
        files.push_back({{"path", fc.path}, {"fingerprint", fc.fingerprint}, {"diff", render_git_like(fc)}});
    return {{"base", changes.base_version_id}, {"target", changes.target_version_id}, {"files", files}};
}

ChangeSet changeset_from_json(const json& doc) {
    if (!doc.is_object())
        throw SchemaError("$", "expected object");
    ChangeSet out;
    out.base_version_id = require_string(doc, "base", "$");
    out.target_version_id = require_string(doc, "target", "$");
    const auto& files = require(doc, "files", "$");
    if (!files.is_array())
        throw SchemaError("$.files", "expected array");
    for (std::size_t i = 0; i < files.size(); ++i) {
        const std::string at = "files[" + std::to_string(i) + "]";
        const auto path = require_string(files[i], "path", at);
        const auto fp = require_string(files[i], "fingerprint", at);
        ChangeSet parsed;
        try {
            parsed = parse_unified_diff(require_string(files[i], "diff", at));
        } catch (const MalformedDiff& e) {
            throw SchemaError(at + ".diff", e.what());
        }
        FileChange fc;
        if (parsed.file_changes.empty()) {
            fc.path = path;
            fc.fingerprint = fingerprint(fc);
        } else {
            fc = std::move(parsed.file_changes[0]);
        }
        if (fc.path != path)
            throw SchemaError(at + ".path", "does not match diff header");
        if (fc.fingerprint != fp)
            throw SchemaError(at + ".fingerprint", "does not match diff contents");
        out.file_changes.push_back(std::move(fc));
    }
    std::sort(out.file_changes.begin(), out.file_changes.end(),
              [](const FileChange& a, const FileChange& b) { return a.path < b.path; });
    return out;
}

json ground_truth_to_json(const std::vector<GroundTruthChange>& gt) {
    json arr = json::array();
    for (const auto& g : gt) {
        json regions = json::array();
        for (const auto& r : g.regions)
            regions.push_back({r.start, r.end});
        arr.push_back({{"id", g.change_id},
                       {"path", g.path},
                       {"relevant", g.relevant},
                       {"ideal_span", g.ideal_span ? json{{"start", g.ideal_span->start}, {"end", g.ideal_span->end}}
                                                   : json(nullptr)},
                       {"note", g.note},
                       {"regions", regions}});
    }
    return arr;
}

std::vector<GroundTruthChange> ground_truth_from_json(const json& doc) {
    if (!doc.is_array())
        throw SchemaError("$", "expected array");
    std::vector<GroundTruthChange> out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const std::string at = "[" + std::to_string(i) + "]";
        GroundTruthChange g;
        g.change_id = require_string(doc[i], "id", at);
        g.path = require_string(doc[i], "path", at);
        g.relevant = require(doc[i], "relevant", at).get<bool>();
        g.ideal_span = parse_span_object(require(doc[i], "ideal_span", at), at + ".ideal_span");
        g.note = doc[i].value("note", "");
        if (auto it = doc[i].find("regions"); it != doc[i].end())
            for (const auto& r : *it)
                g.regions.push_back({r.at(0).get<int>(), r.at(1).get<int>()});
        if (g.relevant != g.ideal_span.has_value())
            throw SchemaError(at + ".ideal_span", "present iff relevant");
        out.push_back(std::move(g));
    }
    return out;
}

} // namespace duet
