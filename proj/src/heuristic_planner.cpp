// Deterministic offline planner. A hunk gets a span when its added code lines
// carry a performance signal allowed at the requested level; the span covers the
// smallest complete statement block around those lines.

#include "duet/planner.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <set>

namespace duet {

namespace {

enum class Mode { indent, brace };

enum class Signal { loop, numeric, collection, io, recursion };

std::string_view signal_name(Signal s) {
    switch (s) {
    case Signal::loop: return "loop";
    case Signal::numeric: return "numeric";
    case Signal::collection: return "collection";
    case Signal::io: return "io";
    case Signal::recursion: return "recursion";
    }
    return "loop";
}

std::vector<Signal> signals_for(Sensitivity level) {
    switch (level) {
    case Sensitivity::low: return {Signal::loop};
    case Sensitivity::medium: return {Signal::loop, Signal::numeric};
    case Sensitivity::high: break;
    }
    return {Signal::loop, Signal::numeric, Signal::collection, Signal::io, Signal::recursion};
}

Mode mode_for(std::string_view path) {
    return path.ends_with(".py") || path.ends_with(".pyi") ? Mode::indent : Mode::brace;
}

/// Blanks out string literal contents and strips trailing comments on one line.
/// Multi-line literals are not tracked here; callers only use this on short snippets.
std::string code_only(std::string_view line, Mode mode) {
    std::string out;
    out.reserve(line.size());
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quote) {
            if (c == '\\') {
                ++i;
                continue;
            }
            if (c == quote) {
                quote = 0;
                out += c;
            }
            continue;
        }
        if (c == '"' || c == '\'' || (mode == Mode::brace && c == '`')) {
            quote = c;
            out += c;
            continue;
        }
        if (mode == Mode::indent && c == '#')
            break;
        if (mode == Mode::brace && c == '/' && i + 1 < line.size() && (line[i + 1] == '/' || line[i + 1] == '*'))
            break;
        out += c;
    }
    return out;
}

bool is_comment(std::string_view line, Mode mode) {
    auto t = trim(line);
    if (mode == Mode::indent)
        return t.starts_with('#');
    return t.starts_with("//") || t.starts_with("/*") || t.starts_with("*");
}

bool is_log_call(std::string_view line) {
    static const std::regex log_re(
        R"(^(print|console\.(log|debug|info|warn|error|trace)|(self\.|this\.)?_?(log|logger|logging|LOG)\.(debug|info|warning|warn|error|exception|critical|trace|log)|debug|System\.out\.println|printf|fprintf|std::(cout|cerr|clog)|spdlog::\w+)\s*(\(|<<))");
    std::string t(trim(line));
    return std::regex_search(t, log_re);
}

int paren_balance(std::string_view code) {
    int b = 0;
    for (char c : code) {
        if (c == '(' || c == '[' || c == '{')
            ++b;
        else if (c == ')' || c == ']' || c == '}')
            --b;
    }
    return b;
}

/// Added/deleted lines of a hunk with comments, blanks and log statements removed.
std::vector<std::pair<int, std::string>> code_lines(const std::vector<std::pair<int, std::string>>& lines, Mode mode) {
    std::vector<std::pair<int, std::string>> out;
    int log_depth = 0;
    for (const auto& [no, text] : lines) {
        if (log_depth > 0) {
            log_depth += paren_balance(code_only(text, mode));
            continue;
        }
        if (trim(text).empty() || is_comment(text, mode))
            continue;
        if (is_log_call(text)) {
            log_depth = std::max(0, paren_balance(code_only(text, mode)));
            continue;
        }
        out.emplace_back(no, code_only(text, mode));
    }
    return out;
}

std::multiset<std::string> numeric_literals(const std::string& code) {
    static const std::regex num_re(R"((^|[^A-Za-z0-9_.])(\d+(\.\d+)?([eE][+-]?\d+)?))");
    std::multiset<std::string> out;
    for (auto it = std::sregex_iterator(code.begin(), code.end(), num_re); it != std::sregex_iterator(); ++it)
        out.insert((*it)[2].str());
    return out;
}

bool matches(const std::string& code, const std::regex& re) {
    return std::regex_search(code, re);
}

// ---------------------------------------------------------------------------
// Source model: per-line structure for block scanning.
// ---------------------------------------------------------------------------

struct SourceModel {
    Mode mode{Mode::indent};
    std::vector<std::string> lines; // index 0 unused
    std::vector<bool> logical_start;
    std::vector<bool> code;         // non-blank, not a comment line, not inside a multi-line string
    std::vector<int> depth_before;  // curly depth before the line (brace mode)
    std::vector<int> depth_after;
    std::vector<int> depth_min;     // lowest curly depth reached within the line

    int size() const { return static_cast<int>(lines.size()) - 1; }

    int indent(int i) const {
        int w = 0;
        for (char c : lines[i]) {
            if (c == ' ')
                ++w;
            else if (c == '\t')
                w += 8 - (w % 8);
            else
                break;
        }
        return w;
    }

    std::string_view stripped(int i) const { return trim(lines[i]); }
};

SourceModel build_model(std::string_view text, Mode mode) {
    SourceModel m;
    m.mode = mode;
    auto split = TextLines::split(text);
    m.lines.reserve(split.lines.size() + 1);
    m.lines.emplace_back();
    for (auto& l : split.lines)
        m.lines.push_back(std::move(l));
    const int n = m.size();
    m.logical_start.assign(n + 1, true);
    m.code.assign(n + 1, false);
    m.depth_before.assign(n + 1, 0);
    m.depth_after.assign(n + 1, 0);
    m.depth_min.assign(n + 1, 0);

    int bracket = 0;      // () [] and, in indent mode, {}
    int curly = 0;        // brace mode block depth
    std::string long_quote; // active triple quote / template literal / block comment terminator
    bool continued = false;

    for (int i = 1; i <= n; ++i) {
        const std::string& line = m.lines[i];
        const bool starts_inside = !long_quote.empty();
        m.logical_start[i] = !starts_inside && bracket == 0 && !continued;
        m.depth_before[i] = curly;
        int low = curly;
        bool has_code = false;
        char quote = 0;
        for (std::size_t k = 0; k < line.size(); ++k) {
            char c = line[k];
            if (!long_quote.empty()) {
                if (line.compare(k, long_quote.size(), long_quote) == 0) {
                    k += long_quote.size() - 1;
                    long_quote.clear();
                } else if (c == '\\' && long_quote != "*/") {
                    ++k;
                }
                continue;
            }
            if (quote) {
                if (c == '\\')
                    ++k;
                else if (c == quote)
                    quote = 0;
                continue;
            }
            if (c == ' ' || c == '\t' || c == '\r')
                continue;
            if (mode == Mode::indent) {
                if (c == '#')
                    break;
                if ((c == '"' || c == '\'') && line.compare(k, 3, std::string(3, c)) == 0) {
                    long_quote = std::string(3, c);
                    k += 2;
                    has_code = true;
                    continue;
                }
            } else {
                if (c == '/' && k + 1 < line.size() && line[k + 1] == '/')
                    break;
                if (c == '/' && k + 1 < line.size() && line[k + 1] == '*') {
                    long_quote = "*/";
                    ++k;
                    continue;
                }
                if (c == '`') {
                    long_quote = "`";
                    has_code = true;
                    continue;
                }
            }
            has_code = true;
            if (c == '"' || c == '\'') {
                quote = c;
                continue;
            }
            if (mode == Mode::brace && c == '{') {
                ++curly;
            } else if (mode == Mode::brace && c == '}') {
                --curly;
                low = std::min(low, curly);
            } else if (c == '(' || c == '[' || (mode == Mode::indent && c == '{')) {
                ++bracket;
            } else if (c == ')' || c == ']' || (mode == Mode::indent && c == '}')) {
                bracket = std::max(0, bracket - 1);
            }
        }
        m.code[i] = has_code && !starts_inside;
        if (starts_inside && has_code)
            m.code[i] = false;
        m.depth_after[i] = curly;
        m.depth_min[i] = low;
        std::string_view t = trim(line);
        continued = mode == Mode::indent && !t.empty() && t.back() == '\\';
    }
    return m;
}

int logical_start_of(const SourceModel& m, int i) {
    while (i > 1 && !m.logical_start[i])
        --i;
    return i;
}

int logical_end_of(const SourceModel& m, int i) {
    i = logical_start_of(m, i);
    while (i < m.size() && !m.logical_start[i + 1])
        ++i;
    return i;
}

bool is_clause_continuation(std::string_view t, Mode mode) {
    if (mode == Mode::indent)
        return starts_with_word(t, "elif") || starts_with_word(t, "else") || starts_with_word(t, "except") ||
               starts_with_word(t, "finally");
    if (t.starts_with('}'))
        t = trim(t.substr(1));
    return starts_with_word(t, "else") || starts_with_word(t, "catch") || starts_with_word(t, "finally");
}

bool is_definition(std::string_view t, Mode mode) {
    if (mode == Mode::indent)
        return starts_with_word(t, "def") || starts_with_word(t, "class") || t.starts_with("async def ");
    static const std::regex fn_re(
        R"(^(export\s+)?(default\s+)?(async\s+)?(function\b|class\b)|^(async\s+)?(?!if\b|for\b|while\b|switch\b|catch\b)[A-Za-z_$][\w$]*\s*\([^;]*\)\s*\{\s*$)");
    std::string s(t);
    return std::regex_search(s, fn_re);
}

std::optional<LineRange> indent_block(const SourceModel& m, int s, int e) {
    s = logical_start_of(m, s);
    e = logical_end_of(m, e);
    int base = 1 << 30;
    for (int i = s; i <= e; ++i)
        if (m.code[i] && m.logical_start[i])
            base = std::min(base, m.indent(i));
    if (base == (1 << 30))
        return std::nullopt;

    while (m.indent(s) > base) {
        int j = s - 1;
        while (j >= 1 && !(m.code[j] && m.logical_start[j] && m.indent(j) < m.indent(s)))
            --j;
        if (j < 1)
            break;
        s = j;
    }
    while (is_clause_continuation(m.stripped(s), Mode::indent)) {
        int j = s - 1;
        while (j >= 1 && !(m.code[j] && m.logical_start[j] && m.indent(j) <= m.indent(s)))
            --j;
        if (j < 1 || m.indent(j) < m.indent(s))
            break;
        s = j;
    }

    // Extend over bodies and trailing clauses.
    int last = e;
    for (int j = e + 1; j <= m.size(); ++j) {
        if (!m.code[j] && m.logical_start[j])
            continue; // blank/comment: include only if more body follows
        if (!m.logical_start[j] || m.indent(j) > base) {
            last = j;
            continue;
        }
        if (m.indent(j) == base && is_clause_continuation(m.stripped(j), Mode::indent)) {
            last = j;
            continue;
        }
        break;
    }
    e = last;
    if (m.indent(s) < base)
        base = m.indent(s);

    // A changed def/class header: measure the body, not the definition.
    if (is_definition(m.stripped(s), Mode::indent)) {
        int header_end = logical_end_of(m, s);
        int b = header_end + 1;
        while (b <= e && !(m.code[b] && m.logical_start[b]))
            ++b;
        // skip a docstring so __doc__ is untouched
        if (b <= e) {
            auto t = m.stripped(b);
            if (t.starts_with("\"\"\"") || t.starts_with("'''") || t.starts_with("r\"\"\"") || t.starts_with("\"") ||
                t.starts_with("'")) {
                b = logical_end_of(m, b) + 1;
                while (b <= e && !(m.code[b] && m.logical_start[b]))
                    ++b;
            }
        }
        if (b > e)
            return std::nullopt;
        s = b;
    }
    return LineRange{s, e};
}

std::optional<LineRange> brace_block(const SourceModel& m, int s, int e) {
    s = logical_start_of(m, s);
    e = logical_end_of(m, e);
    int target = 1 << 30;
    for (int i = s; i <= e; ++i)
        target = std::min({target, m.depth_min[i], m.depth_before[i], m.depth_after[i]});

    while (s > 1 && m.depth_before[s] > target)
        --s;
    s = logical_start_of(m, s);
    while (e < m.size() && m.depth_after[e] > target)
        ++e;
    // `for (...)\n{` style: pull in the header line
    if (m.stripped(s).starts_with('{') && s > 1) {
        int j = s - 1;
        while (j > 1 && !m.code[j])
            --j;
        s = logical_start_of(m, j);
    }
    // `} else {` at the start: walk up to the opening statement
    while (is_clause_continuation(m.stripped(s), Mode::brace) && s > 1) {
        int j = s - 1;
        while (j > 1 && !(m.code[j] && m.depth_before[j] == target && m.logical_start[j]))
            --j;
        if (j == s)
            break;
        s = j;
    }
    for (;;) {
        int j = e + 1;
        while (j <= m.size() && !m.code[j])
            ++j;
        if (j > m.size() || !is_clause_continuation(m.stripped(j), Mode::brace))
            break;
        e = j;
        while (e < m.size() && m.depth_after[e] > target)
            ++e;
    }

    if (is_definition(m.stripped(s), Mode::brace)) {
        int b = s + 1;
        int last = e;
        if (trim(m.lines[last]) == "}" || trim(m.lines[last]) == "};")
            --last;
        while (b <= last && !m.code[b])
            ++b;
        while (last >= b && !m.code[last])
            --last;
        if (b > last)
            return std::nullopt;
        return LineRange{b, last};
    }
    return LineRange{s, e};
}

std::optional<std::string> enclosing_function(const SourceModel& m, int line) {
    static const std::regex py_def(R"(^\s*(async\s+)?def\s+([A-Za-z_]\w*)\s*\()");
    static const std::regex js_def(R"((function\s+([A-Za-z_$][\w$]*)\s*\()|(^\s*(async\s+)?([A-Za-z_$][\w$]*)\s*\([^;]*\)\s*\{\s*$))");
    if (line > m.size())
        return std::nullopt;
    const int own = m.mode == Mode::indent ? m.indent(line) : 0;
    for (int i = line; i >= 1; --i) {
        std::smatch match;
        if (m.mode == Mode::indent) {
            if (m.code[i] && m.indent(i) < own && std::regex_search(m.lines[i], match, py_def))
                return match[2].str();
        } else if (m.depth_before[i] < m.depth_before[line] || i == line) {
            if (std::regex_search(m.lines[i], match, js_def)) {
                auto name = match[2].matched ? match[2].str() : match[5].str();
                if (name != "if" && name != "for" && name != "while" && name != "switch" && name != "catch")
                    return name;
            }
        }
    }
    return std::nullopt;
}

bool has_exit_point(const SourceModel& m, LineRange r) {
    static const std::regex exit_re(R"(\b(return|raise|throw|yield)\b)");
    for (int i = r.start; i <= r.end && i <= m.size(); ++i)
        if (m.code[i] && matches(code_only(m.lines[i], m.mode), exit_re))
            return true;
    return false;
}

} // namespace

MarkerPlan heuristic_plan(const FileChange& change, std::string_view target_source, Sensitivity level) {
    static const std::regex loop_re(R"(\b(for|while)\b|\bdo\s*\{|\.forEach\s*\()");
    static const std::regex collection_re(
        R"(\b(sort|sorted|shuffle|reverse|reversed|append|extend|insert|copy|deepcopy|filter|map|reduce|push|splice|concat|slice|zip|heappush|heappop|heapify|sample|choices|setdefault|flat|flatMap|fill|from|list|dict|set|tuple)\s*\()");
    static const std::regex io_re(
        R"(\b(open|read|write|readline|readlines|fetch|urlopen|query|execute|executemany|find|find_one|aggregate|insert_one|insert_many|update_one|send|sendall|recv|sleep|connect|request)\s*\(|\brequests\.\w+\s*\()");

    const Mode mode = mode_for(change.path);
    const auto model = build_model(target_source, mode);
    const auto enabled = signals_for(level);

    MarkerPlan plan;
    plan.change_fingerprint = change.fingerprint;
    plan.path = change.path;
    plan.backend_id = "heuristic";
    plan.sensitivity = level;

    struct Candidate {
        LineRange range;
        Signal signal;
        std::size_t hunk;
    };
    std::vector<Candidate> candidates;

    for (std::size_t h = 0; h < change.hunks.size(); ++h) {
        const auto& hunk = change.hunks[h];
        auto added = code_lines(hunk.added_lines(), mode);
        if (added.empty())
            continue; // comment-only, log-only or pure deletion
        std::vector<std::pair<int, std::string>> deleted_raw;
        for (const auto& l : hunk.lines)
            if (l.tag == LineTag::del)
                deleted_raw.emplace_back(0, l.text);
        auto deleted = code_lines(deleted_raw, mode);

        if (std::any_of(added.begin(), added.end(), [&](const auto& a) { return a.first > model.size(); }))
            continue; // source does not match the diff

        std::optional<Signal> hit;
        for (Signal s : enabled) {
            bool fired = false;
            switch (s) {
            case Signal::loop:
                fired = std::any_of(added.begin(), added.end(), [&](const auto& a) { return matches(a.second, loop_re); });
                break;
            case Signal::numeric: {
                if (deleted.empty())
                    break;
                std::multiset<std::string> before;
                for (const auto& d : deleted)
                    for (auto& n : numeric_literals(d.second))
                        before.insert(n);
                for (const auto& a : added) {
                    for (const auto& n : numeric_literals(a.second)) {
                        auto it = before.find(n);
                        if (it == before.end()) {
                            fired = true;
                            break;
                        }
                        before.erase(it);
                    }
                    if (fired)
                        break;
                }
                break;
            }
            case Signal::collection:
                fired = std::any_of(added.begin(), added.end(),
                                    [&](const auto& a) { return matches(a.second, collection_re); });
                break;
            case Signal::io:
                fired = std::any_of(added.begin(), added.end(), [&](const auto& a) { return matches(a.second, io_re); });
                break;
            case Signal::recursion: {
                auto fn = enclosing_function(model, added.front().first);
                if (!fn)
                    break;
                const std::regex call_re("\\b" + *fn + "\\s*\\(");
                fired = std::any_of(added.begin(), added.end(), [&](const auto& a) {
                    return matches(a.second, call_re) && !is_definition(trim(a.second), mode);
                });
                break;
            }
            }
            if (fired) {
                hit = s;
                break;
            }
        }
        if (!hit)
            continue;

        const int first = added.front().first;
        const int last = added.back().first;
        auto range = mode == Mode::indent ? indent_block(model, first, last) : brace_block(model, first, last);
        if (!range || !range->valid() || range->end > model.size())
            continue;
        candidates.push_back({*range, *hit, h});
    }

    // Hunks inside the same block collapse into one span.
    std::map<LineRange, Candidate> unique;
    for (const auto& c : candidates)
        unique.try_emplace(c.range, c);

    const std::string prefix = slugify(change.path);
    std::set<std::string> used;
    for (const auto& [range, c] : unique) {
        MarkerSpan span;
        span.name = prefix + "." + std::string(signal_name(c.signal)) + "." + std::to_string(range.start);
        for (int k = 2; used.contains(span.name); ++k)
            span.name = prefix + "." + std::string(signal_name(c.signal)) + "." + std::to_string(range.start) + "-" +
                        std::to_string(k);
        used.insert(span.name);
        span.path = change.path;
        span.new_range = range;
        span.attributes = {{"category", std::string(signal_name(c.signal))}, {"hunk", std::to_string(c.hunk)}};
        span.handles_exit_points = has_exit_point(model, range);
        plan.spans.push_back(std::move(span));
    }
    return plan;
}

} // namespace duet
