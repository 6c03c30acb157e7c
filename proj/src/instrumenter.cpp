#include "duet/instrumenter.hpp"

#include "duet/error.hpp"
#include "duet/process.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <regex>
#include <set>
#include <thread>

using nlohmann::json;
namespace fs = std::filesystem;

namespace duet {

namespace {

constexpr std::string_view kTag = " duet-span:";

const std::string& string_field(const json& doc, const char* key, bool required) {
    static const std::string empty;
    auto it = doc.find(key);
    if (it == doc.end()) {
        if (required)
            throw ConfigError(std::string("adapter: missing ") + key);
        return empty;
    }
    if (!it->is_string())
        throw ConfigError(std::string("adapter: ") + key + " must be a string");
    return it->get_ref<const std::string&>();
}

std::vector<std::string> template_lines(const std::string& tmpl) {
    auto lines = TextLines::split(tmpl).lines;
    return lines;
}

// Single pass, so substituted values are never re-scanned for placeholders.
std::string substitute(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& vars) {
    std::string out;
    out.reserve(tmpl.size() + 32);
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            auto close = tmpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                auto it = vars.find(tmpl.substr(i + 1, close - i - 1));
                if (it != vars.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += tmpl[i++];
    }
    return out;
}

std::string span_var(const std::string& name) {
    std::string var = "_duet_s_";
    for (char c : slugify(name))
        var += (c == '.' || c == '-') ? '_' : c;
    return var;
}

std::string leading_ws(std::string_view line) {
    auto n = line.find_first_not_of(" \t");
    return std::string(line.substr(0, n == std::string_view::npos ? line.size() : n));
}

bool is_blank(std::string_view line) { return trim(line).empty(); }

std::string block_indent(const std::vector<std::string>& lines, LineRange r) {
    std::optional<std::string> best;
    for (int i = r.start; i <= r.end; ++i) {
        const auto& l = lines[static_cast<std::size_t>(i - 1)];
        if (is_blank(l))
            continue;
        auto ws = leading_ws(l);
        if (!best || ws.size() < best->size())
            best = ws;
    }
    return best ? *best : leading_ws(lines[static_cast<std::size_t>(r.start - 1)]);
}

std::string sentinel(const LanguageAdapter& a, std::string_view name, std::string_view role) {
    std::string s = "  " + a.comment_prefix;
    s += kTag;
    s += name;
    s += '@';
    s += role;
    return s;
}

struct WrapParts {
    std::vector<std::string> open;
    std::vector<std::string> close;
};

WrapParts split_wrap(const LanguageAdapter& a) {
    WrapParts parts;
    bool seen = false;
    for (auto& line : template_lines(a.exit_wrap_template)) {
        if (line.find("{body}") != std::string::npos) {
            seen = true;
            continue;
        }
        (seen ? parts.close : parts.open).push_back(line);
    }
    return parts;
}

// Removes string literal contents and trailing comments so keywords inside them don't count.
std::string code_text(std::string_view line, const std::string& comment_prefix) {
    std::string out;
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quote) {
            if (c == '\\') {
                ++i;
                continue;
            }
            if (c == quote)
                quote = 0;
            out += ' ';
            continue;
        }
        if (c == '"' || c == '\'' || c == '`') {
            quote = c;
            out += ' ';
            continue;
        }
        if (!comment_prefix.empty() && line.substr(i).starts_with(comment_prefix))
            break;
        out += c;
    }
    return out;
}

bool contains_word(std::string_view text, std::string_view word) {
    auto is_ident = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$'; };
    std::size_t pos = 0;
    while ((pos = text.find(word, pos)) != std::string_view::npos) {
        const bool left = pos == 0 || !is_ident(text[pos - 1]);
        const bool right = pos + word.size() >= text.size() || !is_ident(text[pos + word.size()]);
        if (left && right)
            return true;
        pos += word.size();
    }
    return false;
}

// Lines (1-based) that begin inside a triple-quoted string. Prefixing such a line
// would change the string's value, so wrapped spans may not contain them.
std::vector<bool> lines_inside_triple_quotes(const std::vector<std::string>& lines) {
    std::vector<bool> inside(lines.size() + 2, false);
    std::string open;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        inside[i + 1] = !open.empty();
        const auto& l = lines[i];
        std::size_t pos = 0;
        while (pos < l.size()) {
            if (open.empty()) {
                auto c = l[pos];
                if (c == '#')
                    break;
                if (l.compare(pos, 3, "\"\"\"") == 0 || l.compare(pos, 3, "'''") == 0) {
                    open = l.substr(pos, 3);
                    pos += 3;
                    continue;
                }
                if (c == '"' || c == '\'') {
                    auto end = pos + 1;
                    while (end < l.size() && l[end] != c)
                        end += l[end] == '\\' ? 2 : 1;
                    pos = end + 1;
                    continue;
                }
                ++pos;
            } else {
                if (l[pos] == '\\') {
                    pos += 2;
                    continue;
                }
                if (l.compare(pos, 3, open) == 0) {
                    open.clear();
                    pos += 3;
                    continue;
                }
                ++pos;
            }
        }
    }
    return inside;
}

std::size_t prelude_position(const std::vector<std::string>& lines) {
    static const std::regex coding(R"(^[ \t\f]*#.*?coding[:=][ \t]*[-\w.]+)");
    std::size_t pos = 0;
    while (pos < lines.size()) {
        std::string_view l = lines[pos];
        if ((pos == 0 && l.starts_with("#!")) || (pos < 2 && std::regex_search(lines[pos], coding)) ||
            l.starts_with("from __future__") || l == "'use strict';" || l == "\"use strict\";" ||
            l == "'use strict'" || l == "\"use strict\"")
            ++pos;
        else
            break;
    }
    // `from __future__` may follow a module docstring.
    for (std::size_t i = lines.size(); i > pos; --i)
        if (lines[i - 1].starts_with("from __future__"))
            return i;
    return pos;
}

bool check_range(LineRange r, std::size_t line_count) {
    return r.valid() && static_cast<std::size_t>(r.end) <= line_count;
}

bool check_empty_range(LineRange r, std::size_t line_count) {
    return r.empty_at_start() && static_cast<std::size_t>(r.start) <= line_count + 1;
}

bool starts_with_word(std::string_view code, std::string_view word) {
    return code.starts_with(word) &&
           (code.size() == word.size() || !(std::isalnum(static_cast<unsigned char>(code[word.size()])) ||
                                            code[word.size()] == '_'));
}

/// Indent for hooks placed just before line `at`: that of the next code line, or of the
/// previous one when the next line continues a compound statement or there is none.
std::string point_indent(const std::vector<std::string>& lines, std::size_t at) {
    std::optional<std::size_t> next, prev;
    for (auto i = at; i <= lines.size() && !next; ++i)
        if (!is_blank(lines[i - 1]))
            next = i;
    for (auto i = at; i > 1 && !prev; --i)
        if (!is_blank(lines[i - 2]))
            prev = i - 1;
    if (next) {
        auto code = std::string_view(lines[*next - 1]);
        code.remove_prefix(std::min(code.size(), code.find_first_not_of(" \t")));
        bool continuation = false;
        for (std::string_view kw : {"else", "elif", "except", "finally"})
            continuation = continuation || starts_with_word(code, kw);
        if (!continuation || !prev)
            return leading_ws(lines[*next - 1]);
    }
    return prev ? leading_ws(lines[*prev - 1]) : std::string{};
}

struct Placed {
    const SpanInsertion* span;
    bool wrap;
    std::string indent;
    std::size_t order;
};

} // namespace

// ---------------------------------------------------------------------------
// LanguageAdapter

LanguageAdapter LanguageAdapter::from_json(const json& doc) {
    if (!doc.is_object())
        throw ConfigError("adapter must be a JSON object");
    LanguageAdapter a;
    a.id = string_field(doc, "id", true);
    a.comment_prefix = string_field(doc, "comment_prefix", true);
    a.prelude = string_field(doc, "prelude", false);
    a.span_begin_template = string_field(doc, "span_begin_template", true);
    a.span_end_template = string_field(doc, "span_end_template", true);
    a.exit_wrap_template = string_field(doc, "exit_wrap_template", true);
    if (auto it = doc.find("exit_keywords"); it != doc.end()) {
        if (!it->is_array())
            throw ConfigError("adapter: exit_keywords must be an array");
        for (const auto& k : *it)
            a.exit_keywords.push_back(k.get<std::string>());
    }
    auto cmd = doc.find("syntax_check_command");
    if (cmd == doc.end() || !cmd->is_array() || cmd->empty())
        throw ConfigError("adapter: syntax_check_command must be a non-empty array");
    for (const auto& part : *cmd)
        a.syntax_check_command.push_back(part.get<std::string>());

    if (a.comment_prefix.empty())
        throw ConfigError("adapter: comment_prefix is empty");
    int body_lines = 0;
    for (const auto& line : template_lines(a.exit_wrap_template)) {
        if (line.find("{body}") == std::string::npos)
            continue;
        ++body_lines;
        if (!line.starts_with("{indent}") || !line.ends_with("{body}"))
            throw ConfigError("adapter: the {body} line must look like {indent}<extra>{body}");
    }
    if (body_lines != 1)
        throw ConfigError("adapter: exit_wrap_template needs exactly one {body} line");
    return a;
}

LanguageAdapter LanguageAdapter::load(const fs::path& path) {
    auto doc = json::parse(read_file(path), nullptr, false);
    if (doc.is_discarded())
        throw ConfigError("adapter " + path.string() + " is not valid JSON");
    return from_json(doc);
}

json LanguageAdapter::to_json() const {
    return {{"id", id},
            {"comment_prefix", comment_prefix},
            {"prelude", prelude},
            {"span_begin_template", span_begin_template},
            {"span_end_template", span_end_template},
            {"exit_wrap_template", exit_wrap_template},
            {"exit_keywords", exit_keywords},
            {"syntax_check_command", syntax_check_command}};
}

std::string LanguageAdapter::body_prefix() const {
    for (const auto& line : template_lines(exit_wrap_template)) {
        auto pos = line.find("{body}");
        if (pos != std::string::npos)
            return line.substr(8, pos - 8);
    }
    return {};
}

LanguageAdapter LanguageAdapter::python() {
    LanguageAdapter a;
    a.id = "python";
    a.comment_prefix = "#";
    a.prelude = "from duet_recorder import span_begin as _duet_span_begin, span_end as _duet_span_end";
    a.span_begin_template = "{indent}{var} = _duet_span_begin(\"{name}\", {attributes})";
    a.span_end_template = "{indent}_duet_span_end({var})";
    a.exit_wrap_template = "{indent}{var} = _duet_span_begin(\"{name}\", {attributes})\n"
                           "{indent}try:\n"
                           "{indent}    {body}\n"
                           "{indent}finally:\n"
                           "{indent}    _duet_span_end({var})";
    a.exit_keywords = {"return", "raise", "yield", "break", "continue"};
    a.syntax_check_command = {"python3", "-c",
                              "import ast,sys; ast.parse(open(sys.argv[1], encoding='utf-8').read(), sys.argv[1])",
                              "{file}"};
    return a;
}

// ---------------------------------------------------------------------------
// Coordinate mapping

namespace {

std::optional<int> map_boundary(int n, bool is_start, const FileChange& change) {
    int offset = 0;
    for (const auto& h : change.hunks) {
        const int old_first = h.old_count > 0 ? h.old_start : h.old_start + 1;
        const int new_first = h.new_count > 0 ? h.new_start : h.new_start + 1;
        if (n < new_first)
            return n + offset;
        if (n < new_first + h.new_count) {
            int old_cursor = old_first;
            int new_cursor = new_first;
            std::size_t i = 0;
            while (i < h.lines.size()) {
                if (h.lines[i].tag == LineTag::context) {
                    if (new_cursor == n)
                        return old_cursor;
                    ++old_cursor;
                    ++new_cursor;
                    ++i;
                    continue;
                }
                int dels = 0;
                int adds = 0;
                while (i < h.lines.size() && h.lines[i].tag != LineTag::context) {
                    (h.lines[i].tag == LineTag::del ? dels : adds)++;
                    ++i;
                }
                if (n >= new_cursor && n < new_cursor + adds) {
                    if (dels == 0) {
                        if (is_start && n == new_cursor)
                            return old_cursor;
                        if (!is_start && n == new_cursor + adds - 1)
                            return old_cursor - 1;
                        return std::nullopt;
                    }
                    if (dels == adds)
                        return old_cursor + (n - new_cursor);
                    return is_start ? old_cursor : old_cursor + dels - 1;
                }
                old_cursor += dels;
                new_cursor += adds;
            }
            return std::nullopt;
        }
        offset = (old_first + h.old_count) - (new_first + h.new_count);
    }
    return n + offset;
}

} // namespace

std::optional<LineRange> map_to_old_coordinates(const MarkerSpan& span, const FileChange& change) {
    if (span.old_range)
        return span.old_range;
    auto start = map_boundary(span.new_range.start, true, change);
    auto end = map_boundary(span.new_range.end, false, change);
    if (!start || !end || *start < 1 || *start > *end + 1)
        return std::nullopt;
    // start == end + 1: the span covers only added lines, so in the base version it is
    // an empty range at the insertion point.
    return LineRange{*start, *end};
}

// ---------------------------------------------------------------------------
// Insertion

bool needs_exit_wrap(std::string_view file_text, LineRange range, const LanguageAdapter& adapter) {
    const auto lines = TextLines::split(file_text).lines;
    if (!check_range(range, lines.size()))
        return false;
    for (int i = range.start; i <= range.end; ++i) {
        const auto code = code_text(lines[static_cast<std::size_t>(i - 1)], adapter.comment_prefix);
        for (const auto& kw : adapter.exit_keywords)
            if (contains_word(code, kw))
                return true;
    }
    return false;
}

MultiInsertResult insert_spans(std::string_view file_text, const std::vector<SpanInsertion>& spans,
                               const LanguageAdapter& adapter) {
    MultiInsertResult result;
    auto text = TextLines::split(file_text);
    const auto& lines = text.lines;
    const std::string extra = adapter.body_prefix();
    const auto in_string = lines_inside_triple_quotes(lines);

    std::vector<Placed> candidates;
    std::set<std::string> names;
    std::vector<Placed> points;
    for (const auto& s : spans) {
        const bool empty = check_empty_range(s.range, lines.size());
        if (!empty && !check_range(s.range, lines.size())) {
            result.failed.push_back({s.name, "range out of bounds"});
            continue;
        }
        if (!names.insert(s.name).second) {
            result.failed.push_back({s.name, "duplicate span name"});
            continue;
        }
        if (empty) {
            if (in_string[static_cast<std::size_t>(s.range.start)]) {
                result.failed.push_back({s.name, "hook would land inside a multi-line string"});
                continue;
            }
            points.push_back({&s, false, point_indent(lines, static_cast<std::size_t>(s.range.start)), 0});
            continue;
        }
        const bool wrap = s.wrap_exits || needs_exit_wrap(file_text, s.range, adapter);
        const auto start = static_cast<std::size_t>(s.range.start);
        const auto end = static_cast<std::size_t>(s.range.end);
        if (in_string[start] || in_string[end + 1]) {
            result.failed.push_back({s.name, "hook would land inside a multi-line string"});
            continue;
        }
        if (wrap && !extra.empty()) {
            bool bad = false;
            for (auto i = start; i <= end && !bad; ++i)
                bad = in_string[i];
            if (bad) {
                result.failed.push_back({s.name, "exit wrap would alter a multi-line string"});
                continue;
            }
        }
        candidates.push_back({&s, wrap, block_indent(lines, s.range), 0});
    }

    std::stable_sort(candidates.begin(), candidates.end(), [](const Placed& x, const Placed& y) {
        if (x.span->range.start != y.span->range.start)
            return x.span->range.start < y.span->range.start;
        if (x.span->range.end != y.span->range.end)
            return x.span->range.end > y.span->range.end;
        return x.span->name < y.span->name;
    });

    std::vector<Placed> accepted;
    for (auto& c : candidates) {
        const auto r = c.span->range;
        bool crossing = false;
        for (const auto& a : accepted) {
            const auto q = a.span->range;
            const bool overlap = r.start <= q.end && q.start <= r.end;
            const bool nested = (q.start <= r.start && r.end <= q.end) || (r.start <= q.start && q.end <= r.end);
            if (overlap && !nested && (a.wrap || c.wrap)) {
                crossing = true;
                break;
            }
        }
        if (crossing) {
            result.failed.push_back({c.span->name, "overlaps a wrapped span without nesting"});
            continue;
        }
        c.order = accepted.size();
        accepted.push_back(c);
    }

    if (accepted.empty() && points.empty()) {
        result.text = std::string(file_text);
        return result;
    }

    const bool crlf = !lines.empty() && lines.front().ends_with('\r');
    const std::string eol_fix = crlf ? "\r" : "";
    const auto wrap_parts = split_wrap(adapter);
    const auto begin_tmpl = template_lines(adapter.span_begin_template);
    const auto end_tmpl = template_lines(adapter.span_end_template);

    std::vector<std::string> out;
    out.reserve(lines.size() + accepted.size() * 6 + 2);

    const auto prelude = template_lines(adapter.prelude);
    std::size_t prelude_at = prelude_position(lines);
    for (const auto* group : {&accepted, &points})
        for (const auto& a : *group)
            prelude_at = std::min(prelude_at, static_cast<std::size_t>(a.span->range.start - 1));
    for (std::size_t i = 0; i < prelude_at; ++i)
        out.push_back(lines[i]);
    for (const auto& p : prelude)
        out.push_back(p + sentinel(adapter, "", "prelude") + eol_fix);

    std::vector<const Placed*> active;
    auto active_prefix = [&]() {
        std::string prefix;
        for (const auto* a : active)
            if (a->wrap)
                prefix += extra;
        return prefix;
    };
    auto emit = [&](const Placed& p, const std::vector<std::string>& tmpl, std::string_view role) {
        json attrs = json::object();
        for (const auto& [k, v] : p.span->attributes)
            attrs[k] = v;
        const std::map<std::string, std::string, std::less<>> vars{
            {"indent", p.indent},
            {"name", p.span->name},
            {"var", span_var(p.span->name)},
            {"attributes", attrs.dump(-1, ' ', true)},
        };
        const auto prefix = active_prefix();
        for (const auto& t : tmpl)
            out.push_back(prefix + substitute(t, vars) + sentinel(adapter, p.span->name, role) + eol_fix);
    };

    std::vector<std::vector<const Placed*>> opening(lines.size() + 2), closing(lines.size() + 2),
        before(lines.size() + 2);
    for (const auto& a : accepted) {
        opening[static_cast<std::size_t>(a.span->range.start)].push_back(&a);
        closing[static_cast<std::size_t>(a.span->range.end)].push_back(&a);
    }
    for (const auto& p : points)
        before[static_cast<std::size_t>(p.span->range.start)].push_back(&p);
    auto emit_points = [&](std::size_t n) {
        for (const auto* p : before[n]) {
            result.final_ranges[p->span->name].start = static_cast<int>(out.size()) + 1;
            emit(*p, begin_tmpl, "begin");
            result.final_ranges[p->span->name].end = static_cast<int>(out.size()) + 1;
            emit(*p, end_tmpl, "end");
        }
    };

    for (std::size_t idx = prelude_at; idx < lines.size(); ++idx) {
        const auto n = idx + 1;
        emit_points(n);
        for (const auto* p : opening[n]) {
            result.final_ranges[p->span->name].start = static_cast<int>(out.size()) + 1;
            if (p->wrap)
                emit(*p, wrap_parts.open, "open");
            else
                emit(*p, begin_tmpl, "begin");
            active.push_back(p);
        }
        const auto& l = lines[idx];
        out.push_back(is_blank(l) && l.find_first_not_of("\r") == std::string::npos ? l : active_prefix() + l);
        auto closers = closing[n];
        std::sort(closers.begin(), closers.end(), [](const Placed* x, const Placed* y) { return x->order > y->order; });
        for (const auto* p : closers) {
            std::erase(active, p);
            result.final_ranges[p->span->name].end = static_cast<int>(out.size()) + 1;
            if (p->wrap)
                emit(*p, wrap_parts.close, "close");
            else
                emit(*p, end_tmpl, "end");
        }
    }
    emit_points(lines.size() + 1);
    TextLines rendered{std::move(out), text.trailing_newline};
    result.text = rendered.join();
    return result;
}

std::string insert_span(std::string_view file_text, const std::string& name, LineRange range,
                        const LanguageAdapter& adapter, const std::map<std::string, std::string>& attributes,
                        bool force_wrap) {
    const auto count = TextLines::split(file_text).lines.size();
    if (!check_range(range, count))
        throw RangeOutOfBounds("span " + name + " range " + std::to_string(range.start) + "-" +
                               std::to_string(range.end) + " outside 1-" + std::to_string(count));
    auto res = insert_spans(file_text, {SpanInsertion{name, range, attributes, force_wrap}}, adapter);
    if (!res.failed.empty())
        throw Error("cannot insert span " + name + ": " + res.failed.front().reason);
    return res.text;
}

// ---------------------------------------------------------------------------
// Stripping

std::string strip_instrumentation_text(std::string_view text, const LanguageAdapter& adapter,
                                       const std::string& file_label) {
    auto in = TextLines::split(text);
    const std::string marker = adapter.comment_prefix + std::string(kTag);
    const std::string extra = adapter.body_prefix();
    const auto wrap_parts = split_wrap(adapter);
    const std::size_t n_begin = template_lines(adapter.span_begin_template).size();
    const std::size_t n_end = template_lines(adapter.span_end_template).size();
    const std::size_t n_prelude = template_lines(adapter.prelude).size();

    struct Open {
        std::string name;
        bool wrap;
        std::size_t header_seen;
        std::size_t footer_seen;
        bool in_body;
    };
    std::vector<Open> stack;
    std::set<std::string> finished;
    std::size_t prelude_seen = 0;
    std::vector<std::string> out;

    auto corrupt = [&](std::size_t line, const std::string& why) {
        throw SentinelCorrupted(file_label, line, why);
    };
    auto body_prefix = [&]() {
        std::string p;
        for (const auto& o : stack)
            if (o.wrap && o.in_body)
                p += extra;
        return p;
    };

    for (std::size_t i = 0; i < in.lines.size(); ++i) {
        std::string_view line = in.lines[i];
        const std::size_t lineno = i + 1;
        std::string_view content = line;
        if (content.ends_with('\r'))
            content.remove_suffix(1);
        const auto pos = content.rfind(marker);
        if (pos == std::string_view::npos) {
            if (content.find("duet-span:") != std::string_view::npos &&
                content.find(adapter.comment_prefix + " duet-span") != std::string_view::npos)
                corrupt(lineno, "unrecognized sentinel");
            for (const auto& o : stack)
                if (o.wrap && !o.in_body)
                    corrupt(lineno, "code line inside the hooks of " + o.name);
            const auto prefix = body_prefix();
            if (!content.empty() && !prefix.empty()) {
                if (!line.starts_with(prefix))
                    corrupt(lineno, "wrapped line lost its indentation");
                line.remove_prefix(prefix.size());
            }
            out.emplace_back(line);
            continue;
        }

        const auto tag = content.substr(pos + marker.size());
        const auto at = tag.rfind('@');
        if (at == std::string_view::npos)
            corrupt(lineno, "sentinel without role");
        const std::string name(tag.substr(0, at));
        const std::string role(tag.substr(at + 1));

        if (role == "prelude") {
            if (!name.empty() || ++prelude_seen > n_prelude)
                corrupt(lineno, "unexpected prelude line");
            continue;
        }
        if (name.empty())
            corrupt(lineno, "sentinel without span name");

        if (role == "begin" || role == "open") {
            const bool wrap = role == "open";
            if (!stack.empty() && stack.back().name == name && stack.back().header_seen > 0 &&
                stack.back().wrap == wrap && !stack.back().in_body) {
                auto& top = stack.back();
                if (++top.header_seen > (wrap ? wrap_parts.open.size() : n_begin))
                    corrupt(lineno, "too many " + role + " lines for " + name);
            } else {
                if (finished.contains(name) ||
                    std::any_of(stack.begin(), stack.end(), [&](const Open& o) { return o.name == name; }))
                    corrupt(lineno, "span " + name + " opened twice");
                for (auto& o : stack)
                    if (o.wrap && !o.in_body)
                        corrupt(lineno, "span " + name + " opens inside the hooks of " + o.name);
                stack.push_back({name, wrap, 1, 0, false});
                if (stack.back().header_seen > (wrap ? wrap_parts.open.size() : n_begin))
                    corrupt(lineno, "too many " + role + " lines for " + name);
            }
        } else if (role == "end" || role == "close") {
            const bool wrap = role == "close";
            auto it = std::find_if(stack.begin(), stack.end(), [&](const Open& o) { return o.name == name; });
            if (it == stack.end() || it->wrap != wrap)
                corrupt(lineno, "unmatched " + role + " for " + name);
            const std::size_t expected_header = wrap ? wrap_parts.open.size() : n_begin;
            if (it->header_seen != expected_header)
                corrupt(lineno, "incomplete hooks for " + name);
            if (wrap && std::next(it) != stack.end())
                corrupt(lineno, "wrapped span " + name + " closes before an inner span");
            ++it->footer_seen;
            const std::size_t expected_footer = wrap ? wrap_parts.close.size() : n_end;
            if (it->footer_seen > expected_footer)
                corrupt(lineno, "too many " + role + " lines for " + name);
            // The footer of a wrap is emitted without its own body prefix.
            it->in_body = false;
            if (it->footer_seen == expected_footer) {
                finished.insert(name);
                stack.erase(it);
            }
        } else {
            corrupt(lineno, "unknown sentinel role " + role);
        }
        // Any header now complete switches its span into body mode.
        for (auto& o : stack)
            if (o.footer_seen == 0 && o.header_seen == (o.wrap ? wrap_parts.open.size() : n_begin))
                o.in_body = true;
    }

    if (!stack.empty())
        corrupt(in.lines.size(), "span " + stack.back().name + " is never closed");
    if (prelude_seen != 0 && prelude_seen != n_prelude)
        corrupt(in.lines.size(), "incomplete prelude");

    TextLines stripped{std::move(out), in.trailing_newline};
    return stripped.join();
}

fs::path strip_instrumentation(const fs::path& tree, const LanguageAdapter& adapter,
                               const std::optional<fs::path>& out) {
    fs::path root = tree;
    if (out) {
        fs::create_directories(*out);
        fs::copy(tree, *out, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
        root = *out;
    }
    const std::string marker = adapter.comment_prefix + std::string(kTag);
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file())
            continue;
        auto text = read_file(entry.path());
        if (text.find(marker) == std::string::npos)
            continue;
        auto stripped = strip_instrumentation_text(text, adapter, fs::relative(entry.path(), root).generic_string());
        write_file_atomic(entry.path(), stripped);
    }
    return root;
}

// ---------------------------------------------------------------------------
// Symmetric application

std::string_view to_string(SpanStatus status) noexcept {
    switch (status) {
    case SpanStatus::applied: return "applied";
    case SpanStatus::skipped_asymmetric: return "skipped_asymmetric";
    case SpanStatus::skipped_syntax: return "skipped_syntax";
    case SpanStatus::skipped_unmappable: return "skipped_unmappable";
    }
    return "unknown";
}

std::size_t InsertionReport::count(SpanStatus status) const {
    return static_cast<std::size_t>(
        std::count_if(spans.begin(), spans.end(), [&](const SpanReport& r) { return r.status == status; }));
}

bool syntax_check(const fs::path& file, const LanguageAdapter& adapter, std::string* output) {
    std::vector<std::string> argv;
    for (const auto& part : adapter.syntax_check_command)
        argv.push_back(part == "{file}" ? file.string() : part);
    auto res = run_command(argv, std::chrono::seconds(60), {"PYTHONDONTWRITEBYTECODE=1"});
    if (output)
        *output = res.output;
    return res.exit_code == 0;
}

namespace {

json range_json(LineRange r) { return json::array({r.start, r.end}); }

struct FileJob {
    std::string path;
    std::vector<const MarkerSpan*> spans;
    std::vector<SpanReport> reports;
    std::map<std::string, LineRange> final_a, final_b;
};

void process_file(FileJob& job, const SymmetricRun& run, const fs::path& dir_a, const fs::path& dir_b) {
    auto skip = [&](const MarkerSpan& s, SpanStatus st, std::string why, std::optional<LineRange> old = {}) {
        job.reports.push_back({s.name, job.path, st, std::move(why), s.new_range, old});
    };
    const FileChange* change = run.changes ? run.changes->find(job.path) : nullptr;
    const fs::path file_a = dir_a / job.path;
    const fs::path file_b = dir_b / job.path;
    if (!fs::is_regular_file(file_b)) {
        for (auto* s : job.spans)
            skip(*s, SpanStatus::skipped_asymmetric, "file missing in B");
        return;
    }
    if (!fs::is_regular_file(file_a)) {
        for (auto* s : job.spans)
            skip(*s, SpanStatus::skipped_unmappable, "file missing in A");
        return;
    }
    const auto text_a = read_file(file_a);
    const auto text_b = read_file(file_b);
    const auto lines_a = TextLines::split(text_a).lines.size();
    const auto lines_b = TextLines::split(text_b).lines.size();

    struct Candidate {
        const MarkerSpan* span;
        LineRange old_range;
        bool wrap;
    };
    std::vector<Candidate> cands;
    for (auto* s : job.spans) {
        if (!check_range(s->new_range, lines_b)) {
            skip(*s, SpanStatus::skipped_asymmetric, "new_range outside B");
            continue;
        }
        std::optional<LineRange> old;
        if (s->old_range)
            old = s->old_range;
        else if (change)
            old = map_to_old_coordinates(*s, *change);
        else
            old = s->new_range; // file unchanged: coordinates coincide
        if (!old) {
            skip(*s, SpanStatus::skipped_unmappable, "span boundary lies in code added by the change");
            continue;
        }
        if (!check_range(*old, lines_a) && !check_empty_range(*old, lines_a)) {
            skip(*s, SpanStatus::skipped_unmappable, "old_range outside A", old);
            continue;
        }
        const bool wrap = s->handles_exit_points || needs_exit_wrap(text_b, s->new_range, run.adapter) ||
                          needs_exit_wrap(text_a, *old, run.adapter);
        cands.push_back({s, *old, wrap});
    }

    MultiInsertResult res_a, res_b;
    for (;;) {
        std::vector<SpanInsertion> ins_a, ins_b;
        for (const auto& c : cands) {
            ins_a.push_back({c.span->name, c.old_range, c.span->attributes, c.wrap});
            ins_b.push_back({c.span->name, c.span->new_range, c.span->attributes, c.wrap});
        }
        res_a = insert_spans(text_a, ins_a, run.adapter);
        res_b = insert_spans(text_b, ins_b, run.adapter);
        std::map<std::string, std::string> failed;
        for (const auto& f : res_a.failed)
            failed.emplace(f.name, "A: " + f.reason);
        for (const auto& f : res_b.failed)
            failed.emplace(f.name, "B: " + f.reason);
        if (failed.empty())
            break;
        std::erase_if(cands, [&](const Candidate& c) {
            auto it = failed.find(c.span->name);
            if (it == failed.end())
                return false;
            skip(*c.span, SpanStatus::skipped_asymmetric, it->second, c.old_range);
            return true;
        });
    }
    if (cands.empty())
        return;

    write_file_atomic(file_a, res_a.text);
    write_file_atomic(file_b, res_b.text);
    std::string out_a, out_b;
    const bool ok_a = syntax_check(file_a, run.adapter, &out_a);
    const bool ok_b = syntax_check(file_b, run.adapter, &out_b);
    if (!ok_a || !ok_b) {
        write_file_atomic(file_a, text_a);
        write_file_atomic(file_b, text_b);
        std::string why = !ok_a ? "A: " + out_a : "B: " + out_b;
        if (why.size() > 500)
            why.resize(500);
        while (!why.empty() && (why.back() == '\n' || why.back() == ' '))
            why.pop_back();
        for (const auto& c : cands)
            skip(*c.span, SpanStatus::skipped_syntax, why, c.old_range);
        return;
    }
    for (const auto& c : cands) {
        job.reports.push_back({c.span->name, job.path, SpanStatus::applied, "", c.span->new_range, c.old_range});
        job.final_a[c.span->name] = res_a.final_ranges.at(c.span->name);
        job.final_b[c.span->name] = res_b.final_ranges.at(c.span->name);
    }
}

} // namespace

SymmetricResult apply_plan_symmetric(const SymmetricRun& run) {
    if (run.run_id.empty() || run.run_id.find('/') != std::string::npos)
        throw ConfigError("invalid run id: " + run.run_id);
    SymmetricResult result;
    result.run_dir = run.out_root / run.run_id;
    const fs::path dir_a = result.run_dir / "A";
    const fs::path dir_b = result.run_dir / "B";
    fs::remove_all(result.run_dir);
    fs::create_directories(result.run_dir);
    fs::copy(run.tree_a, dir_a, fs::copy_options::recursive | fs::copy_options::copy_symlinks);
    fs::copy(run.tree_b, dir_b, fs::copy_options::recursive | fs::copy_options::copy_symlinks);

    std::vector<FileJob> jobs;
    std::map<std::string, std::size_t> job_index;
    std::set<std::string> seen_names;
    std::vector<SpanReport> early;
    for (const auto& plan : run.plans) {
        for (const auto& span : plan.spans) {
            const std::string& path = span.path.empty() ? plan.path : span.path;
            if (!seen_names.insert(span.name).second) {
                early.push_back({span.name, path, SpanStatus::skipped_asymmetric, "duplicate span name",
                                 span.new_range, std::nullopt});
                continue;
            }
            auto [it, inserted] = job_index.emplace(path, jobs.size());
            if (inserted)
                jobs.push_back(FileJob{path, {}, {}, {}, {}});
            jobs[it->second].spans.push_back(&span);
        }
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        const std::size_t workers = std::clamp<std::size_t>(run.workers, 1, std::max<std::size_t>(1, jobs.size()));
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < jobs.size(); i = next++) {
                    try {
                        process_file(jobs[i], run, dir_a, dir_b);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure)
                            failure = std::current_exception();
                    }
                }
            });
        }
    }
    if (failure)
        std::rethrow_exception(failure);

    result.a = {dir_a, VersionTag::A, {}, {}};
    result.b = {dir_b, VersionTag::B, {}, {}};
    result.report.spans = std::move(early);
    json applied = json::array();
    json skipped = json::array();
    for (auto& job : jobs) {
        for (auto& r : job.reports) {
            if (r.status == SpanStatus::applied) {
                result.a.applied_spans.emplace_back(r.name, job.final_a.at(r.name));
                result.b.applied_spans.emplace_back(r.name, job.final_b.at(r.name));
                applied.push_back({{"name", r.name},
                                   {"path", r.path},
                                   {"new_range", range_json(r.new_range)},
                                   {"old_range", range_json(*r.old_range)},
                                   {"instrumented_range_a", range_json(job.final_a.at(r.name))},
                                   {"instrumented_range_b", range_json(job.final_b.at(r.name))}});
            }
            result.report.spans.push_back(std::move(r));
        }
    }
    for (const auto& r : result.report.spans) {
        if (r.status == SpanStatus::applied)
            continue;
        result.a.skipped.emplace_back(r.name, std::string(to_string(r.status)));
        result.b.skipped.emplace_back(r.name, std::string(to_string(r.status)));
        skipped.push_back({{"name", r.name}, {"path", r.path}, {"status", to_string(r.status)}, {"reason", r.reason}});
    }

    json plans = json::array();
    for (const auto& p : run.plans)
        plans.push_back(plan_to_json(p));
    result.report.metadata = {{"run_id", run.run_id},
                              {"created_at", utc_timestamp()},
                              {"adapter", run.adapter.to_json()},
                              {"plans", plans},
                              {"applied", applied},
                              {"skipped", skipped},
                              {"tool_version", kToolVersion}};
    write_file_atomic(result.run_dir / "metadata.json", result.report.metadata.dump(2) + "\n");
    return result;
}

} // namespace duet
