#include "duet/changeset.hpp"
#include "duet/error.hpp"
#include "duet/instrumenter.hpp"
#include "duet/process.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace duet;
using duet::testing::TempDir;
using nlohmann::json;

namespace {

const std::string kPrelude =
    "from duet_recorder import span_begin as _duet_span_begin, span_end as _duet_span_end  # duet-span:@prelude\n";

const std::string kSource = "import os\n"
                            "\n"
                            "\n"
                            "def f(xs):\n"
                            "    total = 0\n"
                            "    for x in xs:\n"
                            "        total += x\n"
                            "    return total\n";

bool python_runs(const std::filesystem::path& file, const std::string& call, std::string* out = nullptr) {
    auto r = run_command({"python3", "-c",
                          "import runpy,sys; sys.path.insert(0, sys.argv[1]); ns = runpy.run_path(sys.argv[2]); "
                          "print(" + call + ")",
                          (duet::testing::fixtures_dir() / "python").string(), file.string()},
                         std::chrono::seconds(60));
    if (out)
        *out = r.output;
    return r.exit_code == 0;
}

FileChange change_of(const std::string& diff) { return parse_unified_diff(diff).file_changes.at(0); }

MarkerSpan span_at(int start, int end) {
    MarkerSpan s;
    s.name = "s";
    s.path = "x";
    s.new_range = {start, end};
    return s;
}

} // namespace

TEST_CASE("plain span gets begin and end hooks at the block indent") {
    const auto adapter = LanguageAdapter::python();
    auto out = insert_span(kSource, "f.loop", {6, 7}, adapter, {{"category", "loop"}});
    const std::string expected =
        kPrelude + "import os\n"
                   "\n"
                   "\n"
                   "def f(xs):\n"
                   "    total = 0\n"
                   "    _duet_s_f_loop = _duet_span_begin(\"f.loop\", {\"category\":\"loop\"})  # duet-span:f.loop@begin\n"
                   "    for x in xs:\n"
                   "        total += x\n"
                   "    _duet_span_end(_duet_s_f_loop)  # duet-span:f.loop@end\n"
                   "    return total\n";
    CHECK(out == expected);
    CHECK(strip_instrumentation_text(out, adapter) == kSource);

    auto multi = insert_spans(kSource, {{"f.loop", {6, 7}, {}, false}}, adapter);
    CHECK(multi.failed.empty());
    CHECK(multi.final_ranges.at("f.loop") == LineRange{7, 10});
}

TEST_CASE("a block with an exit point is wrapped so the span always closes") {
    const auto adapter = LanguageAdapter::python();
    CHECK(needs_exit_wrap(kSource, {5, 8}, adapter));
    CHECK_FALSE(needs_exit_wrap(kSource, {5, 7}, adapter));
    auto out = insert_span(kSource, "f.body", {5, 8}, adapter);
    const std::string expected = kPrelude + "import os\n"
                                            "\n"
                                            "\n"
                                            "def f(xs):\n"
                                            "    _duet_s_f_body = _duet_span_begin(\"f.body\", {})  # duet-span:f.body@open\n"
                                            "    try:  # duet-span:f.body@open\n"
                                            "        total = 0\n"
                                            "        for x in xs:\n"
                                            "            total += x\n"
                                            "        return total\n"
                                            "    finally:  # duet-span:f.body@close\n"
                                            "        _duet_span_end(_duet_s_f_body)  # duet-span:f.body@close\n";
    CHECK(out == expected);
    CHECK(strip_instrumentation_text(out, adapter) == kSource);

    TempDir dir;
    write_file_atomic(dir / "m.py", out);
    std::string output;
    CHECK(python_runs(dir / "m.py", "ns['f']([1, 2, 3])", &output));
    CHECK(output == "6\n");
}

TEST_CASE("keywords inside strings and comments do not force a wrap") {
    const auto adapter = LanguageAdapter::python();
    const std::string text = "def g():\n    msg = 'return early'  # break here\n    print(msg)\n";
    CHECK_FALSE(needs_exit_wrap(text, {2, 3}, adapter));
    CHECK_FALSE(needs_exit_wrap("returned = 1\n", {1, 1}, adapter));
}

TEST_CASE("nested spans and the prelude after shebang, coding and future imports") {
    const auto adapter = LanguageAdapter::python();
    const std::string text = "#!/usr/bin/env python3\n"
                             "# -*- coding: utf-8 -*-\n"
                             "\"\"\"Module doc.\"\"\"\n"
                             "from __future__ import annotations\n"
                             "\n"
                             "def h(n):\n"
                             "    acc = []\n"
                             "    for i in range(n):\n"
                             "        acc.append(i)\n"
                             "    return acc\n";
    auto res = insert_spans(text, {{"h.all", {7, 10}, {}, false}, {"h.loop", {8, 9}, {}, false}}, adapter);
    REQUIRE(res.failed.empty());
    const auto lines = TextLines::split(res.text).lines;
    CHECK(lines[3] == "from __future__ import annotations");
    CHECK(lines[4] == kPrelude.substr(0, kPrelude.size() - 1));
    CHECK(strip_instrumentation_text(res.text, adapter) == text);

    TempDir dir;
    write_file_atomic(dir / "m.py", res.text);
    CHECK(syntax_check(dir / "m.py", adapter));
    std::string output;
    CHECK(python_runs(dir / "m.py", "ns['h'](3)", &output));
    CHECK(output == "[0, 1, 2]\n");
    // the wrapped outer span opens first and the plain inner span sits inside its try body
    CHECK(res.final_ranges.at("h.all").start < res.final_ranges.at("h.loop").start);
    CHECK(res.final_ranges.at("h.loop").end < res.final_ranges.at("h.all").end);
}

TEST_CASE("structurally impossible spans are reported, the rest inserted") {
    const auto adapter = LanguageAdapter::python();
    auto res = insert_spans(kSource,
                            {{"ok", {6, 7}, {}, false},
                             {"cross", {5, 8}, {}, false},  // wrapped (return) and crossing nothing: fine
                             {"bad", {7, 8}, {}, false},    // wrapped, crosses "ok" partially
                             {"ok", {5, 5}, {}, false},     // duplicate name
                             {"far", {9, 12}, {}, false}},  // out of bounds
                            adapter);
    std::map<std::string, std::string> failed;
    for (const auto& f : res.failed)
        failed[f.name + "|" + f.reason] = f.reason;
    CHECK(res.failed.size() == 3);
    CHECK(failed.count("bad|overlaps a wrapped span without nesting") == 1);
    CHECK(failed.count("ok|duplicate span name") == 1);
    CHECK(failed.count("far|range out of bounds") == 1);
    CHECK(res.final_ranges.count("ok") == 1);
    CHECK(res.final_ranges.count("cross") == 1);
    CHECK(strip_instrumentation_text(res.text, adapter) == kSource);
    CHECK_THROWS_AS(insert_span(kSource, "x", {0, 2}, adapter), RangeOutOfBounds);
}

TEST_CASE("hooks never land inside a triple-quoted string") {
    const auto adapter = LanguageAdapter::python();
    const std::string text = "def d():\n"
                             "    s = \"\"\"\n"
                             "first\n"
                             "\"\"\"\n"
                             "    return s\n";
    auto starts_inside = insert_spans(text, {{"a", {3, 5}, {}, false}}, adapter);
    REQUIRE(starts_inside.failed.size() == 1);
    auto ends_inside = insert_spans(text, {{"b", {2, 2}, {}, false}}, adapter);
    REQUIRE(ends_inside.failed.size() == 1);
    auto around = insert_spans(text, {{"c", {2, 5}, {}, false}}, adapter);
    REQUIRE(around.failed.size() == 1);
    CHECK(around.failed[0].reason == "exit wrap would alter a multi-line string");
    auto plain = insert_spans(text, {{"e", {2, 4}, {}, false}}, adapter);
    CHECK(plain.failed.empty());
}

TEST_CASE("CRLF files and a missing final newline survive the round trip") {
    const auto adapter = LanguageAdapter::python();
    const std::string crlf = "def f():\r\n    x = 1\r\n    return x\r\n";
    auto out = insert_span(crlf, "c", {2, 3}, adapter);
    for (const auto& l : TextLines::split(out).lines)
        CHECK(l.ends_with('\r'));
    CHECK(strip_instrumentation_text(out, adapter) == crlf);
    const std::string bare = "x = 1\ny = 2";
    CHECK(strip_instrumentation_text(insert_span(bare, "b", {1, 2}, adapter), adapter) == bare);
}

TEST_CASE("attribute values are encoded, never expanded") {
    const auto adapter = LanguageAdapter::python();
    auto out = insert_span(kSource, "f.loop", {6, 7}, adapter, {{"note", "{name} \"quoted\" caf\xc3\xa9"}});
    CHECK(out.find(R"({"note":"{name} \"quoted\" caf\u00e9"})") != std::string::npos);
    CHECK(strip_instrumentation_text(out, adapter) == kSource);
}

TEST_CASE("tampered instrumentation is reported with its location") {
    const auto adapter = LanguageAdapter::python();
    auto out = insert_span(kSource, "f.body", {5, 8}, adapter);
    auto lines = TextLines::split(out).lines;

    SUBCASE("missing close") {
        auto broken = lines;
        broken.pop_back();
        try {
            strip_instrumentation_text(TextLines{broken, true}.join(), adapter, "m.py");
            FAIL("expected SentinelCorrupted");
        } catch (const SentinelCorrupted& e) {
            CHECK(e.file() == "m.py");
        }
    }
    SUBCASE("dedented body line") {
        auto broken = lines;
        broken[7] = "  total = 0";
        try {
            strip_instrumentation_text(TextLines{broken, true}.join(), adapter, "m.py");
            FAIL("expected SentinelCorrupted");
        } catch (const SentinelCorrupted& e) {
            CHECK(e.line() == 8);
        }
    }
    SUBCASE("unknown role") {
        auto broken = lines;
        broken[5] = "    x = 1  # duet-span:f.body@middle";
        CHECK_THROWS_AS(strip_instrumentation_text(TextLines{broken, true}.join(), adapter), SentinelCorrupted);
    }
    SUBCASE("end without begin") {
        CHECK_THROWS_AS(strip_instrumentation_text("x = 1\n_duet_span_end(v)  # duet-span:z@end\n", adapter),
                        SentinelCorrupted);
    }
}

TEST_CASE("mapping target lines back to base lines") {
    // old: 3 c3, 4 d4, 5 e5, 6 g6; new: 3 c3, 4 D4, 5 E, 6 e5, 7 F, 8 g6
    const auto fc = change_of("--- a/x\n+++ b/x\n@@ -3,4 +3,6 @@\n c3\n-d4\n+D4\n+E\n e5\n+F\n g6\n");
    CHECK(map_to_old_coordinates(span_at(1, 2), fc) == LineRange{1, 2});
    CHECK(map_to_old_coordinates(span_at(3, 3), fc) == LineRange{3, 3});
    CHECK(map_to_old_coordinates(span_at(4, 5), fc) == LineRange{4, 4});
    CHECK(map_to_old_coordinates(span_at(5, 7), fc) == LineRange{4, 5});
    CHECK(map_to_old_coordinates(span_at(6, 8), fc) == LineRange{5, 6});
    CHECK(map_to_old_coordinates(span_at(7, 7), fc) == LineRange{6, 5}); // only added lines: empty before g6
    CHECK(map_to_old_coordinates(span_at(5, 6), fc) == LineRange{4, 5});
    CHECK(map_to_old_coordinates(span_at(9, 10), fc) == LineRange{7, 8});

    const auto added = change_of(read_file(duet::testing::fixtures_dir() / "diffs" / "02-pure-addition.diff"));
    CHECK(map_to_old_coordinates(span_at(12, 15), added) == LineRange{12, 12});
    CHECK(map_to_old_coordinates(span_at(13, 18), added) == LineRange{13, 15});
    CHECK_FALSE(map_to_old_coordinates(span_at(14, 16), added).has_value());
    CHECK(map_to_old_coordinates(span_at(13, 15), added) == LineRange{13, 12});

    auto explicit_old = span_at(14, 16);
    explicit_old.old_range = LineRange{2, 3};
    CHECK(map_to_old_coordinates(explicit_old, added) == LineRange{2, 3});
}

TEST_CASE("an empty range places both hooks at the insertion point") {
    const auto adapter = LanguageAdapter::python();
    const std::string text = "def g(xs, flag):\n"
                             "    if flag:\n"
                             "        xs.append(1)\n"
                             "    else:\n"
                             "        xs.append(2)\n"
                             "    return xs";
    auto res = insert_spans(text,
                            {{"before_if", {2, 1}, {}, true},
                             {"before_else", {4, 3}, {}, false},
                             {"at_end", {7, 6}, {}, false},
                             {"whole", {2, 6}, {}, false}},
                            adapter);
    REQUIRE(res.failed.empty());
    const auto lines = TextLines::split(res.text).lines;
    CHECK(lines[2] == "    _duet_s_before_if = _duet_span_begin(\"before_if\", {})  # duet-span:before_if@begin");
    CHECK(lines[3] == "    _duet_span_end(_duet_s_before_if)  # duet-span:before_if@end");
    // before `else:` the hooks stay in the preceding block
    CHECK(res.text.find("\n            _duet_s_before_else = ") != std::string::npos);
    CHECK(res.final_ranges.at("at_end").end == static_cast<int>(lines.size()));
    CHECK(res.final_ranges.at("before_if").end == res.final_ranges.at("before_if").start + 1);
    CHECK_FALSE(res.text.ends_with("\n"));
    CHECK(strip_instrumentation_text(res.text, adapter) == text);

    TempDir dir;
    write_file_atomic(dir / "m.py", res.text);
    std::string output;
    CHECK(python_runs(dir / "m.py", "ns['g']([], False)", &output));
    CHECK(output == "[2]\n");

    auto out_of_range = insert_spans(text, {{"far", {8, 7}, {}, false}}, adapter);
    CHECK(out_of_range.failed.size() == 1);
}

TEST_CASE("adapter files load and are validated") {
    auto py = LanguageAdapter::load(duet::testing::adapters_dir() / "python.json");
    CHECK(py.to_json() == LanguageAdapter::python().to_json());
    CHECK(py.body_prefix() == "    ");
    auto js = LanguageAdapter::load(duet::testing::adapters_dir() / "javascript.json");
    CHECK(js.comment_prefix == "//");
    CHECK(js.body_prefix().empty());

    auto doc = py.to_json();
    doc["exit_wrap_template"] = "{indent}try:\n{indent}    {body}\n{indent}    {body}";
    CHECK_THROWS_AS(LanguageAdapter::from_json(doc), ConfigError);
    doc = py.to_json();
    doc["exit_wrap_template"] = "{indent}try:\n    {body}{indent}";
    CHECK_THROWS_AS(LanguageAdapter::from_json(doc), ConfigError);
    doc = py.to_json();
    doc.erase("comment_prefix");
    CHECK_THROWS_AS(LanguageAdapter::from_json(doc), ConfigError);

    auto missing = py;
    missing.syntax_check_command = {"duet-no-such-checker", "{file}"};
    TempDir dir;
    write_file_atomic(dir / "m.py", kSource);
    CHECK_THROWS_AS(syntax_check(dir / "m.py", missing), ToolMissing);
}

TEST_CASE("javascript wraps returns in try/finally and passes node --check") {
    auto js = LanguageAdapter::load(duet::testing::adapters_dir() / "javascript.json");
    const std::string text = "'use strict';\n"
                             "\n"
                             "function handle(req) {\n"
                             "  const items = req.items || [];\n"
                             "  return items.map((x) => x * 2);\n"
                             "}\n"
                             "\n"
                             "module.exports = { handle };\n";
    auto res = insert_spans(text, {{"handle.body", {4, 5}, {}, false}}, js);
    REQUIRE(res.failed.empty());
    const auto lines = TextLines::split(res.text).lines;
    CHECK(lines[0] == "'use strict';");
    CHECK(lines[1].starts_with("const { spanBegin: __duetSpanBegin"));
    CHECK(res.text.find("  try {  // duet-span:handle.body@open\n") != std::string::npos);
    CHECK(res.text.find("  } finally {  // duet-span:handle.body@close\n") != std::string::npos);
    CHECK(strip_instrumentation_text(res.text, js) == text);
    TempDir dir;
    write_file_atomic(dir / "h.js", res.text);
    std::string out;
    CHECK_MESSAGE(syntax_check(dir / "h.js", js, &out), out);
}

TEST_CASE("symmetric application on a fixture tree writes metadata and strips back") {
    const auto root = duet::testing::fixtures_dir() / "trees" / "py-return-wrap";
    auto changes = parse_unified_diff(read_file(root / "change.diff"), "A", "B");
    const auto& fc = changes.file_changes.at(0);
    json raw = {{"spans",
                 {{{"name", "search.body"},
                   {"path", fc.path},
                   {"new_range", {{"start", 9}, {"end", 13}}},
                   {"old_range", nullptr},
                   {"attributes", json::object()},
                   {"handles_exit_points", true}}}}};
    SymmetricRun run;
    run.tree_a = root / "A";
    run.tree_b = root / "B";
    run.changes = &changes;
    run.plans = {validate_plan(raw, fc, std::nullopt, "test", Sensitivity::medium)};
    run.adapter = LanguageAdapter::python();
    TempDir out;
    run.out_root = out.path();
    run.run_id = "r1";
    auto res = apply_plan_symmetric(run);
    REQUIRE(res.report.count(SpanStatus::applied) == 1);
    REQUIRE(res.a.applied_spans.size() == 1);
    CHECK(res.report.spans[0].old_range == LineRange{9, 12});

    auto meta = json::parse(read_file(out / "r1/metadata.json"));
    for (const char* key : {"run_id", "created_at", "adapter", "plans", "applied", "skipped", "tool_version"})
        CHECK(meta.contains(key));
    CHECK(meta["adapter"]["id"] == "python");
    CHECK(meta["plans"][0]["fingerprint"] == fc.fingerprint);
    CHECK(meta["applied"][0]["old_range"] == json::array({9, 12}));

    strip_instrumentation(res.a.root_dir, run.adapter);
    strip_instrumentation(res.b.root_dir, run.adapter);
    std::string why;
    CHECK_MESSAGE(duet::testing::same_tree(res.a.root_dir, root / "A", &why), why);
    CHECK_MESSAGE(duet::testing::same_tree(res.b.root_dir, root / "B", &why), why);

    CHECK_THROWS_AS(
        [&] {
            auto bad = run;
            bad.run_id = "../escape";
            apply_plan_symmetric(bad);
        }(),
        ConfigError);
}
