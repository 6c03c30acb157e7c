#include "duet/changeset.hpp"
#include "duet/error.hpp"

#include "generators.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

using namespace duet;
using duet::testing::fixtures_dir;
using nlohmann::json;

namespace {

std::vector<std::filesystem::path> corpus() {
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(fixtures_dir() / "diffs"))
        if (e.path().extension() == ".diff")
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

ChangeSet parse_file(const std::filesystem::path& p) { return parse_unified_diff(read_file(p), "A", "B"); }

} // namespace

TEST_CASE("every corpus diff survives parse, render, parse") {
    const auto files = corpus();
    REQUIRE(files.size() >= 10);
    for (const auto& f : files) {
        CAPTURE(f.filename().string());
        auto first = parse_file(f);
        REQUIRE_FALSE(first.file_changes.empty());
        auto second = parse_unified_diff(render_git_like(first), "A", "B");
        CHECK(first == second);
    }
}

TEST_CASE("fingerprints match the frozen reference values") {
    // tests/oracles/fingerprint_oracle.py, independent parser + hashlib
    std::ifstream in(fixtures_dir() / "diffs" / "fingerprints.txt");
    std::string file, path, digest;
    std::map<std::string, ChangeSet> parsed;
    int rows = 0;
    while (in >> file >> path >> digest) {
        CAPTURE(file);
        CAPTURE(path);
        auto it = parsed.find(file);
        if (it == parsed.end())
            it = parsed.emplace(file, parse_file(fixtures_dir() / "diffs" / file)).first;
        const auto* fc = it->second.find(path);
        REQUIRE(fc != nullptr);
        CHECK(fc->fingerprint == digest);
        CHECK(fingerprint(*fc) == digest);
        ++rows;
    }
    CHECK(rows == 15);
}

TEST_CASE("pure addition keeps counts and target lines") {
    auto cs = parse_file(fixtures_dir() / "diffs" / "02-pure-addition.diff");
    REQUIRE(cs.file_changes.size() == 1);
    const auto& fc = cs.file_changes[0];
    CHECK(fc.path == "src/module.py");
    REQUIRE(fc.hunks.size() == 1);
    const auto& h = fc.hunks[0];
    CHECK(h.old_start == 10);
    CHECK(h.old_count == 6);
    CHECK(h.new_start == 10);
    CHECK(h.new_count == 9);
    auto added = h.added_lines();
    REQUIRE(added.size() == 3);
    CHECK(added[0] == std::pair<int, std::string>{13, "added a"});
    CHECK(added[2] == std::pair<int, std::string>{15, "added c"});
    CHECK(h.changed_region() == LineRange{13, 15});
}

TEST_CASE("pure deletion collapses to the line now at the removal point") {
    auto cs = parse_file(fixtures_dir() / "diffs" / "03-pure-deletion.diff");
    const auto& h = cs.file_changes.at(0).hunks.at(0);
    CHECK(h.old_count == 10);
    CHECK(h.new_count == 6);
    // lines 21-24 removed; old line 25 is now line 21
    CHECK(h.changed_region() == LineRange{21, 21});
}

TEST_CASE("no-newline marker is attached to the preceding line") {
    auto cs = parse_file(fixtures_dir() / "diffs" / "05-no-newline-at-end-new.diff");
    const auto& lines = cs.file_changes.at(0).hunks.at(0).lines;
    REQUIRE_FALSE(lines.empty());
    CHECK(lines.back().tag == LineTag::add);
    CHECK(lines.back().no_newline);
    CHECK_FALSE(lines[lines.size() - 2].no_newline);
    CHECK(render_git_like(cs.file_changes[0]).find("\\ No newline at end of file\n") != std::string::npos);
}

TEST_CASE("created, deleted and modified files in one diff, ordered by path") {
    auto cs = parse_file(fixtures_dir() / "diffs" / "13-multi-file.diff");
    REQUIRE(cs.file_changes.size() == 3);
    CHECK(cs.file_changes[0].path == "pkg/fresh.py");
    CHECK(cs.file_changes[1].path == "pkg/gone.py");
    CHECK(cs.file_changes[2].path == "pkg/keep.py");
    CHECK(cs.file_changes[0].hunks[0].old_count == 0);
    CHECK(cs.file_changes[1].hunks[0].new_count == 0);
    CHECK(cs.base_version_id == "A");
    CHECK(cs.target_version_id == "B");
}

TEST_CASE("empty file gaining content") {
    auto cs = parse_file(fixtures_dir() / "diffs" / "11-empty-to-content.diff");
    const auto& h = cs.file_changes.at(0).hunks.at(0);
    CHECK(h.old_start == 0);
    CHECK(h.old_count == 0);
    CHECK(h.new_start == 1);
    CHECK(h.new_count == 2);
    CHECK(h.changed_region() == LineRange{1, 2});
}

TEST_CASE("malformed diffs report the offending line") {
    SUBCASE("truncated hunk") {
        const std::string text = "--- a/x\n+++ b/x\n@@ -1,3 +1,3 @@\n a\n-b\n";
        try {
            parse_unified_diff(text);
            FAIL("expected MalformedDiff");
        } catch (const MalformedDiff& e) {
            CHECK(e.line() == 3);
        }
    }
    SUBCASE("header undercounts") {
        const std::string text = "--- a/x\n+++ b/x\n@@ -1 +1 @@\n-a\n+b\n+c\n";
        try {
            parse_unified_diff(text);
            FAIL("expected MalformedDiff");
        } catch (const MalformedDiff& e) {
            CHECK(e.line() == 6);
        }
    }
    SUBCASE("overlapping hunks") {
        const std::string text = "--- a/x\n+++ b/x\n@@ -1,2 +1,2 @@\n a\n-b\n+c\n@@ -2,1 +2,1 @@\n-b\n+d\n";
        CHECK_THROWS_AS(parse_unified_diff(text), MalformedDiff);
    }
    SUBCASE("bad hunk header") {
        CHECK_THROWS_AS(parse_unified_diff("--- a/x\n+++ b/x\n@@ -a +1 @@\n"), MalformedDiff);
    }
    SUBCASE("hunk before any file header") {
        CHECK_THROWS_AS(parse_unified_diff("@@ -1 +1 @@\n-a\n+b\n"), MalformedDiff);
    }
    SUBCASE("binary change") {
        CHECK_THROWS_AS(parse_unified_diff("diff --git a/x b/x\nBinary files a/x and b/x differ\n"), MalformedDiff);
    }
}

TEST_CASE("random file-pair diffs from diff(1) round-trip") {
    duet::testing::TempDir tmp;
    int non_empty = 0;
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        CAPTURE(seed);
        auto [a, b] = duet::testing::random_file_pair(seed);
        auto text = duet::testing::system_diff(a, b, tmp.path() / std::to_string(seed));
        auto cs = parse_unified_diff(text);
        CHECK(cs == parse_unified_diff(render_git_like(cs)));
        non_empty += cs.file_changes.empty() ? 0 : 1;
    }
    CHECK(non_empty > 30);
}

TEST_CASE("JSON change documents") {
    const std::string diff = "--- a/svc/x.py\n+++ b/svc/x.py\n@@ -14,3 +14,4 @@\n a\n+b\n c\n d\n";
    SUBCASE("relevant change with an ideal span") {
        json doc = {{"base", "v1"},
                    {"target", "v2"},
                    {"changes",
                     {{{"id", "c1"},
                       {"path", "svc/x.py"},
                       {"diff", diff},
                       {"relevant", true},
                       {"ideal_span", {{"start", 14}, {"end", 22}}},
                       {"note", ""}}}}};
        auto labeled = parse_json_changes(doc);
        CHECK(labeled.changes.base_version_id == "v1");
        CHECK(labeled.changes.target_version_id == "v2");
        REQUIRE(labeled.ground_truth.size() == 1);
        CHECK(labeled.ground_truth[0].relevant);
        CHECK(labeled.ground_truth[0].ideal_span == LineRange{14, 22});
        CHECK(labeled.ground_truth[0].regions == std::vector<LineRange>{{15, 15}});
        REQUIRE(labeled.changes.file_changes.size() == 1);
        CHECK(labeled.changes.file_changes[0].fingerprint.size() == 64);
    }
    SUBCASE("comment-only neutral change without ideal span") {
        json doc = {{"base", "v1"},
                    {"target", "v2"},
                    {"changes",
                     {{{"id", "n1"},
                       {"path", "svc/x.py"},
                       {"diff", "--- a/svc/x.py\n+++ b/svc/x.py\n@@ -1 +1 @@\n-# old\n+# new\n"},
                       {"relevant", false},
                       {"ideal_span", nullptr},
                       {"note", "comment"}}}}};
        auto labeled = parse_json_changes(doc);
        CHECK_FALSE(labeled.ground_truth.at(0).relevant);
        CHECK_FALSE(labeled.ground_truth.at(0).ideal_span.has_value());
    }
    SUBCASE("relevant without ideal span is rejected with its location") {
        json doc = {{"base", "v1"},
                    {"target", "v2"},
                    {"changes",
                     {{{"id", "c1"}, {"path", "svc/x.py"}, {"diff", diff}, {"relevant", true}, {"ideal_span", nullptr},
                       {"note", ""}}}}};
        try {
            parse_json_changes(doc);
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            CHECK(e.path().find("changes[0]") == 0);
        }
    }
    SUBCASE("unknown key") {
        json doc = {{"base", "v1"}, {"target", "v2"}, {"changes", json::array()}, {"extra", 1}};
        CHECK_THROWS_AS(parse_json_changes(doc), SchemaError);
    }
    SUBCASE("two changes on one path merge into one file change") {
        json doc = {{"base", "v1"},
                    {"target", "v2"},
                    {"changes",
                     {{{"id", "c1"}, {"path", "x.py"}, {"diff", "--- a/x.py\n+++ b/x.py\n@@ -2 +2 @@\n-a\n+b\n"},
                       {"relevant", false}, {"ideal_span", nullptr}, {"note", ""}},
                      {{"id", "c2"}, {"path", "x.py"}, {"diff", "--- a/x.py\n+++ b/x.py\n@@ -9 +9 @@\n-c\n+d\n"},
                       {"relevant", false}, {"ideal_span", nullptr}, {"note", ""}}}}};
        auto labeled = parse_json_changes(doc);
        REQUIRE(labeled.changes.file_changes.size() == 1);
        CHECK(labeled.changes.file_changes[0].hunks.size() == 2);
        CHECK(labeled.ground_truth.size() == 2);
    }
}

TEST_CASE("stage files round-trip") {
    auto cs = parse_file(fixtures_dir() / "diffs" / "13-multi-file.diff");
    CHECK(changeset_from_json(changeset_to_json(cs)) == cs);
    std::vector<GroundTruthChange> gt{{"x.py", "c1", true, LineRange{3, 9}, "n", {{4, 4}}},
                                      {"y.py", "c2", false, std::nullopt, "", {{1, 2}, {7, 7}}}};
    CHECK(ground_truth_from_json(ground_truth_to_json(gt)) == gt);
}
