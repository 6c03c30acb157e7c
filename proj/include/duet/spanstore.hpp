#pragma once

#include "duet/util.hpp"

#include <json.hpp>

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace duet {

/// One timed span, serialized as a single NDJSON line.
struct SpanRecord {
    std::string trace_id;
    std::string span_id;
    std::optional<std::string> parent_span_id;
    std::string name;
    std::int64_t start_unix_ns{};
    std::int64_t end_unix_ns{};
    std::map<std::string, std::string> attributes;
    std::int64_t request_seq{};
    VersionTag version_tag{VersionTag::A};

    std::int64_t duration_ns() const noexcept { return end_unix_ns - start_unix_ns; }

    bool operator==(const SpanRecord&) const = default;
};

nlohmann::json to_json(const SpanRecord& record);
/// Throws InvalidRecord on missing or mistyped keys, unknown keys, or end < start.
SpanRecord span_from_json(const nlohmann::json& doc);
std::string to_ndjson_line(const SpanRecord& record);

/// Appends all records with one write(2) on an O_APPEND descriptor under an
/// exclusive flock, then fsyncs. Concurrent appenders never interleave lines.
void append_batch(const std::filesystem::path& path, const std::vector<SpanRecord>& records);

struct SpanReadResult {
    std::vector<SpanRecord> spans;
    std::size_t corrupted{0};
    std::vector<std::string> problems; // first few, for diagnostics
};

struct SpanFilter {
    std::optional<std::string> name;
    std::optional<VersionTag> version;
};

/// Reads an NDJSON span file in file order, skipping and counting lines that do
/// not parse. A missing file reads as empty.
SpanReadResult read_spans(const std::filesystem::path& path, const SpanFilter& filter = {});

struct SpanPair {
    std::string name;
    std::int64_t request_seq{};
    SpanRecord a;
    SpanRecord b;
};

struct PairingResult {
    std::vector<SpanPair> pairs; // ordered by (name, request_seq)
    std::size_t unmatched_a{0};
    std::size_t unmatched_b{0};
    std::size_t duplicates{0}; // (name, seq) keys dropped because a side recorded them twice
};

/// Joins A and B spans on (name, request_seq).
PairingResult pair_spans(const std::vector<SpanRecord>& a, const std::vector<SpanRecord>& b);

/// Durations of one span name, paired by request_seq.
struct PairedSeries {
    std::string name;
    std::vector<std::int64_t> seqs; // ascending
    std::vector<double> x_a;        // ns
    std::vector<double> x_b;
    std::size_t dropped_a{0}; // A occurrences without a usable B partner (duplicates included)
    std::size_t dropped_b{0};
};

PairedSeries pair_spans(const std::vector<SpanRecord>& a, const std::vector<SpanRecord>& b, const std::string& name);

/// Child spans that stick out of their parent by more than `tolerance_ns`.
std::vector<std::string> nesting_warnings(const std::vector<SpanRecord>& spans,
                                          std::int64_t tolerance_ns = 1'000'000);

std::int64_t unix_now_ns() noexcept;
std::string random_hex_id(std::size_t bytes);

/// Buffers records and appends them from a background thread in batches.
/// Destruction flushes everything recorded so far.
class SpanWriter {
public:
    SpanWriter(std::filesystem::path path, VersionTag tag, std::size_t batch_size = 256);
    ~SpanWriter();

    SpanWriter(const SpanWriter&) = delete;
    SpanWriter& operator=(const SpanWriter&) = delete;

    void record(SpanRecord record);
    /// Convenience: fills ids and the version tag.
    void record(const std::string& name, std::int64_t start_ns, std::int64_t end_ns, std::int64_t request_seq,
                std::map<std::string, std::string> attributes = {});
    /// Blocks until every record handed in so far is on disk.
    void flush();

    VersionTag version_tag() const noexcept { return tag_; }

private:
    void run();

    std::filesystem::path path_;
    VersionTag tag_;
    std::size_t batch_size_;
    std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable drained_;
    std::vector<SpanRecord> pending_;
    std::uint64_t submitted_{0};
    std::uint64_t written_{0};
    bool stopping_{false};
    bool flush_requested_{false};
    std::thread flusher_;
};

} // namespace duet
