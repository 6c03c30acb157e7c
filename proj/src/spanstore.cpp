#include "duet/spanstore.hpp"

#include "duet/error.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <random>
#include <set>
#include <sys/file.h>
#include <unistd.h>

using nlohmann::json;
namespace fs = std::filesystem;

namespace duet {

namespace {

const std::set<std::string, std::less<>> kKeys = {"trace_id",      "span_id",     "parent_span_id",
                                                   "name",          "start_unix_ns", "end_unix_ns",
                                                   "attributes",    "request_seq", "version_tag"};

std::int64_t int_field(const json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end() || !it->is_number_integer())
        throw InvalidRecord(std::string(key) + " must be an integer");
    return it->get<std::int64_t>();
}

std::string string_field(const json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end() || !it->is_string())
        throw InvalidRecord(std::string(key) + " must be a string");
    return it->get<std::string>();
}

void check(const SpanRecord& r) {
    if (r.name.empty())
        throw InvalidRecord("span name is empty");
    if (r.trace_id.empty() || r.span_id.empty())
        throw InvalidRecord("span " + r.name + " has no ids");
    if (r.end_unix_ns < r.start_unix_ns)
        throw InvalidRecord("span " + r.name + " ends before it starts");
    if (r.request_seq < 0)
        throw InvalidRecord("span " + r.name + " has a negative request_seq");
}

} // namespace

json to_json(const SpanRecord& r) {
    json attrs = json::object();
    for (const auto& [k, v] : r.attributes)
        attrs[k] = v;
    return {{"trace_id", r.trace_id},
            {"span_id", r.span_id},
            {"parent_span_id", r.parent_span_id ? json(*r.parent_span_id) : json(nullptr)},
            {"name", r.name},
            {"start_unix_ns", r.start_unix_ns},
            {"end_unix_ns", r.end_unix_ns},
            {"attributes", attrs},
            {"request_seq", r.request_seq},
            {"version_tag", std::string(to_string(r.version_tag))}};
}

SpanRecord span_from_json(const json& doc) {
    if (!doc.is_object())
        throw InvalidRecord("span record is not an object");
    for (const auto& [key, _] : doc.items())
        if (!kKeys.contains(key))
            throw InvalidRecord("unknown key " + key);
    SpanRecord r;
    r.trace_id = string_field(doc, "trace_id");
    r.span_id = string_field(doc, "span_id");
    if (auto it = doc.find("parent_span_id"); it != doc.end() && !it->is_null()) {
        if (!it->is_string())
            throw InvalidRecord("parent_span_id must be a string or null");
        r.parent_span_id = it->get<std::string>();
    }
    r.name = string_field(doc, "name");
    r.start_unix_ns = int_field(doc, "start_unix_ns");
    r.end_unix_ns = int_field(doc, "end_unix_ns");
    r.request_seq = int_field(doc, "request_seq");
    if (auto it = doc.find("attributes"); it != doc.end()) {
        if (!it->is_object())
            throw InvalidRecord("attributes must be an object");
        for (const auto& [k, v] : it->items())
            r.attributes[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    const auto tag = string_field(doc, "version_tag");
    if (tag == "A")
        r.version_tag = VersionTag::A;
    else if (tag == "B")
        r.version_tag = VersionTag::B;
    else
        throw InvalidRecord("version_tag must be A or B");
    check(r);
    return r;
}

std::string to_ndjson_line(const SpanRecord& record) { return to_json(record).dump() + "\n"; }

void append_batch(const fs::path& path, const std::vector<SpanRecord>& records) {
    if (records.empty())
        return;
    std::string payload;
    for (const auto& r : records) {
        check(r);
        payload += to_ndjson_line(r);
    }
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0)
        throw IoError("open " + path.string() + ": " + std::strerror(errno));
    struct Closer {
        int fd;
        ~Closer() {
            ::flock(fd, LOCK_UN);
            ::close(fd);
        }
    } closer{fd};
    if (::flock(fd, LOCK_EX) != 0)
        throw IoError("flock " + path.string() + ": " + std::strerror(errno));
    std::size_t done = 0;
    while (done < payload.size()) {
        const ssize_t n = ::write(fd, payload.data() + done, payload.size() - done);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw IoError("write " + path.string() + ": " + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
    if (::fsync(fd) != 0)
        throw IoError("fsync " + path.string() + ": " + std::strerror(errno));
}

SpanReadResult read_spans(const fs::path& path, const SpanFilter& filter) {
    SpanReadResult out;
    std::ifstream in(path, std::ios::binary);
    if (!in)
        return out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty())
            continue;
        auto doc = json::parse(line, nullptr, false);
        try {
            if (doc.is_discarded())
                throw InvalidRecord("not JSON");
            auto record = span_from_json(doc);
            if ((filter.name && record.name != *filter.name) || (filter.version && record.version_tag != *filter.version))
                continue;
            out.spans.push_back(std::move(record));
        } catch (const InvalidRecord& e) {
            ++out.corrupted;
            if (out.problems.size() < 10)
                out.problems.push_back(path.filename().string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

PairingResult pair_spans(const std::vector<SpanRecord>& a, const std::vector<SpanRecord>& b) {
    using Key = std::pair<std::string, std::int64_t>;
    auto index = [](const std::vector<SpanRecord>& side, std::set<Key>& dups) {
        std::map<Key, const SpanRecord*> m;
        for (const auto& r : side) {
            Key k{r.name, r.request_seq};
            if (!m.emplace(k, &r).second)
                dups.insert(k);
        }
        return m;
    };
    std::set<Key> dups;
    auto ia = index(a, dups);
    auto ib = index(b, dups);
    PairingResult out;
    out.duplicates = dups.size();
    for (const auto& k : dups) {
        ia.erase(k);
        ib.erase(k);
    }
    for (const auto& [k, ra] : ia) {
        auto it = ib.find(k);
        if (it == ib.end()) {
            ++out.unmatched_a;
            continue;
        }
        out.pairs.push_back({k.first, k.second, *ra, *it->second});
    }
    for (const auto& [k, _] : ib)
        if (!ia.contains(k))
            ++out.unmatched_b;
    return out;
}

PairedSeries pair_spans(const std::vector<SpanRecord>& a, const std::vector<SpanRecord>& b, const std::string& name) {
    auto tally = [&](const std::vector<SpanRecord>& side) {
        std::map<std::int64_t, std::vector<const SpanRecord*>> m;
        for (const auto& r : side)
            if (r.name == name)
                m[r.request_seq].push_back(&r);
        return m;
    };
    const auto ma = tally(a);
    const auto mb = tally(b);
    PairedSeries out;
    out.name = name;
    for (const auto& [seq, ra] : ma) {
        auto it = mb.find(seq);
        if (ra.size() == 1 && it != mb.end() && it->second.size() == 1) {
            out.seqs.push_back(seq);
            out.x_a.push_back(static_cast<double>(ra.front()->duration_ns()));
            out.x_b.push_back(static_cast<double>(it->second.front()->duration_ns()));
        } else {
            out.dropped_a += ra.size();
        }
    }
    for (const auto& [seq, rb] : mb) {
        auto it = ma.find(seq);
        if (!(rb.size() == 1 && it != ma.end() && it->second.size() == 1))
            out.dropped_b += rb.size();
    }
    return out;
}

std::vector<std::string> nesting_warnings(const std::vector<SpanRecord>& spans, std::int64_t tolerance_ns) {
    std::map<std::string, const SpanRecord*> by_id;
    for (const auto& s : spans)
        by_id.emplace(s.span_id, &s);
    std::vector<std::string> out;
    for (const auto& s : spans) {
        if (!s.parent_span_id)
            continue;
        auto it = by_id.find(*s.parent_span_id);
        if (it == by_id.end())
            continue;
        const auto& p = *it->second;
        if (s.start_unix_ns < p.start_unix_ns - tolerance_ns || s.end_unix_ns > p.end_unix_ns + tolerance_ns)
            out.push_back("span " + s.name + " (seq " + std::to_string(s.request_seq) + ") is not inside parent " +
                          p.name);
    }
    return out;
}

std::int64_t unix_now_ns() noexcept {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string random_hex_id(std::size_t bytes) {
    thread_local std::mt19937_64 engine{std::random_device{}()};
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes * 2);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < bytes; ++i) {
        if (i % 8 == 0)
            bits = engine();
        const auto byte = static_cast<unsigned>(bits & 0xff);
        bits >>= 8;
        out += digits[byte >> 4];
        out += digits[byte & 0xf];
    }
    return out;
}

SpanWriter::SpanWriter(fs::path path, VersionTag tag, std::size_t batch_size)
    : path_(std::move(path)), tag_(tag), batch_size_(std::max<std::size_t>(1, batch_size)) {
    flusher_ = std::thread([this] { run(); });
}

SpanWriter::~SpanWriter() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    wake_.notify_all();
    flusher_.join();
}

void SpanWriter::record(SpanRecord record) {
    check(record);
    {
        std::lock_guard lock(mutex_);
        pending_.push_back(std::move(record));
        ++submitted_;
        if (pending_.size() < batch_size_)
            return;
    }
    wake_.notify_one();
}

void SpanWriter::record(const std::string& name, std::int64_t start_ns, std::int64_t end_ns, std::int64_t request_seq,
                        std::map<std::string, std::string> attributes) {
    SpanRecord r;
    r.trace_id = random_hex_id(16);
    r.span_id = random_hex_id(8);
    r.name = name;
    r.start_unix_ns = start_ns;
    r.end_unix_ns = end_ns;
    r.request_seq = request_seq;
    r.attributes = std::move(attributes);
    r.version_tag = tag_;
    record(std::move(r));
}

void SpanWriter::flush() {
    std::unique_lock lock(mutex_);
    const auto target = submitted_;
    flush_requested_ = true;
    wake_.notify_one();
    drained_.wait(lock, [&] { return written_ >= target; });
}

void SpanWriter::run() {
    std::unique_lock lock(mutex_);
    for (;;) {
        wake_.wait(lock, [&] { return stopping_ || flush_requested_ || pending_.size() >= batch_size_; });
        flush_requested_ = false;
        std::vector<SpanRecord> batch;
        batch.swap(pending_);
        const bool stop = stopping_;
        if (!batch.empty()) {
            lock.unlock();
            try {
                append_batch(path_, batch);
            } catch (const std::exception&) {
                // Nothing sensible to do from a background thread; the analyzer reports missing spans.
            }
            lock.lock();
            written_ += batch.size();
            drained_.notify_all();
        }
        if (stop && pending_.empty())
            return;
    }
}

} // namespace duet
