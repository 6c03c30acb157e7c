#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace duet {

inline constexpr const char* kClientPairsFile = "client_pairs.csv";
inline constexpr const char* kRunMetadataFile = "run_metadata.json";
inline constexpr const char* kClientPairsHeader = "seq,endpoint,x_a_ns,x_b_ns,status_a,status_b";

std::string span_file_name(char version_tag); // "spans-A.ndjson"

/// One measured request pair, as seen by the load generator.
struct PairedMeasurement {
    std::int64_t request_seq{};
    std::string endpoint;
    std::int64_t x_a_ns{};
    std::int64_t x_b_ns{};
    int status_a{};
    int status_b{};

    bool operator==(const PairedMeasurement&) const = default;
};

void write_client_pairs(const std::filesystem::path& path, const std::vector<PairedMeasurement>& pairs);
/// Throws IoError on a missing file or a malformed row.
std::vector<PairedMeasurement> read_client_pairs(const std::filesystem::path& path);

} // namespace duet
