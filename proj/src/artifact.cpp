#include "duet/artifact.hpp"

#include "duet/error.hpp"
#include "duet/util.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace duet {

std::string span_file_name(char version_tag) { return std::string("spans-") + version_tag + ".ndjson"; }

void write_client_pairs(const std::filesystem::path& path, const std::vector<PairedMeasurement>& pairs) {
    std::string out = kClientPairsHeader;
    out += '\n';
    for (const auto& p : pairs) {
        out += std::to_string(p.request_seq) + ',' + p.endpoint + ',' + std::to_string(p.x_a_ns) + ',' +
               std::to_string(p.x_b_ns) + ',' + std::to_string(p.status_a) + ',' + std::to_string(p.status_b) + '\n';
    }
    write_file_atomic(path, out);
}

namespace {

template <class T>
T parse_number(std::string_view field, const std::string& where) {
    T value{};
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size())
        throw IoError(where + ": bad number '" + std::string(field) + "'");
    return value;
}

} // namespace

std::vector<PairedMeasurement> read_client_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || trim(line) != kClientPairsHeader)
        throw IoError(path.string() + ": unexpected header");
    std::vector<PairedMeasurement> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty())
            continue;
        const std::string where = path.filename().string() + ":" + std::to_string(lineno);
        std::vector<std::string_view> f;
        std::string_view rest = trim(line);
        for (;;) {
            auto comma = rest.find(',');
            f.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos)
                break;
            rest.remove_prefix(comma + 1);
        }
        if (f.size() != 6)
            throw IoError(where + ": expected 6 columns");
        out.push_back({parse_number<std::int64_t>(f[0], where), std::string(f[1]),
                       parse_number<std::int64_t>(f[2], where), parse_number<std::int64_t>(f[3], where),
                       parse_number<int>(f[4], where), parse_number<int>(f[5], where)});
    }
    return out;
}

} // namespace duet
