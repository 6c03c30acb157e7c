#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace duet {

enum class VersionTag { A, B };

constexpr std::string_view to_string(VersionTag tag) noexcept { return tag == VersionTag::A ? "A" : "B"; }

/// Inclusive 1-based line range.
struct LineRange {
    int start{};
    int end{};

    bool valid() const noexcept { return start >= 1 && start <= end; }
    /// Zero lines, positioned just before `start` (end == start - 1).
    bool empty_at_start() const noexcept { return start >= 1 && end == start - 1; }
    bool contains(int line) const noexcept { return line >= start && line <= end; }
    int length() const noexcept { return end - start + 1; }

    auto operator<=>(const LineRange&) const = default;
};

/// Lines of a text file. `trailing_newline` records whether the last line was terminated.
struct TextLines {
    std::vector<std::string> lines;
    bool trailing_newline{true};

    static TextLines split(std::string_view text);
    std::string join() const;
};

std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string sha256_hex(std::string_view data);

/// Lowercases and maps everything outside `[a-z0-9_.-]` to `_`.
std::string slugify(std::string_view text);

std::string_view trim(std::string_view s) noexcept;
bool starts_with_word(std::string_view s, std::string_view word) noexcept;

std::string utc_timestamp();

/// Deterministic 64-bit mixer used to derive independent seeds from (seed, counter).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Unbiased integer in [0, bound) from a 64-bit engine (Lemire's multiply-and-reject).
/// Used instead of std::uniform_int_distribution so sequences are identical across standard libraries.
template <class Engine>
std::uint64_t bounded_draw(Engine& engine, std::uint64_t bound) {
    unsigned __int128 m = static_cast<unsigned __int128>(engine()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        while (low < threshold) {
            m = static_cast<unsigned __int128>(engine()) * bound;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

/// Uniform double in [0, 1) with 53 random bits.
template <class Engine>
double unit_draw(Engine& engine) {
    return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

} // namespace duet
