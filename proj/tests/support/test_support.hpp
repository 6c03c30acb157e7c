#pragma once

#include "duet/util.hpp"

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <vector>
#include <sys/socket.h>
#include <netinet/in.h>
#include <unistd.h>

namespace duet::testing {

inline std::filesystem::path fixtures_dir() { return DUET_FIXTURES_DIR; }
inline std::filesystem::path adapters_dir() { return DUET_ADAPTERS_DIR; }
inline std::filesystem::path echo_sut_path() { return DUET_ECHO_SUT; }
inline std::filesystem::path cli_path() { return DUET_CLI; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "duet-test") {
        std::random_device rd;
        const auto base = std::filesystem::temp_directory_path();
        do {
            path_ = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(rd()));
        } while (std::filesystem::exists(path_));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

/// A TCP port the kernel just handed out on 127.0.0.1.
inline int free_port() {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    const int port = ntohs(addr.sin_port);
    ::close(fd);
    return port;
}

/// Byte-for-byte comparison of two directory trees (regular files only).
inline bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b, std::string* why = nullptr) {
    namespace fs = std::filesystem;
    auto listing = [](const fs::path& root) {
        std::vector<std::string> out;
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file())
                out.push_back(fs::relative(e.path(), root).string());
        std::sort(out.begin(), out.end());
        return out;
    };
    const auto la = listing(a);
    const auto lb = listing(b);
    if (la != lb) {
        if (why)
            *why = "file lists differ";
        return false;
    }
    for (const auto& rel : la) {
        if (read_file(a / rel) != read_file(b / rel)) {
            if (why)
                *why = rel + " differs";
            return false;
        }
    }
    return true;
}

} // namespace duet::testing
