#pragma once

#include <httplib.h>
#include <json.hpp>

#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace duet::testing {

/// Scripted stand-in for an inference service, listening on 127.0.0.1.
class MockEndpoint {
public:
    using Handler = std::function<void(const nlohmann::json& request, httplib::Response&)>;

    explicit MockEndpoint(Handler handler) : handler_(std::move(handler)) {
        server_.Post("/v1/plan", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(mutex_);
            requests_.push_back(nlohmann::json::parse(req.body));
            auth_.push_back(req.get_header_value("Authorization"));
            handler_(requests_.back(), res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockEndpoint() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/plan"; }
    std::vector<nlohmann::json> requests() const {
        std::lock_guard lock(mutex_);
        return requests_;
    }
    std::vector<std::string> auth() const {
        std::lock_guard lock(mutex_);
        return auth_;
    }

private:
    Handler handler_;
    httplib::Server server_;
    int port_{0};
    std::thread thread_;
    mutable std::mutex mutex_;
    std::vector<nlohmann::json> requests_;
    std::vector<std::string> auth_;
};

} // namespace duet::testing
