#include "duet/duetrunner.hpp"

#include "duet/error.hpp"
#include "duet/instrumenter.hpp"
#include "duet/util.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <barrier>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <random>
#include <regex>
#include <sched.h>
#include <set>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

extern char** environ;

using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace duet {

namespace {

const std::set<std::string, std::less<>> kConfigKeys = {
    "cmd_a",       "cmd_b",      "aa_cmd",   "cpu_set_a",         "cpu_set_b",     "reserved_os_core",
    "warmup_requests", "measured_requests", "workload", "health_path", "timeout_ms", "health_timeout_ms",
    "seed",        "sync_bound_ns"};

CommandSpec command_from_json(const json& doc, const std::string& where, const fs::path& base_dir) {
    if (!doc.is_object())
        throw ConfigError(where + " must be an object");
    CommandSpec c;
    auto argv = doc.find("argv");
    if (argv == doc.end() || !argv->is_array() || argv->empty())
        throw ConfigError(where + ".argv must be a non-empty array");
    for (const auto& a : *argv)
        c.argv.push_back(a.get<std::string>());
    if (!base_dir.empty() && c.argv[0].find('/') != std::string::npos && fs::path(c.argv[0]).is_relative())
        c.argv[0] = (base_dir / c.argv[0]).lexically_normal().string();
    if (auto env = doc.find("env"); env != doc.end()) {
        if (!env->is_object())
            throw ConfigError(where + ".env must be an object");
        for (const auto& [k, v] : env->items())
            c.env[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    auto url = doc.find("base_url");
    if (url == doc.end() || !url->is_string())
        throw ConfigError(where + ".base_url must be a string");
    c.base_url = url->get<std::string>();
    while (c.base_url.ends_with('/'))
        c.base_url.pop_back();
    return c;
}

json command_to_json(const CommandSpec& c) { return {{"argv", c.argv}, {"env", c.env}, {"base_url", c.base_url}}; }

std::vector<int> cpu_list(const json& doc, const char* key) {
    std::vector<int> out;
    if (auto it = doc.find(key); it != doc.end()) {
        if (!it->is_array())
            throw ConfigError(std::string(key) + " must be an array of core ids");
        for (const auto& c : *it)
            out.push_back(c.get<int>());
    }
    return out;
}

const std::regex kPlaceholder(R"(\{([A-Za-z_][A-Za-z0-9_]*)\})");

std::vector<std::string> placeholders(const std::string& tmpl) {
    std::vector<std::string> out;
    for (std::sregex_iterator it(tmpl.begin(), tmpl.end(), kPlaceholder), end; it != end; ++it)
        out.push_back((*it)[1].str());
    return out;
}

std::string fill(const std::string& tmpl, const std::map<std::string, std::string>& values) {
    std::string out;
    auto last = tmpl.cbegin();
    for (std::sregex_iterator it(tmpl.begin(), tmpl.end(), kPlaceholder), end; it != end; ++it) {
        const auto& m = *it;
        out.append(last, m[0].first);
        auto v = values.find(m[1].str());
        out += v != values.end() ? v->second : m[0].str();
        last = m[0].second;
    }
    out.append(last, tmpl.cend());
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// RunConfig

RunConfig RunConfig::from_json(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object())
        throw ConfigError("run config must be a JSON object");
    for (const auto& [key, _] : doc.items())
        if (!kConfigKeys.contains(key))
            throw ConfigError("run config: unknown key " + key);
    RunConfig cfg;
    try {
        if (!doc.contains("cmd_a") || !doc.contains("cmd_b"))
            throw ConfigError("run config needs cmd_a and cmd_b");
        cfg.cmd_a = command_from_json(doc["cmd_a"], "cmd_a", base_dir);
        cfg.cmd_b = command_from_json(doc["cmd_b"], "cmd_b", base_dir);
        if (doc.contains("aa_cmd"))
            cfg.aa_cmd = command_from_json(doc["aa_cmd"], "aa_cmd", base_dir);
        cfg.cpu_set_a = cpu_list(doc, "cpu_set_a");
        cfg.cpu_set_b = cpu_list(doc, "cpu_set_b");
        if (doc.contains("reserved_os_core") && !doc["reserved_os_core"].is_null())
            cfg.reserved_os_core = doc["reserved_os_core"].get<int>();
        if (doc.contains("warmup_requests"))
            cfg.warmup_requests = doc["warmup_requests"].get<std::size_t>();
        cfg.measured_requests = doc.value("measured_requests", cfg.measured_requests);
        cfg.health_path = doc.value("health_path", cfg.health_path);
        cfg.timeout_ms = doc.value("timeout_ms", cfg.timeout_ms);
        cfg.health_timeout_ms = doc.value("health_timeout_ms", cfg.health_timeout_ms);
        cfg.seed = doc.value("seed", cfg.seed);
        cfg.sync_bound_ns = doc.value("sync_bound_ns", cfg.sync_bound_ns);
        auto wl = doc.find("workload");
        if (wl == doc.end() || !wl->is_array() || wl->empty())
            throw ConfigError("workload must be a non-empty array");
        for (std::size_t i = 0; i < wl->size(); ++i) {
            const auto& s = (*wl)[i];
            WorkloadStep step;
            step.id = s.at("id").get<std::string>();
            step.method = s.value("method", step.method);
            step.path_template = s.at("path").get<std::string>();
            step.weight = s.value("weight", step.weight);
            step.body = s.value("body", step.body);
            step.content_type = s.value("content_type", step.content_type);
            if (auto p = s.find("params"); p != s.end())
                for (const auto& [k, v] : p->items())
                    step.params[k] = v.get<std::vector<std::string>>();
            cfg.workload.push_back(std::move(step));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
    auto doc = json::parse(read_file(path), nullptr, false);
    if (doc.is_discarded())
        throw ConfigError(path.string() + " is not valid JSON");
    return from_json(doc, path.parent_path());
}

json RunConfig::to_json() const {
    json wl = json::array();
    for (const auto& s : workload)
        wl.push_back({{"id", s.id},
                      {"method", s.method},
                      {"path", s.path_template},
                      {"params", s.params},
                      {"weight", s.weight},
                      {"body", s.body},
                      {"content_type", s.content_type}});
    json j = {{"cmd_a", command_to_json(cmd_a)},
              {"cmd_b", command_to_json(cmd_b)},
              {"cpu_set_a", cpu_set_a},
              {"cpu_set_b", cpu_set_b},
              {"reserved_os_core", reserved_os_core ? json(*reserved_os_core) : json(nullptr)},
              {"warmup_requests", warmup()},
              {"measured_requests", measured_requests},
              {"workload", wl},
              {"health_path", health_path},
              {"timeout_ms", timeout_ms},
              {"health_timeout_ms", health_timeout_ms},
              {"seed", seed},
              {"sync_bound_ns", sync_bound_ns}};
    if (aa_cmd)
        j["aa_cmd"] = command_to_json(*aa_cmd);
    return j;
}

void RunConfig::validate() const {
    for (int c : cpu_set_a)
        if (std::find(cpu_set_b.begin(), cpu_set_b.end(), c) != cpu_set_b.end())
            throw ConfigError("cpu_set_a and cpu_set_b share core " + std::to_string(c));
    if (reserved_os_core) {
        const int r = *reserved_os_core;
        if (std::find(cpu_set_a.begin(), cpu_set_a.end(), r) != cpu_set_a.end() ||
            std::find(cpu_set_b.begin(), cpu_set_b.end(), r) != cpu_set_b.end())
            throw ConfigError("reserved_os_core " + std::to_string(r) + " is assigned to a SUT");
    }
    for (int c : cpu_set_a)
        if (c < 0)
            throw ConfigError("negative core id");
    for (int c : cpu_set_b)
        if (c < 0)
            throw ConfigError("negative core id");
    if (measured_requests == 0)
        throw ConfigError("measured_requests must be positive");
    if (workload.empty())
        throw ConfigError("workload is empty");
    std::set<std::string> ids;
    for (const auto& s : workload) {
        if (!(s.weight > 0.0))
            throw ConfigError("workload step " + s.id + " needs a positive weight");
        if (s.id.empty() || s.id.find_first_of(",\n\r") != std::string::npos)
            throw ConfigError("workload step id must be non-empty and free of commas");
        if (!ids.insert(s.id).second)
            throw ConfigError("duplicate workload step id " + s.id);
        for (const auto& p : placeholders(s.path_template + s.body)) {
            auto it = s.params.find(p);
            if (it == s.params.end() || it->second.empty())
                throw ConfigError("workload step " + s.id + " has no values for {" + p + "}");
        }
    }
    if (timeout_ms <= 0 || health_timeout_ms <= 0)
        throw ConfigError("timeouts must be positive");
}

// ---------------------------------------------------------------------------
// Request generation

std::vector<GeneratedRequest> generate_requests(const RunConfig& cfg) {
    std::mt19937_64 engine(splitmix64(cfg.seed));
    double total = 0.0;
    for (const auto& s : cfg.workload)
        total += s.weight;
    const std::size_t count = cfg.warmup() + cfg.measured_requests;
    std::vector<GeneratedRequest> out;
    out.reserve(count);
    for (std::size_t seq = 0; seq < count; ++seq) {
        const double u = unit_draw(engine) * total;
        double acc = 0.0;
        const WorkloadStep* step = &cfg.workload.back();
        for (const auto& s : cfg.workload) {
            acc += s.weight;
            if (u < acc) {
                step = &s;
                break;
            }
        }
        std::map<std::string, std::string> values;
        for (const auto& [name, choices] : step->params)
            values[name] = choices[bounded_draw(engine, choices.size())];
        out.push_back({static_cast<std::int64_t>(seq), step->id, step->method, fill(step->path_template, values),
                       fill(step->body, values), step->content_type});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Processes

namespace {

struct ChildReport {
    int kind; // 1 = affinity failed, 2 = exec failed
    int err;
};

SutProcess spawn_sut(char version, const CommandSpec& cmd, const std::vector<int>& cpus,
                     const fs::path& artifact_dir, bool instrumented_spans) {
    SutProcess p;
    p.version = version;
    p.base_url = cmd.base_url;
    p.log_path = artifact_dir / (std::string("sut-") + version + ".log");

    std::vector<std::string> env_store;
    std::set<std::string> overridden;
    std::map<std::string, std::string> extra = cmd.env;
    extra["VERSION_TAG"] = std::string(1, version);
    if (instrumented_spans)
        extra["SPAN_OUT_PATH"] = (artifact_dir / span_file_name(version)).string();
    for (const auto& [k, _] : extra)
        overridden.insert(k);
    if (!instrumented_spans)
        overridden.insert("SPAN_OUT_PATH");
    for (char** e = environ; e && *e; ++e) {
        std::string kv(*e);
        if (!overridden.contains(kv.substr(0, kv.find('='))))
            env_store.push_back(std::move(kv));
    }
    for (const auto& [k, v] : extra)
        env_store.push_back(k + "=" + v);
    std::vector<char*> envp;
    for (auto& s : env_store)
        envp.push_back(s.data());
    envp.push_back(nullptr);
    std::vector<char*> argv;
    for (const auto& a : cmd.argv)
        argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);

    cpu_set_t mask;
    CPU_ZERO(&mask);
    for (int c : cpus)
        if (c < CPU_SETSIZE)
            CPU_SET(c, &mask);

    const int log_fd = ::open(p.log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (log_fd < 0)
        throw IoError("cannot create " + p.log_path.string());
    int report[2];
    if (pipe2(report, O_CLOEXEC) != 0) {
        ::close(log_fd);
        throw IoError("pipe failed");
    }

    const pid_t pid = fork();
    if (pid < 0) {
        ::close(log_fd);
        ::close(report[0]);
        ::close(report[1]);
        throw IoError("fork failed");
    }
    if (pid == 0) {
        setpgid(0, 0);
        const int devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0)
            dup2(devnull, 0);
        dup2(log_fd, 1);
        dup2(log_fd, 2);
        if (!cpus.empty() && sched_setaffinity(0, sizeof mask, &mask) != 0) {
            ChildReport r{1, errno};
            [[maybe_unused]] auto n = ::write(report[1], &r, sizeof r);
        }
        execvpe(argv[0], argv.data(), envp.data());
        ChildReport r{2, errno};
        [[maybe_unused]] auto n = ::write(report[1], &r, sizeof r);
        _exit(127);
    }
    ::close(log_fd);
    ::close(report[1]);
    p.pid = pid;
    ChildReport r{};
    ssize_t n;
    while ((n = ::read(report[0], &r, sizeof r)) == static_cast<ssize_t>(sizeof r)) {
        if (r.kind == 1) {
            p.affinity_warning = std::string("AffinityUnsupported: cannot pin ") + version + ": " + std::strerror(r.err);
        } else if (r.kind == 2) {
            ::close(report[0]);
            waitpid(pid, nullptr, 0);
            throw ToolMissing("cannot execute " + cmd.argv[0] + ": " + std::strerror(r.err));
        }
    }
    ::close(report[0]);
    return p;
}

void terminate(SutProcess& p, std::chrono::milliseconds grace) {
    if (p.pid <= 0)
        return;
    ::kill(-p.pid, SIGTERM);
    ::kill(p.pid, SIGTERM);
    const auto deadline = Clock::now() + grace;
    for (;;) {
        int status = 0;
        const pid_t r = waitpid(p.pid, &status, WNOHANG);
        if (r == p.pid || (r < 0 && errno == ECHILD))
            break;
        if (Clock::now() >= deadline) {
            ::kill(-p.pid, SIGKILL);
            ::kill(p.pid, SIGKILL);
            waitpid(p.pid, &status, 0);
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    p.pid = -1;
}

std::unique_ptr<httplib::Client> make_client(const std::string& base_url, int timeout_ms) {
    auto client = std::make_unique<httplib::Client>(base_url);
    const auto secs = timeout_ms / 1000;
    const auto usecs = (timeout_ms % 1000) * 1000;
    client->set_connection_timeout(secs, usecs);
    client->set_read_timeout(secs, usecs);
    client->set_write_timeout(secs, usecs);
    client->set_keep_alive(true);
    client->set_tcp_nodelay(true);
    return client;
}

bool healthy(const std::string& base_url, const std::string& path) {
    auto client = make_client(base_url, 500);
    client->set_keep_alive(false);
    auto res = client->Get(path);
    return res && res->status == 200;
}

} // namespace

DuetHandles::DuetHandles(DuetHandles&& other) noexcept : a_(std::move(other.a_)), b_(std::move(other.b_)) {
    other.a_.pid = -1;
    other.b_.pid = -1;
}

DuetHandles& DuetHandles::operator=(DuetHandles&& other) noexcept {
    if (this != &other) {
        shutdown();
        a_ = std::move(other.a_);
        b_ = std::move(other.b_);
        other.a_.pid = -1;
        other.b_.pid = -1;
    }
    return *this;
}

DuetHandles::~DuetHandles() { shutdown(); }

bool DuetHandles::alive(char version) {
    auto& p = version == 'A' ? a_ : b_;
    if (p.pid <= 0)
        return false;
    int status = 0;
    if (waitpid(p.pid, &status, WNOHANG) == p.pid) {
        p.pid = -1;
        return false;
    }
    return true;
}

void DuetHandles::shutdown(std::chrono::milliseconds grace) {
    terminate(a_, grace);
    terminate(b_, grace);
}

DuetHandles launch_duet(const RunConfig& cfg, const fs::path& artifact_dir, const LaunchOptions& options) {
    cfg.validate();
    if (options.aa_mode && !cfg.aa_cmd)
        throw ConfigError("A/A mode needs aa_cmd in the run config");
    fs::create_directories(artifact_dir);
    fs::remove(artifact_dir / span_file_name('A'));
    fs::remove(artifact_dir / span_file_name('B'));

    const CommandSpec& cmd_b = options.aa_mode ? *cfg.aa_cmd : cfg.cmd_b;
    SutProcess a = spawn_sut('A', cfg.cmd_a, cfg.cpu_set_a, artifact_dir, true);
    SutProcess b;
    try {
        b = spawn_sut('B', cmd_b, cfg.cpu_set_b, artifact_dir, !options.aa_mode);
    } catch (...) {
        DuetHandles cleanup(std::move(a), SutProcess{});
        throw;
    }
    DuetHandles handles(std::move(a), std::move(b));

    const auto deadline = Clock::now() + std::chrono::milliseconds(cfg.health_timeout_ms);
    bool ready_a = false;
    bool ready_b = false;
    while (!(ready_a && ready_b)) {
        for (char v : {'A', 'B'}) {
            bool& ready = v == 'A' ? ready_a : ready_b;
            if (ready)
                continue;
            if (!handles.alive(v)) {
                handles.shutdown();
                throw HealthCheckTimeout(v, "process exited during startup");
            }
            ready = healthy(v == 'A' ? handles.a().base_url : handles.b().base_url, cfg.health_path);
        }
        if (ready_a && ready_b)
            break;
        if (Clock::now() >= deadline) {
            handles.shutdown();
            throw HealthCheckTimeout(ready_a ? 'B' : 'A');
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    return handles;
}

// ---------------------------------------------------------------------------
// Workload

namespace {

struct SideResult {
    bool ok{false};
    int status{0};
    std::int64_t latency_ns{0};
    Clock::time_point dispatched;
    std::string error;
};

SideResult send(httplib::Client& client, const GeneratedRequest& req, Clock::time_point release) {
    httplib::Headers headers{{"X-Duet-Seq", std::to_string(req.seq)}};
    SideResult out;
    while (Clock::now() < release) {
        if (release - Clock::now() > std::chrono::microseconds(100))
            std::this_thread::yield();
    }
    out.dispatched = Clock::now();
    httplib::Result res;
    if (req.method == "GET")
        res = client.Get(req.path, headers);
    else if (req.method == "POST")
        res = client.Post(req.path, headers, req.body, req.content_type);
    else if (req.method == "PUT")
        res = client.Put(req.path, headers, req.body, req.content_type);
    else if (req.method == "DELETE")
        res = client.Delete(req.path, headers);
    else
        res = client.Get(req.path, headers);
    const auto done = Clock::now();
    out.latency_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(done - release).count();
    if (!res) {
        out.error = httplib::to_string(res.error());
        return out;
    }
    out.status = res->status;
    out.ok = res->status >= 200 && res->status < 300;
    if (!out.ok)
        out.error = "HTTP " + std::to_string(res->status);
    return out;
}

} // namespace

RunOutcome run_workload(DuetHandles& handles, const RunConfig& cfg, const fs::path& artifact_dir) {
    RunOutcome outcome;
    outcome.started_at = utc_timestamp();
    const auto requests = generate_requests(cfg);
    const std::size_t warmup = cfg.warmup();

    {
        std::string log;
        for (const auto& r : requests)
            log += json{{"seq", r.seq}, {"endpoint", r.endpoint}, {"method", r.method}, {"path", r.path},
                        {"body", r.body}}
                       .dump() +
                   "\n";
        write_file_atomic(artifact_dir / "requests.ndjson", log);
    }

    auto client_a = make_client(handles.a().base_url, cfg.timeout_ms);
    auto client_b = make_client(handles.b().base_url, cfg.timeout_ms);

    std::size_t index = 0;
    Clock::time_point release;
    SideResult side[2];
    std::atomic<bool> stop{false};
    std::barrier sync(3);

    auto worker = [&](int which) {
        auto& client = which == 0 ? *client_a : *client_b;
        for (;;) {
            sync.arrive_and_wait(); // pair published
            if (stop.load())
                return;
            side[which] = send(client, requests[index], release);
            sync.arrive_and_wait(); // pair finished
        }
    };
    std::jthread ta(worker, 0), tb(worker, 1);

    for (index = 0; index < requests.size(); ++index) {
        release = Clock::now() + std::chrono::microseconds(200);
        sync.arrive_and_wait();
        sync.arrive_and_wait();
        const auto& req = requests[index];
        outcome.dispatch_skew_ns.push_back(
            std::chrono::duration_cast<std::chrono::nanoseconds>(side[0].dispatched - side[1].dispatched).count());
        if (!side[0].ok || !side[1].ok) {
            if (!side[0].ok && !handles.alive('A')) {
                outcome.abort_reason = "SUT A exited during the run";
                break;
            }
            if (!side[1].ok && !handles.alive('B')) {
                outcome.abort_reason = "SUT B exited during the run";
                break;
            }
            if (static_cast<std::size_t>(req.seq) >= warmup) {
                ++outcome.dropped;
                const std::string why = !side[0].ok ? "A: " + side[0].error : "B: " + side[1].error;
                ++outcome.dropped_by_reason[why];
            }
            continue;
        }
        if (static_cast<std::size_t>(req.seq) < warmup)
            continue;
        outcome.pairs.push_back(
            {req.seq, req.endpoint, side[0].latency_ns, side[1].latency_ns, side[0].status, side[1].status});
    }
    stop = true;
    sync.arrive_and_wait();
    ta.join();
    tb.join();

    outcome.completed = outcome.abort_reason.empty();
    outcome.finished_at = utc_timestamp();
    return outcome;
}

json collect_artifacts(DuetHandles& handles, const RunConfig& cfg, const RunOutcome& outcome,
                       const fs::path& artifact_dir, const LaunchOptions& options) {
    std::vector<std::string> affinity;
    for (const auto* p : {&handles.a(), &handles.b()})
        if (p->affinity_warning)
            affinity.push_back(*p->affinity_warning);
    handles.shutdown();

    write_client_pairs(artifact_dir / kClientPairsFile, outcome.pairs);

    std::vector<std::int64_t> skews;
    for (auto s : outcome.dispatch_skew_ns)
        skews.push_back(s < 0 ? -s : s);
    std::sort(skews.begin(), skews.end());
    const auto violations = static_cast<std::size_t>(
        std::count_if(skews.begin(), skews.end(), [&](std::int64_t s) { return s >= cfg.sync_bound_ns; }));

    json spans = json::object();
    for (char v : {'A', 'B'}) {
        const auto path = artifact_dir / span_file_name(v);
        spans[std::string(1, v)] = fs::exists(path) ? json(span_file_name(v)) : json(nullptr);
    }

    json meta = {{"seed", cfg.seed},
                 {"mode", options.aa_mode ? "aa" : "ab"},
                 {"cpu_set_a", cfg.cpu_set_a},
                 {"cpu_set_b", cfg.cpu_set_b},
                 {"reserved_os_core", cfg.reserved_os_core ? json(*cfg.reserved_os_core) : json(nullptr)},
                 {"warmup_requests", cfg.warmup()},
                 {"measured_requests", cfg.measured_requests},
                 {"started_at", outcome.started_at},
                 {"finished_at", outcome.finished_at},
                 {"completed", outcome.completed},
                 {"abort_reason", outcome.abort_reason.empty() ? json(nullptr) : json(outcome.abort_reason)},
                 {"pairs", outcome.pairs.size()},
                 {"dropped_pairs", outcome.dropped},
                 {"dropped_by_reason", outcome.dropped_by_reason},
                 {"affinity_warnings", affinity},
                 {"span_files", spans},
                 {"sync",
                  {{"bound_ns", cfg.sync_bound_ns},
                   {"max_skew_ns", skews.empty() ? 0 : skews.back()},
                   {"median_skew_ns", skews.empty() ? 0 : skews[skews.size() / 2]},
                   {"violations", violations}}},
                 {"config", cfg.to_json()},
                 {"tool_version", kToolVersion}};
    write_file_atomic(artifact_dir / kRunMetadataFile, meta.dump(2) + "\n");
    return meta;
}

RunOutcome run_duet(const RunConfig& cfg, const fs::path& artifact_dir, const LaunchOptions& options) {
    auto handles = launch_duet(cfg, artifact_dir, options);
    RunOutcome outcome;
    try {
        outcome = run_workload(handles, cfg, artifact_dir);
    } catch (const std::exception& e) {
        outcome.abort_reason = e.what();
        outcome.completed = false;
    }
    collect_artifacts(handles, cfg, outcome, artifact_dir, options);
    return outcome;
}

} // namespace duet
