// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

// Command-line front end. Links only the C API.

#include <spdmsim/spdmsim.h>

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

namespace
{

std::atomic<bool> stop_requested{false};

void on_signal(int)
{
    stop_requested = true;
}

struct Globals
{
    unsigned runs = 0;
    unsigned warmup = 1;
    double scale = 1.0;
    std::string mode = "both";
    unsigned long long seed = 1;
    std::string out;
    std::string format = "json";
    double seek_ms = 0;
    double per_byte_ns = 0;
    std::string fixtures;
    std::string topology = "in-process";
    std::string addr;
};

// Prints the failure and returns the process exit status.
int report_failure(const char* what, spdmsim_status st)
{
    std::fprintf(stderr, "%s failed: %s (%s)\n", what, spdmsim_status_name(st),
                 spdmsim_last_error());
    return 1;
}

#define CHECK_OR_RETURN(call, what)                                                             \
    do                                                                                          \
    {                                                                                           \
        const spdmsim_status st_ = (call);                                                      \
        if (st_ != SPDMSIM_OK)                                                                  \
            return report_failure(what, st_);                                                   \
    } while (0)

spdmsim_bench_options options_from(const Globals& g)
{
    spdmsim_bench_options o;
    spdmsim_bench_options_init(&o);
    o.runs = g.runs;
    o.warmup = g.warmup;
    o.scale = g.scale;
    o.seed = g.seed;
    o.seek_ms = g.seek_ms;
    o.per_byte_ns = g.per_byte_ns;
    o.disk_mode = g.mode == "plain"     ? SPDMSIM_DISK_PLAIN
                  : g.mode == "secured" ? SPDMSIM_DISK_SECURED
                                        : SPDMSIM_DISK_BOTH;
    o.topology = g.topology == "tcp-loopback" ? SPDMSIM_TOPOLOGY_TCP_LOOPBACK
                 : g.topology == "tcp-remote" ? SPDMSIM_TOPOLOGY_TCP_REMOTE
                                              : SPDMSIM_TOPOLOGY_IN_PROCESS;
    o.remote_address = g.addr.empty() ? nullptr : g.addr.c_str();
    o.fixtures_dir = g.fixtures.empty() ? nullptr : g.fixtures.c_str();
    return o;
}

int emit(const Globals& g, spdmsim_report* report)
{
    const auto fmt = g.format == "csv" ? SPDMSIM_FORMAT_CSV : SPDMSIM_FORMAT_JSON;
    int rc = 0;
    if (!g.out.empty())
    {
        const auto st = spdmsim_report_write(report, fmt, g.out.c_str());
        if (st != SPDMSIM_OK)
            rc = report_failure("writing report", st);
        else
            std::fprintf(stderr, "report written to %s\n", g.out.c_str());
    }
    else
    {
        std::size_t len = 0;
        spdmsim_report_render(report, fmt, nullptr, 0, &len);
        std::string text(len + 1, '\0');
        const auto st = spdmsim_report_render(report, fmt, text.data(), text.size(), &len);
        if (st != SPDMSIM_OK)
            rc = report_failure("rendering report", st);
        else
            std::fwrite(text.data(), 1, len, stdout);
    }
    if (spdmsim_report_partial(report))
    {
        std::fprintf(stderr, "warning: run aborted, report is partial\n");
        rc = rc ? rc : 2;
    }
    spdmsim_report_free(report);
    return rc;
}

std::string fixture_file(const Globals& g, const std::string& explicit_path, const char* name)
{
    if (!explicit_path.empty())
        return explicit_path;
    return (g.fixtures.empty() ? std::string("fixtures") : g.fixtures) + "/" + name;
}

int run_connect(const Globals& g, const std::string& config)
{
    spdmsim_client* c = nullptr;
    CHECK_OR_RETURN(spdmsim_client_connect(config.c_str(), g.addr.c_str(), &c), "connect");
    struct Guard
    {
        spdmsim_client* c;
        ~Guard()
        {
            spdmsim_client_free(c);
        }
    } guard{c};

    using Clock = std::chrono::steady_clock;
    auto timed = [](const char* label, auto&& fn) {
        const auto t0 = Clock::now();
        const spdmsim_status st = fn();
        const double us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
        std::printf("%-30s %-10s %10.1f us\n", label, spdmsim_status_name(st), us);
        return st;
    };
#define STEP(label, expr)                                                                       \
    if (const auto st_ = timed(label, [&] { return (expr); }); st_ != SPDMSIM_OK)                \
    return report_failure(label, st_)

    STEP("init_connection", spdmsim_client_init_connection(c));
    STEP("authenticate", spdmsim_client_authenticate(c, 0));
    std::size_t blocks = 0;
    int sig = 0;
    STEP("measurements(one-by-one)",
         spdmsim_client_fetch_measurements(c, SPDMSIM_MEASURE_ONE_BY_ONE, &blocks, &sig));
    STEP("measurements(all-at-once)",
         spdmsim_client_fetch_measurements(c, SPDMSIM_MEASURE_ALL_AT_ONCE, &blocks, &sig));
    std::printf("  %zu measurement blocks, signature %s\n", blocks, sig ? "verified" : "absent");
    std::uint32_t sid = 0;
    STEP("session(cert-dhe)", spdmsim_client_establish_session(c, SPDMSIM_SESSION_CERT_DHE, &sid));
    STEP("heartbeat", spdmsim_client_heartbeat(c, sid));
    STEP("key_update", spdmsim_client_key_update(c, sid, SPDMSIM_UPDATE_KEY));
    const std::uint8_t rng_req[1] = {0x01};
    std::uint8_t buf[64];
    std::size_t len = 0;
    STEP("rng(secured)", spdmsim_client_app_request(c, sid, rng_req, 1, buf, sizeof buf, &len));
    STEP("rng(plain)", spdmsim_client_plain_app_request(c, rng_req, 1, buf, sizeof buf, &len));
    STEP("end_session", spdmsim_client_end_session(c, sid));
    std::uint32_t psid = 0;
    STEP("session(psk)", spdmsim_client_establish_session(c, SPDMSIM_SESSION_PSK, &psid));
    STEP("end_session(psk)", spdmsim_client_end_session(c, psid));
#undef STEP

    std::size_t n = 0;
    spdmsim_client_code_trace(c, nullptr, 0, &n);
    std::vector<std::uint8_t> codes(n);
    CHECK_OR_RETURN(spdmsim_client_code_trace(c, codes.data(), codes.size(), &n), "code trace");
    std::printf("code trace (%zu):", n);
    for (auto b : codes)
        std::printf(" %02x", b);
    std::printf("\n");
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"spdmsim: component authentication and secure sessions, with benchmarks"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", spdmsim_version());

    Globals g;
    app.add_option("--runs", g.runs, "Timed runs (0 = benchmark default)");
    app.add_option("--warmup", g.warmup, "Untimed runs first");
    app.add_option("--scale", g.scale, "Disk workload size multiplier")->check(CLI::PositiveNumber);
    app.add_option("--mode", g.mode, "Disk mode")->check(CLI::IsMember({"plain", "secured", "both"}));
    app.add_option("--seed", g.seed, "Workload seed");
    app.add_option("--out", g.out, "Report path (stdout when unset)");
    app.add_option("--format", g.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
    app.add_option("--seek-ms", g.seek_ms, "Seek delay of the latency model")->check(CLI::NonNegativeNumber);
    app.add_option("--per-byte-ns", g.per_byte_ns, "Per-byte delay of the latency model")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--fixtures", g.fixtures, "Fixture directory from gencerts");
    app.add_option("--topology", g.topology, "Message bench topology")
        ->check(CLI::IsMember({"in-process", "tcp-loopback", "tcp-remote"}));

    auto* msgbench = app.add_subcommand("msgbench", "Per-message timings");
    msgbench->add_option("--addr", g.addr, "Responder address for --topology tcp-remote");
    auto* appphase = app.add_subcommand("app-phase", "Application-phase scenario timings");
    appphase->add_option("--addr", g.addr, "Responder address for --topology tcp-remote");

    std::string preset;
    auto* diskbench = app.add_subcommand("diskbench", "Disk workload, plain vs secured");
    diskbench->add_option("--preset", preset, "Workload preset")
        ->required()
        ->check(CLI::IsMember({"dd-small", "dd-big", "hdparm", "ioping", "bonnie", "fio-seq-read",
                               "fio-seq-write", "fio-rand-read", "fio-rand-rw"}));

    auto* bootbench = app.add_subcommand("bootbench", "Driver probe time, secured minus plain");

    std::string listen = "127.0.0.1:4433";
    std::string serve_config;
    double serve_seconds = 0;
    auto* serve = app.add_subcommand("serve", "Run a responder on a TCP listener");
    serve->add_option("--listen", listen, "host:port");
    serve->add_option("--config", serve_config, "Responder config (default <fixtures>/responder.json)");
    serve->add_option("--duration-s", serve_seconds, "Stop after this many seconds (0 = until signal)");

    std::string connect_config;
    auto* connect = app.add_subcommand("connect", "Run the full requester flow against a server");
    connect->add_option("--addr", g.addr, "host:port")->required();
    connect->add_option("--config", connect_config, "Requester config (default <fixtures>/requester.json)");

    std::string gen_out;
    auto* gencerts = app.add_subcommand("gencerts", "Write certificate chains, keys and configs");
    gencerts->add_option("--out", gen_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    spdmsim_report* report = nullptr;
    const auto opts = options_from(g);
    if (*msgbench)
    {
        CHECK_OR_RETURN(spdmsim_bench_messages(&opts, &report), "msgbench");
        return emit(g, report);
    }
    if (*appphase)
    {
        CHECK_OR_RETURN(spdmsim_bench_app_phase(&opts, &report), "app-phase");
        return emit(g, report);
    }
    if (*diskbench)
    {
        CHECK_OR_RETURN(spdmsim_bench_disk(&opts, preset.c_str(), &report), "diskbench");
        return emit(g, report);
    }
    if (*bootbench)
    {
        CHECK_OR_RETURN(spdmsim_bench_boot(&opts, &report), "bootbench");
        return emit(g, report);
    }
    if (*gencerts)
    {
        CHECK_OR_RETURN(spdmsim_generate_fixtures(gen_out.c_str()), "gencerts");
        std::printf("fixtures written to %s\n", gen_out.c_str());
        return 0;
    }
    if (*serve)
    {
        const auto cfg = fixture_file(g, serve_config, "responder.json");
        spdmsim_server* server = nullptr;
        CHECK_OR_RETURN(spdmsim_server_start(cfg.c_str(), listen.c_str(), &server), "serve");
        std::printf("listening on port %u\n", static_cast<unsigned>(spdmsim_server_port(server)));
        std::fflush(stdout);
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        const auto deadline = std::chrono::steady_clock::now() +
                              std::chrono::duration<double>(serve_seconds);
        while (!stop_requested &&
               (serve_seconds <= 0 || std::chrono::steady_clock::now() < deadline))
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        spdmsim_server_free(server);
        return 0;
    }
    if (*connect)
        return run_connect(g, fixture_file(g, connect_config, "requester.json"));
    return 1;
}
