// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/bench.hpp>
#include <spdmsim/config.hpp>
#include <spdmsim/devices.hpp>
#include <spdmsim/errors.hpp>
#include <spdmsim/spdmsim.h>

#include <cstring>
#include <new>
#include <string>

using namespace spdmsim;

struct spdmsim_server
{
    std::unique_ptr<transport::TcpServer> server;
};

struct spdmsim_client
{
    std::unique_ptr<Requester> requester;
    // First entry of the configured PSK table.
    Bytes psk_hint;
};

struct spdmsim_report
{
    bench::Report report;
};

static_assert(static_cast<int>(Errc::Internal) == SPDMSIM_INTERNAL);
static_assert(static_cast<int>(Errc::DecryptError) == SPDMSIM_DECRYPT_ERROR);
static_assert(static_cast<int>(Errc::RangeError) == SPDMSIM_RANGE_ERROR);

namespace
{

thread_local std::string last_error;

spdmsim_status set_error(Errc code, const std::string& what)
{
    last_error = what;
    return static_cast<spdmsim_status>(code);
}

// Runs `fn`, translating exceptions into status codes.
template <typename F>
spdmsim_status guarded(F&& fn) noexcept
{
    try
    {
        fn();
        last_error.clear();
        return SPDMSIM_OK;
    }
    catch (const Error& e)
    {
        return set_error(e.code(), e.what());
    }
    catch (const std::bad_alloc&)
    {
        return set_error(Errc::Internal, "out of memory");
    }
    catch (const std::exception& e)
    {
        return set_error(Errc::Internal, e.what());
    }
    catch (...)
    {
        return set_error(Errc::Internal, "unknown exception");
    }
}

void require(const void* p, const char* what)
{
    if (p == nullptr)
        fail(Errc::InvalidArgument, std::string(what) + " is NULL");
}

void copy_out(const Bytes& data, std::uint8_t* out, std::size_t cap, std::size_t* out_len)
{
    require(out_len, "out_len");
    *out_len = data.size();
    if (data.size() > cap)
        fail(Errc::CapacityExceeded, "output buffer holds " + std::to_string(cap) +
                                         " bytes, need " + std::to_string(data.size()));
    if (!data.empty())
    {
        require(out, "out");
        std::memcpy(out, data.data(), data.size());
    }
}

ByteView view(const std::uint8_t* p, std::size_t n)
{
    if (n > 0)
        require(p, "request");
    return ByteView(p, n);
}

spdmsim_bench_options effective(const spdmsim_bench_options* o)
{
    spdmsim_bench_options d;
    spdmsim_bench_options_init(&d);
    if (o == nullptr)
        return d;
    if (o->struct_size < sizeof(spdmsim_bench_options))
        fail(Errc::InvalidArgument, "options struct_size is smaller than this library's");
    return *o;
}

void apply_common(const spdmsim_bench_options& o, std::optional<std::filesystem::path>& fixtures)
{
    if (o.fixtures_dir != nullptr)
        fixtures = o.fixtures_dir;
}

bench::MessageBenchConfig message_config(const spdmsim_bench_options& o, bench::Scenario s)
{
    bench::MessageBenchConfig c;
    c.scenario = s;
    if (o.runs)
        c.runs = o.runs;
    c.warmup = o.warmup;
    c.seed = o.seed;
    switch (o.topology)
    {
        case SPDMSIM_TOPOLOGY_IN_PROCESS: c.topology = bench::Topology::InProcess; break;
        case SPDMSIM_TOPOLOGY_TCP_LOOPBACK: c.topology = bench::Topology::TcpLoopback; break;
        case SPDMSIM_TOPOLOGY_TCP_REMOTE:
            c.topology = bench::Topology::TcpRemote;
            require(o.remote_address, "remote_address");
            c.remote_address = o.remote_address;
            break;
        default: fail(Errc::InvalidArgument, "unknown topology");
    }
    apply_common(o, c.fixtures_dir);
    return c;
}

void emit(spdmsim_report** out, bench::Report r)
{
    *out = new spdmsim_report{std::move(r)};
}

} // namespace

extern "C" {

const char* spdmsim_version(void)
{
    return "1.0.0";
}

const char* spdmsim_status_name(spdmsim_status status)
{
    if (status < SPDMSIM_OK || status > SPDMSIM_INTERNAL)
        return "Unknown";
    return errc_name(static_cast<Errc>(status));
}

const char* spdmsim_last_error(void)
{
    return last_error.c_str();
}

spdmsim_status spdmsim_generate_fixtures(const char* dir)
{
    return guarded([&] {
        require(dir, "dir");
        config::generate_fixtures(dir);
    });
}

spdmsim_status spdmsim_server_start(const char* responder_config, const char* listen_addr,
                                    spdmsim_server** out)
{
    return guarded([&] {
        require(responder_config, "responder_config");
        require(listen_addr, "listen_addr");
        require(out, "out");
        *out = nullptr;
        auto setup = std::make_shared<config::ResponderSetup>(
            config::load_responder_setup(responder_config));
        auto [host, port] = transport::parse_address(listen_addr);
        auto s = std::make_unique<spdmsim_server>();
        s->server = std::make_unique<transport::TcpServer>(host, port, [setup] {
            auto provider = std::make_shared<crypto::OpenSslProvider>();
            auto responder = config::build_responder(*setup, provider);
            auto rng = std::make_shared<devices::RngDevice>();
            rng->attach(*responder);
            return transport::FrameHandler(
                [responder, rng](ByteView frame) { return responder->handle_frame(frame); });
        });
        *out = s.release();
    });
}

uint16_t spdmsim_server_port(const spdmsim_server* server)
{
    return server ? server->server->port() : 0;
}

void spdmsim_server_free(spdmsim_server* server)
{
    if (server == nullptr)
        return;
    try
    {
        server->server->stop();
    }
    catch (...)
    {}
    delete server;
}

spdmsim_status spdmsim_client_connect(const char* requester_config, const char* addr,
                                      spdmsim_client** out)
{
    return guarded([&] {
        require(requester_config, "requester_config");
        require(addr, "addr");
        require(out, "out");
        *out = nullptr;
        auto cfg = config::load_requester_config(requester_config);
        auto [host, port] = transport::parse_address(addr);
        std::shared_ptr<transport::Channel> ch = transport::TcpChannel::connect(host, port);
        auto c = std::make_unique<spdmsim_client>();
        if (!cfg.psk_table.empty())
            c->psk_hint = cfg.psk_table.begin()->first;
        c->requester = std::make_unique<Requester>(
            std::move(cfg), std::make_shared<crypto::OpenSslProvider>(), ch);
        *out = c.release();
    });
}

void spdmsim_client_free(spdmsim_client* client)
{
    delete client;
}

#define SPDMSIM_CLIENT(c)                                                                       \
    require(c, "client");                                                                      \
    Requester& r = *(c)->requester

spdmsim_status spdmsim_client_init_connection(spdmsim_client* client)
{
    return guarded([&] {
        SPDMSIM_CLIENT(client);
        r.init_connection();
    });
}

spdmsim_status spdmsim_client_authenticate(spdmsim_client* client, uint8_t slot)
{
    return guarded([&] {
        SPDMSIM_CLIENT(client);
        r.fetch_digests();
        r.fetch_certificate(slot);
        r.challenge_authenticate(slot);
    });
}

spdmsim_status spdmsim_client_fetch_measurements(spdmsim_client* client,
                                                 spdmsim_measurement_mode mode, size_t* blocks,
                                                 int* signature_verified)
{
    return guarded([&] {
        SPDMSIM_CLIENT(client);
        if (mode != SPDMSIM_MEASURE_ALL_AT_ONCE && mode != SPDMSIM_MEASURE_ONE_BY_ONE)
            fail(Errc::InvalidArgument, "unknown measurement mode");
        auto m = r.fetch_measurements(mode == SPDMSIM_MEASURE_ONE_BY_ONE
                                          ? MeasurementMode::OneByOne
                                          : MeasurementMode::AllAtOnce);
        if (blocks)
            *blocks = m.blocks.size();
        if (signature_verified)
            *signature_verified = m.signature_verified ? 1 : 0;
    });
}

spdmsim_status spdmsim_client_establish_session(spdmsim_client* client,
                                                spdmsim_session_mode mode, uint32_t* session_id)
{
    return guarded([&] {
        SPDMSIM_CLIENT(client);
        require(session_id, "session_id");
        if (mode == SPDMSIM_SESSION_CERT_DHE)
        {
            *session_id = r.establish_session(SessionMode::CertDhe);
            return;
        }
        if (mode != SPDMSIM_SESSION_PSK)
            fail(Errc::InvalidArgument, "unknown session mode");
        if (client->psk_hint.empty())
            fail(Errc::UnknownPskHint, "requester config has no PSK entry");
        *session_id = r.establish_session(SessionMode::Psk, client->psk_hint);
    });
}

spdmsim_status spdmsim_client_heartbeat(spdmsim_client* client, uint32_t session_id)
{
    return guarded([&] {
        SPDMSIM_CLIENT(client);
        r.heartbeat(session_id);
    });
}

spdmsim_status spdmsim_client_key_update(spdmsim_client* client, uint32_t session_id,
                                         spdmsim_key_update_op op)
{
    return guarded([&] {
        SPDMSIM_CLIENT(client);
        if (op != SPDMSIM_UPDATE_KEY && op != SPDMSIM_UPDATE_ALL_KEYS)
            fail(Errc::InvalidArgument, "unknown key update operation");
        r.request_key_update(session_id, static_cast<wire::KeyUpdateOp>(op));
    });
}

spdmsim_status spdmsim_client_end_session(spdmsim_client* client, uint32_t session_id)
{
    return guarded([&] {
        SPDMSIM_CLIENT(client);
        r.end_session(session_id);
    });
}

spdmsim_status spdmsim_client_app_request(spdmsim_client* client, uint32_t session_id,
                                          const uint8_t* request, size_t request_len,
                                          uint8_t* out, size_t out_cap, size_t* out_len)
{
    return guarded([&] {
        SPDMSIM_CLIENT(client);
        copy_out(r.send_app_request(session_id, view(request, request_len)), out, out_cap,
                 out_len);
    });
}

spdmsim_status spdmsim_client_plain_app_request(spdmsim_client* client, const uint8_t* request,
                                                size_t request_len, uint8_t* out,
                                                size_t out_cap, size_t* out_len)
{
    return guarded([&] {
        SPDMSIM_CLIENT(client);
        copy_out(r.send_plain_app_request(view(request, request_len)), out, out_cap, out_len);
    });
}

spdmsim_status spdmsim_client_code_trace(const spdmsim_client* client, uint8_t* out,
                                         size_t out_cap, size_t* out_len)
{
    return guarded([&] {
        require(client, "client");
        Bytes codes;
        for (auto c : client->requester->code_trace())
            codes.push_back(static_cast<std::uint8_t>(c));
        copy_out(codes, out, out_cap, out_len);
    });
}

#undef SPDMSIM_CLIENT

void spdmsim_bench_options_init(spdmsim_bench_options* options)
{
    if (options == nullptr)
        return;
    *options = spdmsim_bench_options{};
    options->struct_size = sizeof(spdmsim_bench_options);
    options->warmup = 1;
    options->scale = 1.0;
    options->seed = 1;
    options->disk_mode = SPDMSIM_DISK_BOTH;
    options->topology = SPDMSIM_TOPOLOGY_IN_PROCESS;
}

spdmsim_status spdmsim_bench_messages(const spdmsim_bench_options* options, spdmsim_report** out)
{
    return guarded([&] {
        require(out, "out");
        const auto o = effective(options);
        emit(out, bench::run_message_bench(message_config(o, bench::Scenario::Full)));
    });
}

spdmsim_status spdmsim_bench_app_phase(const spdmsim_bench_options* options,
                                       spdmsim_report** out)
{
    return guarded([&] {
        require(out, "out");
        const auto o = effective(options);
        emit(out, bench::run_message_bench(message_config(o, bench::Scenario::AppPhase)));
    });
}

spdmsim_status spdmsim_bench_disk(const spdmsim_bench_options* options, const char* preset,
                                  spdmsim_report** out)
{
    return guarded([&] {
        require(out, "out");
        require(preset, "preset");
        const auto o = effective(options);
        auto spec = bench::preset(preset, o.scale);
        if (o.runs)
            spec.runs = o.runs;
        spec.seed = o.seed;
        if (o.seek_ms < 0 || o.per_byte_ns < 0)
            fail(Errc::InvalidArgument, "latency values must be non-negative");
        spec.latency.seek_delay = std::chrono::nanoseconds(static_cast<std::int64_t>(o.seek_ms * 1e6));
        spec.latency.per_byte_delay = std::chrono::nanoseconds(static_cast<std::int64_t>(o.per_byte_ns));
        spec.latency.enabled = o.seek_ms > 0 || o.per_byte_ns > 0;
        switch (o.disk_mode)
        {
            case SPDMSIM_DISK_PLAIN:
                spec.mode = devices::DriverMode::Plain;
                emit(out, bench::run_disk_bench(spec));
                break;
            case SPDMSIM_DISK_SECURED:
                spec.mode = devices::DriverMode::Secured;
                emit(out, bench::run_disk_bench(spec));
                break;
            case SPDMSIM_DISK_BOTH: emit(out, bench::run_disk_comparison(spec)); break;
            default: fail(Errc::InvalidArgument, "unknown disk mode");
        }
    });
}

spdmsim_status spdmsim_bench_boot(const spdmsim_bench_options* options, spdmsim_report** out)
{
    return guarded([&] {
        require(out, "out");
        const auto o = effective(options);
        bench::BootBenchConfig c;
        if (o.runs)
            c.runs = o.runs;
        c.warmup = o.warmup;
        apply_common(o, c.fixtures_dir);
        emit(out, bench::run_bootstrap_bench(c));
    });
}

size_t spdmsim_report_row_count(const spdmsim_report* report)
{
    return report ? report->report.rows.size() : 0;
}

spdmsim_status spdmsim_report_row(const spdmsim_report* report, size_t index, spdmsim_row* out)
{
    return guarded([&] {
        require(report, "report");
        require(out, "out");
        if (index >= report->report.rows.size())
            fail(Errc::IndexOutOfRange, "row " + std::to_string(index) + " of " +
                                            std::to_string(report->report.rows.size()));
        const auto& r = report->report.rows[index];
        *out = {r.label.c_str(), bench::unit_name(r.unit), r.stats.n,
                r.stats.mean,    r.stats.sd,               r.stats.ci95};
    });
}

const char* spdmsim_report_meta(const spdmsim_report* report, const char* key)
{
    if (report == nullptr || key == nullptr)
        return nullptr;
    for (const auto& [k, v] : report->report.metadata)
        if (k == key)
            return v.c_str();
    return nullptr;
}

int spdmsim_report_partial(const spdmsim_report* report)
{
    return report && report->report.partial ? 1 : 0;
}

spdmsim_status spdmsim_report_render(const spdmsim_report* report, spdmsim_format format,
                                     char* out, size_t out_cap, size_t* out_len)
{
    return guarded([&] {
        require(report, "report");
        require(out_len, "out_len");
        const auto text = format == SPDMSIM_FORMAT_CSV ? bench::to_csv(report->report)
                                                       : bench::to_json(report->report);
        *out_len = text.size();
        if (out == nullptr)
            return;
        if (out_cap < text.size() + 1)
            fail(Errc::CapacityExceeded, "buffer too small for the rendered report");
        std::memcpy(out, text.c_str(), text.size() + 1);
    });
}

spdmsim_status spdmsim_report_write(const spdmsim_report* report, spdmsim_format format,
                                    const char* path)
{
    return guarded([&] {
        require(report, "report");
        require(path, "path");
        bench::emit_report(report->report,
                           format == SPDMSIM_FORMAT_CSV ? bench::Format::Csv : bench::Format::Json,
                           path);
    });
}

void spdmsim_report_free(spdmsim_report* report)
{
    delete report;
}

} // extern "C"
