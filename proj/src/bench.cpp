// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/bench.hpp>
#include <spdmsim/config.hpp>
#include <spdmsim/errors.hpp>
#include <spdmsim/protocol.hpp>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <sys/utsname.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace spdmsim::bench
{

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using nanoseconds = std::chrono::nanoseconds;
using devices::BlockOpcode;
using devices::DriverMode;
using devices::kSectorSize;

namespace
{

double seconds(nanoseconds d)
{
    return std::chrono::duration<double>(d).count();
}

double seconds_since(Clock::time_point t0)
{
    return seconds(Clock::now() - t0);
}

const char* mode_name(DriverMode m)
{
    return m == DriverMode::Plain ? "plain" : "secured";
}

std::string fmt_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

// ---------------------------------------------------------------------------
// Statistics

const char* unit_name(Unit unit) noexcept
{
    switch (unit)
    {
        case Unit::Seconds: return "seconds";
        case Unit::BytesPerSecond: return "bytes/s";
        case Unit::Iops: return "iops";
    }
    return "?";
}

Unit parse_unit(const std::string& name)
{
    for (auto u : {Unit::Seconds, Unit::BytesPerSecond, Unit::Iops})
        if (name == unit_name(u))
            return u;
    fail(Errc::InvalidArgument, "unknown unit '" + name + "'");
}

double t_critical_95(std::size_t df)
{
    if (df == 0)
        fail(Errc::InsufficientSamples, "no degrees of freedom");
    boost::math::students_t dist(static_cast<double>(df));
    return boost::math::quantile(boost::math::complement(dist, 0.025));
}

StatSummary summarize(std::span<const double> values)
{
    if (values.size() < 2)
        fail(Errc::InsufficientSamples,
             "need at least 2 samples, got " + std::to_string(values.size()));
    StatSummary s;
    s.n = values.size();
    const double n = static_cast<double>(s.n);
    double sum = 0;
    for (double v : values)
        sum += v;
    s.mean = sum / n;
    if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; }))
    {
        s.mean = values[0];
        return s;
    }
    double ss = 0;
    for (double v : values)
        ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / (n - 1));
    s.ci95 = t_critical_95(s.n - 1) * s.sd / std::sqrt(n);
    return s;
}

StatSummary summarize(const SampleSet& samples)
{
    return summarize(std::span<const double>(samples.values));
}

// ---------------------------------------------------------------------------
// Reports

void Report::set_meta(const std::string& key, const std::string& value)
{
    for (auto& [k, v] : metadata)
        if (k == key)
        {
            v = value;
            return;
        }
    metadata.emplace_back(key, value);
}

std::optional<std::string> Report::meta(const std::string& key) const
{
    for (const auto& [k, v] : metadata)
        if (k == key)
            return v;
    return std::nullopt;
}

void Report::add_row(const std::string& label, const SampleSet& samples)
{
    if (samples.values.size() < 2)
        return;
    rows.push_back({label, samples.unit, summarize(samples), samples.values});
}

const Row* Report::find(const std::string& label) const
{
    for (const auto& r : rows)
        if (r.label == label)
            return &r;
    return nullptr;
}

Format parse_format(const std::string& name)
{
    if (name == "json")
        return Format::Json;
    if (name == "csv")
        return Format::Csv;
    fail(Errc::InvalidArgument, "format must be json or csv");
}

namespace
{
using ojson = nlohmann::ordered_json;
constexpr const char* kSchema = "spdmsim-report/1";
} // namespace

std::string to_json(const Report& report)
{
    ojson doc;
    doc["schema"] = kSchema;
    doc["suite"] = report.suite;
    doc["partial"] = report.partial;
    doc["error"] = report.error;
    ojson meta = ojson::object();
    for (const auto& [k, v] : report.metadata)
        meta[k] = v;
    doc["metadata"] = meta;
    ojson rows = ojson::array();
    for (const auto& r : report.rows)
    {
        ojson row;
        row["label"] = r.label;
        row["unit"] = unit_name(r.unit);
        row["n"] = r.stats.n;
        row["mean"] = r.stats.mean;
        row["sd"] = r.stats.sd;
        row["ci95"] = r.stats.ci95;
        row["samples"] = r.samples;
        rows.push_back(row);
    }
    doc["rows"] = rows;
    return doc.dump(2) + "\n";
}

Report report_from_json(const std::string& text)
{
    try
    {
        const auto doc = ojson::parse(text);
        if (doc.at("schema").get<std::string>() != kSchema)
            fail(Errc::MalformedMessage, "unsupported report schema");
        Report r;
        r.suite = doc.at("suite").get<std::string>();
        r.partial = doc.at("partial").get<bool>();
        r.error = doc.at("error").get<std::string>();
        for (const auto& [k, v] : doc.at("metadata").items())
            r.metadata.emplace_back(k, v.get<std::string>());
        for (const auto& row : doc.at("rows"))
        {
            Row out;
            out.label = row.at("label").get<std::string>();
            out.unit = parse_unit(row.at("unit").get<std::string>());
            out.stats.n = row.at("n").get<std::size_t>();
            out.stats.mean = row.at("mean").get<double>();
            out.stats.sd = row.at("sd").get<double>();
            out.stats.ci95 = row.at("ci95").get<double>();
            out.samples = row.at("samples").get<std::vector<double>>();
            r.rows.push_back(std::move(out));
        }
        return r;
    }
    catch (const ojson::exception& e)
    {
        fail(Errc::MalformedMessage, std::string("report JSON: ") + e.what());
    }
    catch (const Error& e)
    {
        fail(Errc::MalformedMessage, e.what());
    }
}

namespace
{

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s)
    {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace

std::string to_csv(const Report& report)
{
    std::string out = "label,unit,n,mean,sd,ci95\n";
    for (const auto& r : report.rows)
    {
        out += csv_field(r.label) + "," + unit_name(r.unit) + "," + std::to_string(r.stats.n) +
               "," + fmt_double(r.stats.mean) + "," + fmt_double(r.stats.sd) + "," +
               fmt_double(r.stats.ci95) + "\n";
    }
    return out;
}

void emit_report(const Report& report, Format format, const fs::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(Errc::IoError, "cannot open " + path.string());
    out << (format == Format::Json ? to_json(report) : to_csv(report));
    out.flush();
    if (!out)
        fail(Errc::IoError, "cannot write " + path.string());
}

std::string host_description()
{
    utsname u{};
    std::string out;
    if (uname(&u) == 0)
        out = std::string(u.sysname) + " " + u.release + " " + u.machine;
    else
        out = "unknown";
    return out + ", " + std::to_string(std::thread::hardware_concurrency()) + " CPU(s)";
}

// ---------------------------------------------------------------------------
// Fixtures shared by the benches

namespace
{

struct Fixtures
{
    config::FixturePaths paths;
    config::ResponderSetup responder;
    RequesterConfig requester;
    Bytes psk_hint;
};

// Generated once per process when no directory is given.
const fs::path& scratch_fixture_dir()
{
    struct Scratch
    {
        fs::path dir;
        Scratch()
        {
            dir = fs::temp_directory_path() /
                  ("spdmsim-bench-" + std::to_string(::getpid()));
            config::generate_fixtures(dir);
        }
        ~Scratch()
        {
            std::error_code ec;
            fs::remove_all(dir, ec);
        }
    };
    static const Scratch scratch;
    return scratch.dir;
}

Fixtures load_fixtures(const std::optional<fs::path>& dir)
{
    Fixtures f;
    f.paths = config::fixture_paths(dir ? *dir : scratch_fixture_dir());
    f.responder = config::load_responder_setup(f.paths.responder_config);
    f.requester = config::load_requester_config(f.paths.requester_config);
    // Every run fetches the chain over the wire.
    f.requester.use_cache = false;
    if (!f.requester.psk_table.empty())
        f.psk_hint = f.requester.psk_table.begin()->first;
    return f;
}

void describe_fixtures(Report& r, const Fixtures& f)
{
    std::size_t chain = 0;
    if (!f.responder.slots.empty())
        chain = f.responder.slots.begin()->second.chain.serialize().size();
    r.set_meta("responder_chain_bytes", std::to_string(chain));
    const auto blocks = f.responder.measurements.empty()
                            ? protocol::default_measurements(crypto::OpenSslProvider())
                            : f.responder.measurements;
    r.set_meta("measurement_blocks", std::to_string(blocks.size()) + "x" +
                                         std::to_string(blocks.empty() ? 0 : blocks[0].payload.size()));
    r.set_meta("cert_chunk_size", std::to_string(f.requester.cert_chunk_size));
    r.set_meta("mutual_auth", f.requester.credential && f.responder.config.mutual_auth
                                  ? "enabled"
                                  : "disabled");
}

// Responder-side handling times collected through the timing hook.
class EventLog
{
  public:
    void record(wire::Code code, nanoseconds d)
    {
        std::lock_guard lock(mutex_);
        events_.emplace_back(code, d);
    }
    std::vector<std::pair<wire::Code, nanoseconds>> take()
    {
        std::lock_guard lock(mutex_);
        return std::exchange(events_, {});
    }

  private:
    std::mutex mutex_;
    std::vector<std::pair<wire::Code, nanoseconds>> events_;
};

double total_seconds(const std::vector<std::pair<wire::Code, nanoseconds>>& events)
{
    nanoseconds sum{0};
    for (const auto& e : events)
        sum += e.second;
    return seconds(sum);
}

} // namespace

// ---------------------------------------------------------------------------
// Message bench

const char* topology_name(Topology t) noexcept
{
    switch (t)
    {
        case Topology::InProcess: return "in-process";
        case Topology::TcpLoopback: return "tcp-loopback";
        case Topology::TcpRemote: return "tcp-remote";
    }
    return "?";
}

const std::vector<std::string>& message_steps()
{
    static const std::vector<std::string> steps = {
        "init",
        "GetVersion",
        "GetCapabilities",
        "NegotiateAlgorithms",
        "GetDigests",
        "GetCertificate",
        "Challenge",
        "GetMeasurements(one-by-one)",
        "GetMeasurements(all-at-once)",
        "KeyExchange(CertDhe)",
        "Heartbeat",
        "KeyUpdate",
        "AppRequest(secured)",
        "AppRequest(plain)",
        "EndSession",
        "KeyExchange(PSK)",
        "CertificateLoadFromDisk",
    };
    return steps;
}

const std::vector<std::string>& app_phase_steps()
{
    static const std::vector<std::string> steps = {
        "KeyExchange(CertDhe)", "Heartbeat", "KeyUpdate", "AppRequest(secured)", "EndSession",
    };
    return steps;
}

const std::vector<std::string>& bootstrap_steps()
{
    static const std::vector<std::string> steps = {
        "CertificateLoadFromDisk", "GetVersion",     "GetCapabilities", "NegotiateAlgorithms",
        "GetDigests",              "GetCertificate", "Challenge",       "KeyExchange(CertDhe)",
    };
    return steps;
}

namespace
{

// Builds per-run channels for one topology.
class Endpoint
{
  public:
    Endpoint(const MessageBenchConfig& cfg, const Fixtures& fx, EventLog& events) :
        cfg_(cfg), fx_(fx), events_(events)
    {
        if (cfg.topology == Topology::TcpLoopback)
        {
            server_ = std::make_unique<transport::TcpServer>("127.0.0.1", 0, [this] {
                auto start = Clock::now();
                auto r = make_responder();
                factory_ns_.store((Clock::now() - start).count());
                return transport::FrameHandler(
                    [r](ByteView frame) { return r.responder->handle_frame(frame); });
            });
        }
    }

    // Fresh channel (and, in process, a fresh responder) for one run.
    std::shared_ptr<transport::Channel> open()
    {
        switch (cfg_.topology)
        {
            case Topology::InProcess:
            {
                current_ = make_responder();
                auto r = current_.responder;
                return std::make_shared<transport::LoopbackChannel>(
                    [r](ByteView frame) { return r->handle_frame(frame); });
            }
            case Topology::TcpLoopback:
                factory_ns_.store(-1);
                return transport::TcpChannel::connect("127.0.0.1", server_->port());
            case Topology::TcpRemote:
            {
                auto [host, port] = transport::parse_address(cfg_.remote_address);
                return transport::TcpChannel::connect(host, port);
            }
        }
        fail(Errc::Internal, "unknown topology");
    }

    // Responder construction time of the latest connection, if observable.
    std::optional<double> responder_init() const
    {
        if (cfg_.topology == Topology::InProcess)
            return seconds(current_.init);
        const auto ns = factory_ns_.load();
        if (ns < 0)
            return std::nullopt;
        return seconds(nanoseconds(ns));
    }

    bool responder_visible() const noexcept
    {
        return cfg_.topology != Topology::TcpRemote;
    }

  private:
    struct Served
    {
        std::shared_ptr<Responder> responder;
        std::shared_ptr<devices::RngDevice> rng;
        nanoseconds init{0};
    };

    Served make_responder()
    {
        Served s;
        const auto start = Clock::now();
        auto provider = std::make_shared<crypto::OpenSslProvider>();
        s.responder = config::build_responder(fx_.responder, provider);
        s.rng = std::make_shared<devices::RngDevice>(cfg_.seed);
        s.rng->attach(*s.responder);
        s.init = Clock::now() - start;
        auto* ev = &events_;
        s.responder->set_timing_hook([ev](wire::Code c, bool, nanoseconds d) { ev->record(c, d); });
        return s;
    }

    const MessageBenchConfig& cfg_;
    const Fixtures& fx_;
    EventLog& events_;
    std::unique_ptr<transport::TcpServer> server_;
    std::atomic<std::int64_t> factory_ns_{-1};
    Served current_;
};

using Samples = std::map<std::string, std::vector<double>>;

class MessageRun
{
  public:
    MessageRun(const MessageBenchConfig& cfg, const Fixtures& fx, Endpoint& ep, EventLog& events,
               Samples& req, Samples& rsp) :
        cfg_(cfg), fx_(fx), ep_(ep), events_(events), req_(req), rsp_(rsp)
    {}

    void execute()
    {
        events_.take();
        const auto t0 = Clock::now();
        auto channel = ep_.open();
        auto provider = std::make_shared<crypto::OpenSslProvider>();
        Requester requester(fx_.requester, provider, channel);
        const double init = seconds_since(t0);

        std::map<wire::Code, double> exchange;
        requester.set_exchange_hook(
            [&](wire::Code c, nanoseconds d) { exchange[c] += seconds(d); });

        if (cfg_.scenario == Scenario::AppPhase)
        {
            requester.init_connection();
            requester.fetch_digests();
            requester.fetch_certificate(0);
            requester.challenge_authenticate(0);
            events_.take();
            app_phase(requester);
            return;
        }

        record_req("init", init);
        if (auto ri = ep_.responder_init())
            record_rsp("init", *ri);

        requester.init_connection();
        const auto ev = events_.take();
        for (auto [code, label] :
             {std::pair{wire::Code::GetVersion, "GetVersion"},
              std::pair{wire::Code::GetCapabilities, "GetCapabilities"},
              std::pair{wire::Code::NegotiateAlgorithms, "NegotiateAlgorithms"}})
        {
            record_req(label, exchange[code]);
            nanoseconds sum{0};
            for (const auto& e : ev)
                if (e.first == code)
                    sum += e.second;
            record_rsp(label, seconds(sum));
        }
        requester.set_exchange_hook({});

        step("GetDigests", [&] { requester.fetch_digests(); });
        step("GetCertificate", [&] { requester.fetch_certificate(0); });
        step("Challenge", [&] { requester.challenge_authenticate(0); });
        step("GetMeasurements(one-by-one)",
             [&] { requester.fetch_measurements(MeasurementMode::OneByOne); });
        step("GetMeasurements(all-at-once)",
             [&] { requester.fetch_measurements(MeasurementMode::AllAtOnce); });
        std::uint32_t sid = 0;
        step("KeyExchange(CertDhe)", [&] { sid = requester.establish_session(); });
        step("Heartbeat", [&] { requester.heartbeat(sid); });
        step("KeyUpdate", [&] { requester.request_key_update(sid, wire::KeyUpdateOp::UpdateKey); });
        step("AppRequest(secured)", [&] { devices::rng_request(requester, sid); });
        step("AppRequest(plain)", [&] { devices::rng_request(requester, std::nullopt); });
        step("EndSession", [&] { requester.end_session(sid); });
        if (!fx_.psk_hint.empty())
        {
            std::uint32_t psid = 0;
            step("KeyExchange(PSK)",
                 [&] { psid = requester.establish_session(SessionMode::Psk, fx_.psk_hint); });
            requester.end_session(psid);
        }
        step("CertificateLoadFromDisk", [&] {
            config::load_credential(fx_.paths.requester_chain, fx_.paths.requester_key);
        }, false);
    }

  private:
    void app_phase(Requester& requester)
    {
        std::uint32_t sid = 0;
        step("KeyExchange(CertDhe)", [&] { sid = requester.establish_session(); });
        step("Heartbeat", [&] { requester.heartbeat(sid); });
        step("KeyUpdate", [&] { requester.request_key_update(sid, wire::KeyUpdateOp::UpdateKey); });
        step("AppRequest(secured)", [&] { devices::rng_request(requester, sid); });
        step("EndSession", [&] { requester.end_session(sid); });
    }

    template <typename F>
    void step(const std::string& label, F&& fn, bool has_responder = true)
    {
        events_.take();
        const auto t0 = Clock::now();
        fn();
        record_req(label, seconds_since(t0));
        if (has_responder)
            record_rsp(label, total_seconds(events_.take()));
    }

    void record_req(const std::string& label, double v)
    {
        pending_req_.emplace_back(label, v);
    }
    void record_rsp(const std::string& label, double v)
    {
        if (ep_.responder_visible())
            pending_rsp_.emplace_back(label, v);
    }

  public:
    // Samples are committed only for runs that completed.
    void commit()
    {
        for (auto& [l, v] : pending_req_)
            req_[l].push_back(v);
        for (auto& [l, v] : pending_rsp_)
            rsp_[l].push_back(v);
    }

  private:
    const MessageBenchConfig& cfg_;
    const Fixtures& fx_;
    Endpoint& ep_;
    EventLog& events_;
    Samples& req_;
    Samples& rsp_;
    std::vector<std::pair<std::string, double>> pending_req_;
    std::vector<std::pair<std::string, double>> pending_rsp_;
};

} // namespace

Report run_message_bench(const MessageBenchConfig& cfg)
{
    if (cfg.runs < 2)
        fail(Errc::InsufficientSamples, "message bench needs at least 2 runs");
    if (cfg.topology == Topology::TcpRemote && cfg.remote_address.empty())
        fail(Errc::InvalidArgument, "remote topology needs an address");
    const auto fx = load_fixtures(cfg.fixtures_dir);

    Report report;
    report.suite = cfg.scenario == Scenario::Full ? "msgbench" : "app-phase";
    report.set_meta("topology", topology_name(cfg.topology));
    report.set_meta("runs", std::to_string(cfg.runs));
    report.set_meta("warmup", std::to_string(cfg.warmup));
    report.set_meta("seed", std::to_string(cfg.seed));
    describe_fixtures(report, fx);
    report.set_meta("host", host_description());
    if (cfg.topology == Topology::TcpRemote)
        report.set_meta("responder_timings", "unavailable (remote process)");

    EventLog events;
    Endpoint ep(cfg, fx, events);
    Samples req, rsp;
    std::size_t completed = 0;
    try
    {
        for (std::size_t i = 0; i < cfg.warmup + cfg.runs; ++i)
        {
            Samples scratch_req, scratch_rsp;
            const bool timed = i >= cfg.warmup;
            MessageRun run(cfg, fx, ep, events, timed ? req : scratch_req,
                           timed ? rsp : scratch_rsp);
            run.execute();
            run.commit();
            if (timed)
                ++completed;
        }
    }
    catch (const Error& e)
    {
        report.partial = true;
        report.error = e.what();
    }
    report.set_meta("completed_runs", std::to_string(completed));

    const auto& steps = cfg.scenario == Scenario::Full ? message_steps() : app_phase_steps();
    for (const auto& s : steps)
        if (auto it = req.find(s); it != req.end())
            report.add_row("requester/" + s, {Unit::Seconds, it->second});
    for (const auto& s : steps)
        if (auto it = rsp.find(s); it != rsp.end())
            report.add_row("responder/" + s, {Unit::Seconds, it->second});
    return report;
}

// ---------------------------------------------------------------------------
// Disk bench

const char* pattern_name(Pattern p) noexcept
{
    switch (p)
    {
        case Pattern::SeqRead: return "seq-read";
        case Pattern::SeqWrite: return "seq-write";
        case Pattern::RandRead: return "rand-read";
        case Pattern::RandRW: return "rand-rw";
        case Pattern::Ping: return "ping";
        case Pattern::MultiFileSeq: return "multi-file-seq";
    }
    return "?";
}

void validate(const WorkloadSpec& s)
{
    auto bad = [](const std::string& why) { fail(Errc::InvalidArgument, "workload: " + why); };
    if (s.block_size == 0 || s.block_size % kSectorSize != 0)
        bad("block_size must be a positive multiple of 512");
    if (s.block_size > (8u << 20))
        bad("block_size above 8 MiB");
    if (s.device_bytes < s.block_size || s.device_bytes % kSectorSize != 0)
        bad("device_bytes must hold at least one block");
    if (s.runs < 2)
        bad("runs must be at least 2");
    const bool sequential = s.pattern == Pattern::SeqRead || s.pattern == Pattern::SeqWrite ||
                            s.pattern == Pattern::MultiFileSeq;
    if (s.pattern != Pattern::Ping && s.total_bytes < s.block_size)
        bad("total_bytes below one block");
    if (sequential && s.total_bytes % s.block_size != 0)
        bad("block_size must divide total_bytes for sequential patterns");
    if (s.pattern == Pattern::MultiFileSeq)
    {
        if (s.files == 0 || s.total_bytes % (s.files * s.block_size) != 0)
            bad("total_bytes must split into whole blocks per file");
        if (s.total_bytes > s.device_bytes)
            bad("files do not fit the device");
    }
    if (s.pattern == Pattern::Ping && s.pings == 0)
        bad("pings must be positive");
}

const std::vector<std::string>& preset_names()
{
    static const std::vector<std::string> names = {
        "dd-small",      "dd-big",        "hdparm", "ioping", "bonnie",
        "fio-seq-read",  "fio-seq-write", "fio-rand-read", "fio-rand-rw",
    };
    return names;
}

WorkloadSpec preset(const std::string& name, double scale)
{
    if (!(scale > 0))
        fail(Errc::InvalidArgument, "scale must be positive");
    const std::uint64_t base = devices::kDefaultCapacityBytes;
    auto scaled = [&](std::size_t block) {
        const auto blocks = static_cast<std::uint64_t>(std::llround(double(base) * scale / double(block)));
        return std::max<std::uint64_t>(1, blocks) * block;
    };
    WorkloadSpec s;
    s.name = name;
    if (name == "dd-small" || name == "dd-big")
    {
        s.pattern = Pattern::SeqWrite;
        s.block_size = name == "dd-small" ? 4096 : (8u << 20);
        s.fsync_at_end = true;
    }
    else if (name == "hdparm" || name == "fio-seq-read" || name == "fio-seq-write")
    {
        s.pattern = name == "fio-seq-write" ? Pattern::SeqWrite : Pattern::SeqRead;
        s.block_size = 1024 * 1024;
        s.fsync_every = 10000;
    }
    else if (name == "ioping")
    {
        s.pattern = Pattern::Ping;
        s.block_size = 4096;
        s.pings = 10;
    }
    else if (name == "bonnie")
    {
        s.pattern = Pattern::MultiFileSeq;
        s.block_size = 8192;
        s.files = 4;
        s.total_bytes = scaled(s.block_size * s.files);
    }
    else if (name == "fio-rand-read" || name == "fio-rand-rw")
    {
        s.pattern = name == "fio-rand-read" ? Pattern::RandRead : Pattern::RandRW;
        s.block_size = 4096;
        s.fsync_every = 1;
    }
    else
    {
        fail(Errc::InvalidArgument, "unknown preset '" + name + "'");
    }
    if (s.pattern != Pattern::MultiFileSeq)
        s.total_bytes = scaled(s.block_size);
    s.device_bytes = std::max<std::uint64_t>(base, s.total_bytes);
    s.device_bytes = (s.device_bytes + s.block_size - 1) / s.block_size * s.block_size;
    return s;
}

std::vector<BlockOp> generate_trace(const WorkloadSpec& s, std::size_t run)
{
    validate(s);
    std::mt19937_64 rng(s.seed * 0x9E3779B97F4A7C15ull + run);
    const auto block_sectors = static_cast<std::uint32_t>(s.block_size / kSectorSize);
    const std::uint64_t device_blocks = s.device_bytes / s.block_size;
    std::uniform_int_distribution<std::uint64_t> pick(0, device_blocks - 1);
    std::vector<BlockOp> ops;
    std::size_t writes = 0;
    auto push = [&](BlockOpcode op, std::uint64_t block) {
        ops.push_back({op, block * block_sectors, block_sectors});
        if (op == BlockOpcode::Write && s.fsync_every > 0 && ++writes % s.fsync_every == 0)
            ops.push_back({BlockOpcode::Flush, 0, 0});
    };
    const std::uint64_t n = s.total_bytes / s.block_size;
    switch (s.pattern)
    {
        case Pattern::SeqRead:
        case Pattern::SeqWrite:
        {
            const auto op = s.pattern == Pattern::SeqRead ? BlockOpcode::Read : BlockOpcode::Write;
            for (std::uint64_t i = 0; i < n; ++i)
                push(op, i % device_blocks);
            break;
        }
        case Pattern::RandRead:
            for (std::uint64_t i = 0; i < n; ++i)
                push(BlockOpcode::Read, pick(rng));
            break;
        case Pattern::RandRW:
            for (std::uint64_t i = 0; i < n; ++i)
            {
                const auto op = (rng() & 1) ? BlockOpcode::Write : BlockOpcode::Read;
                push(op, pick(rng));
            }
            break;
        case Pattern::Ping:
            for (std::size_t i = 0; i < s.pings; ++i)
                push(BlockOpcode::Read, pick(rng));
            for (std::size_t i = 0; i < s.pings; ++i)
                push(BlockOpcode::Write, pick(rng));
            break;
        case Pattern::MultiFileSeq:
        {
            const std::uint64_t per_file = n / s.files;
            for (std::size_t f = 0; f < s.files; ++f)
                for (std::uint64_t i = 0; i < per_file; ++i)
                    push(BlockOpcode::Write, f * per_file + i);
            ops.push_back({BlockOpcode::Flush, 0, 0});
            for (std::size_t f = 0; f < s.files; ++f)
                for (std::uint64_t i = 0; i < per_file; ++i)
                    push(BlockOpcode::Read, f * per_file + i);
            break;
        }
    }
    if (s.fsync_at_end)
        ops.push_back({BlockOpcode::Flush, 0, 0});
    return ops;
}

std::uint64_t trace_hash(std::span<const devices::BlockRequest> requests)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&](std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i)
        {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& r : requests)
    {
        mix(static_cast<std::uint8_t>(r.opcode), 1);
        mix(r.sector, 8);
        mix(r.length_bytes, 4);
    }
    return h;
}

namespace
{

std::string hex64(std::uint64_t v)
{
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct RunResult
{
    double elapsed = 0;
    std::size_t reads = 0;
    std::size_t writes = 0;
    std::vector<double> read_latency;
    std::vector<double> write_latency;
    // MultiFileSeq split.
    double write_phase = 0;
    double read_phase = 0;
    std::uint64_t trace_hash = 0;
};

class DiskRunner
{
  public:
    explicit DiskRunner(const WorkloadSpec& spec) :
        spec_(spec), fx_(load_fixtures(std::nullopt)), payload_(spec.block_size)
    {
        for (std::size_t i = 0; i < payload_.size(); ++i)
            payload_[i] = static_cast<std::uint8_t>(i * 7 + 3);
    }

    RunResult run(DriverMode mode, std::size_t index)
    {
        const auto ops = generate_trace(spec_, index);
        auto provider = std::make_shared<crypto::OpenSslProvider>();
        devices::BlockDeviceConfig dc;
        dc.capacity_sectors = spec_.device_bytes / kSectorSize;
        dc.latency = spec_.latency;
        auto responder = config::build_responder(fx_.responder, provider);
        auto device = std::make_shared<devices::BlockDevice>(dc, responder);
        std::vector<devices::BlockRequest> seen;
        seen.reserve(ops.size());
        device->set_service_hook([&](const devices::BlockRequest& r) {
            seen.push_back({r.opcode, r.sector, r.length_bytes, {}});
        });
        auto channel = std::make_shared<transport::LoopbackChannel>(
            [device](ByteView frame) { return device->handle_frame(frame); });
        devices::BlockDriver driver(channel, mode, fx_.requester, provider);

        RunResult out;
        const auto start = Clock::now();
        auto phase_start = start;
        bool read_phase = false;
        for (const auto& op : ops)
        {
            const auto t0 = Clock::now();
            switch (op.opcode)
            {
                case BlockOpcode::Read:
                    if (!read_phase && spec_.pattern == Pattern::MultiFileSeq)
                    {
                        read_phase = true;
                        out.write_phase = seconds(t0 - phase_start);
                        phase_start = t0;
                    }
                    driver.read_sectors(op.sector, op.sectors);
                    out.read_latency.push_back(seconds_since(t0));
                    ++out.reads;
                    break;
                case BlockOpcode::Write:
                    driver.write_sectors(op.sector, payload_);
                    out.write_latency.push_back(seconds_since(t0));
                    ++out.writes;
                    break;
                case BlockOpcode::Flush: driver.flush(); break;
                case BlockOpcode::Spdm: break;
            }
        }
        const auto end = Clock::now();
        out.elapsed = seconds(end - start);
        out.read_phase = seconds(end - phase_start);
        out.trace_hash = trace_hash(seen);
        return out;
    }

  private:
    const WorkloadSpec& spec_;
    Fixtures fx_;
    Bytes payload_;
};

// Adds the pattern's metric rows for one mode.
void add_disk_rows(Report& report, const WorkloadSpec& s, DriverMode mode,
                   const std::vector<RunResult>& runs)
{
    const std::string prefix = s.name + "/" + mode_name(mode);
    SampleSet main, iops, read, write;
    for (const auto& r : runs)
    {
        const double bytes = double(r.reads + r.writes) * double(s.block_size);
        switch (s.pattern)
        {
            case Pattern::SeqRead:
            case Pattern::SeqWrite:
                main.unit = Unit::BytesPerSecond;
                main.values.push_back(bytes / r.elapsed);
                iops.unit = Unit::Iops;
                iops.values.push_back(double(r.reads + r.writes) / r.elapsed);
                break;
            case Pattern::RandRead:
            case Pattern::RandRW:
                main.unit = Unit::Iops;
                main.values.push_back(double(r.reads + r.writes) / r.elapsed);
                read.unit = write.unit = Unit::Iops;
                if (s.pattern == Pattern::RandRW)
                {
                    read.values.push_back(double(r.reads) / r.elapsed);
                    write.values.push_back(double(r.writes) / r.elapsed);
                }
                break;
            case Pattern::Ping:
                read.values.insert(read.values.end(), r.read_latency.begin(), r.read_latency.end());
                write.values.insert(write.values.end(), r.write_latency.begin(),
                                    r.write_latency.end());
                break;
            case Pattern::MultiFileSeq:
                read.unit = write.unit = Unit::BytesPerSecond;
                write.values.push_back(double(r.writes) * double(s.block_size) / r.write_phase);
                read.values.push_back(double(r.reads) * double(s.block_size) / r.read_phase);
                break;
        }
    }
    switch (s.pattern)
    {
        case Pattern::SeqRead:
        case Pattern::SeqWrite:
            report.add_row(prefix, main);
            report.add_row(prefix + "/iops", iops);
            break;
        case Pattern::RandRead: report.add_row(prefix, main); break;
        case Pattern::RandRW:
            report.add_row(prefix, main);
            report.add_row(prefix + "/read", read);
            report.add_row(prefix + "/write", write);
            break;
        case Pattern::Ping:
            report.add_row(prefix + "/read-latency", read);
            report.add_row(prefix + "/write-latency", write);
            break;
        case Pattern::MultiFileSeq:
            report.add_row(prefix + "/write", write);
            report.add_row(prefix + "/read", read);
            break;
    }
}

void describe_workload(Report& r, const WorkloadSpec& s)
{
    r.set_meta("preset", s.name);
    r.set_meta("pattern", pattern_name(s.pattern));
    r.set_meta("block_size", std::to_string(s.block_size));
    r.set_meta("total_bytes", std::to_string(s.total_bytes));
    r.set_meta("device_bytes", std::to_string(s.device_bytes));
    r.set_meta("fsync_every", std::to_string(s.fsync_every));
    r.set_meta("fsync_at_end", s.fsync_at_end ? "true" : "false");
    r.set_meta("latency_enabled", s.latency.enabled ? "true" : "false");
    r.set_meta("seek_delay_ms", fmt_double(std::chrono::duration<double, std::milli>(
                                               s.latency.seek_delay).count()));
    r.set_meta("per_byte_delay_ns", std::to_string(s.latency.per_byte_delay.count()));
    r.set_meta("runs", std::to_string(s.runs));
    r.set_meta("seed", std::to_string(s.seed));
    r.set_meta("topology", topology_name(Topology::InProcess));
    r.set_meta("host", host_description());
}

} // namespace

Report run_disk_bench(const WorkloadSpec& spec)
{
    validate(spec);
    Report report;
    report.suite = "diskbench";
    describe_workload(report, spec);
    report.set_meta("mode", mode_name(spec.mode));
    DiskRunner runner(spec);
    std::vector<RunResult> results;
    try
    {
        for (std::size_t i = 0; i < spec.runs; ++i)
            results.push_back(runner.run(spec.mode, i));
    }
    catch (const Error& e)
    {
        report.partial = true;
        report.error = e.what();
    }
    add_disk_rows(report, spec, spec.mode, results);
    return report;
}

Report run_disk_comparison(const WorkloadSpec& spec)
{
    validate(spec);
    Report report;
    report.suite = "diskbench";
    describe_workload(report, spec);
    report.set_meta("mode", "plain+secured");
    DiskRunner runner(spec);
    std::vector<RunResult> plain, secured;
    try
    {
        for (std::size_t i = 0; i < spec.runs; ++i)
        {
            plain.push_back(runner.run(DriverMode::Plain, i));
            secured.push_back(runner.run(DriverMode::Secured, i));
        }
    }
    catch (const Error& e)
    {
        report.partial = true;
        report.error = e.what();
    }
    bool identical = plain.size() == secured.size();
    for (std::size_t i = 0; i < std::min(plain.size(), secured.size()); ++i)
        identical = identical && plain[i].trace_hash == secured[i].trace_hash;
    auto combine = [](const std::vector<RunResult>& rs) {
        std::uint64_t h = 0;
        for (const auto& r : rs)
            h = h * 0x100000001b3ull ^ r.trace_hash;
        return hex64(h);
    };
    report.set_meta("trace_hash_plain", combine(plain));
    report.set_meta("trace_hash_secured", combine(secured));
    report.set_meta("traces_identical", identical ? "true" : "false");
    add_disk_rows(report, spec, DriverMode::Plain, plain);
    add_disk_rows(report, spec, DriverMode::Secured, secured);
    return report;
}

// ---------------------------------------------------------------------------
// Bootstrap bench

Report run_bootstrap_bench(const BootBenchConfig& cfg)
{
    if (cfg.runs < 2)
        fail(Errc::InsufficientSamples, "boot bench needs at least 2 runs");
    const auto fx = load_fixtures(cfg.fixtures_dir);
    Report report;
    report.suite = "bootbench";
    report.set_meta("runs", std::to_string(cfg.runs));
    report.set_meta("warmup", std::to_string(cfg.warmup));
    report.set_meta("topology", topology_name(Topology::InProcess));
    describe_fixtures(report, fx);
    report.set_meta("host", host_description());

    auto fresh_channel = [&](std::shared_ptr<crypto::CryptoProvider> provider) {
        auto device = std::make_shared<devices::BlockDevice>(
            devices::BlockDeviceConfig{}, config::build_responder(fx.responder, provider));
        return std::make_shared<transport::LoopbackChannel>(
            [device](ByteView frame) { return device->handle_frame(frame); });
    };
    RequesterConfig rc = fx.requester;
    rc.credential.reset();

    SampleSet plain, secured, delta;
    std::map<std::string, std::vector<double>> steps;
    std::vector<std::string> step_order;
    try
    {
        for (std::size_t i = 0; i < cfg.warmup + cfg.runs; ++i)
        {
            auto provider = std::make_shared<crypto::OpenSslProvider>();
            auto ch_plain = fresh_channel(provider);
            auto t0 = Clock::now();
            devices::BlockDriver p(ch_plain, DriverMode::Plain, rc, provider);
            const double tp = seconds_since(t0);

            auto ch_sec = fresh_channel(provider);
            t0 = Clock::now();
            RequesterConfig sc = rc;
            sc.credential = config::load_credential(fx.paths.requester_chain, fx.paths.requester_key);
            const double load = seconds_since(t0);
            devices::BlockDriver s(ch_sec, DriverMode::Secured, sc, provider);
            const double ts = seconds_since(t0);
            if (i < cfg.warmup)
                continue;
            plain.values.push_back(tp);
            secured.values.push_back(ts);
            delta.values.push_back(ts - tp);
            auto add = [&](const std::string& name, double v) {
                if (!steps.count(name))
                    step_order.push_back(name);
                steps[name].push_back(v);
            };
            add("load_certificate", load);
            for (const auto& st : s.bootstrap().steps)
                add(st.name, seconds(st.duration));
        }
    }
    catch (const Error& e)
    {
        report.partial = true;
        report.error = e.what();
    }
    report.add_row("boot/plain", plain);
    report.add_row("boot/secured", secured);
    report.add_row("boot/delta", delta);
    for (const auto& name : step_order)
        report.add_row("boot/step/" + name, {Unit::Seconds, steps[name]});
    return report;
}

} // namespace spdmsim::bench
