// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include "stats_oracle.hpp"

#include <spdmsim/bench.hpp>
#include <spdmsim/errors.hpp>

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

using namespace spdmsim;
using namespace spdmsim::bench;
using namespace spdmsim::testing;

namespace
{

Errc errc_of(const std::function<void()>& f)
{
    try
    {
        f();
    }
    catch (const Error& e)
    {
        return e.code();
    }
    return Errc::Ok;
}

Report sample_report()
{
    Report r;
    r.suite = "msgbench";
    r.set_meta("seed", "7");
    r.set_meta("host", "test, with comma");
    r.add_row("requester/GetVersion", {Unit::Seconds, {0.001, 0.0012, 0.0011}});
    r.add_row("odd,\"label\"", {Unit::Iops, {10, 20}});
    r.add_row("disk/plain", {Unit::BytesPerSecond, {1e9, 1.1e9, 0.3}});
    return r;
}

} // namespace

TEST_CASE("summary of a small known set")
{
    const std::vector<double> v{1, 2, 3};
    const auto s = summarize(v);
    CHECK(s.n == 3);
    CHECK(s.mean == doctest::Approx(2.0));
    CHECK(s.sd == doctest::Approx(1.0));
    // For two degrees of freedom the quantile has the closed form
    // (2p - 1) * sqrt(2 / (4 p (1 - p))).
    const double t2 = 0.95 * std::sqrt(2 / (4 * 0.975 * 0.025));
    CHECK(t_critical_95(2) == doctest::Approx(t2).epsilon(1e-12));
    CHECK(s.ci95 == doctest::Approx(t2 / std::sqrt(3.0)).epsilon(1e-12));
    CHECK(s.ci95 == doctest::Approx(2.484).epsilon(1e-3));
}

TEST_CASE("constant samples have zero spread")
{
    const std::vector<double> v(10, 0.1);
    const auto s = summarize(v);
    CHECK(s.mean == 0.1);
    CHECK(s.sd == 0);
    CHECK(s.ci95 == 0);
}

TEST_CASE("a single sample is refused")
{
    CHECK(errc_of([] { summarize(std::vector<double>{1.0}); }) == Errc::InsufficientSamples);
    CHECK(errc_of([] { summarize(std::vector<double>{}); }) == Errc::InsufficientSamples);
    CHECK(errc_of([] { t_critical_95(0); }) == Errc::InsufficientSamples);
    Report r;
    r.add_row("one", {Unit::Seconds, {1.0}});
    CHECK(r.rows.empty());
}

TEST_CASE("t critical values match an independent quadrature oracle")
{
    for (std::size_t df : {1, 2, 3, 5, 9, 14, 29, 99, 200})
    {
        CAPTURE(df);
        CHECK(close_rel(t_critical_95(df), oracle_t975(df), 1e-9));
    }
    CHECK(t_critical_95(1) == doctest::Approx(12.706204736).epsilon(1e-9));
}

TEST_CASE("summaries of random sets match the oracle")
{
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> size(2, 40);
    std::lognormal_distribution<double> value(-6, 1.5);
    for (int i = 0; i < 1000; ++i)
    {
        std::vector<double> v(size(rng));
        for (auto& x : v)
            x = value(rng);
        const auto got = summarize(v);
        const auto want = oracle_summary(v);
        REQUIRE(got.n == want.n);
        REQUIRE(close_rel(got.mean, want.mean, 1e-9));
        REQUIRE(close_rel(got.sd, want.sd, 1e-9));
        REQUIRE(close_rel(got.ci95, want.ci95, 1e-9));
        CHECK(got.sd >= 0);
        CHECK(got.ci95 >= 0);
    }
}

TEST_CASE("report JSON round trips exactly")
{
    const auto r = sample_report();
    const auto json = to_json(r);
    const auto back = report_from_json(json);
    CHECK(back == r);
    CHECK(to_json(back) == json);
    CHECK(back.meta("host") == std::optional<std::string>("test, with comma"));
    CHECK_FALSE(back.meta("missing").has_value());
    CHECK(back.find("disk/plain")->unit == Unit::BytesPerSecond);
    CHECK(back.find("nope") == nullptr);

    Report partial = r;
    partial.partial = true;
    partial.error = "timeout after run 3";
    CHECK(report_from_json(to_json(partial)) == partial);
}

TEST_CASE("malformed report documents are rejected")
{
    for (const char* bad : {"", "{}", "[1,2]", "{\"schema\":\"other/1\"}", "not json",
                            R"({"schema":"spdmsim-report/1","suite":"x","partial":false,)"
                            R"("error":"","metadata":{},"rows":[{"label":"a","unit":"furlongs",)"
                            R"("n":2,"mean":1,"sd":0,"ci95":0,"samples":[1,1]}]})"})
    {
        CAPTURE(bad);
        CHECK(errc_of([&] { report_from_json(bad); }) == Errc::MalformedMessage);
    }
}

TEST_CASE("CSV has a header and one line per row")
{
    const auto r = sample_report();
    const auto csv = to_csv(r);
    std::istringstream in(csv);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        lines.push_back(line);
    REQUIRE(lines.size() == r.rows.size() + 1);
    CHECK(lines[0] == "label,unit,n,mean,sd,ci95");
    CHECK(lines[1].rfind("requester/GetVersion,seconds,3,", 0) == 0);
    CHECK(lines[2].rfind("\"odd,\"\"label\"\"\",iops,2,", 0) == 0);
    CHECK(to_csv(report_from_json(to_json(r))) == csv);
}

TEST_CASE("emitting to files")
{
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "spdmsim-test-bench-emit";
    fs::create_directories(dir);
    const auto r = sample_report();
    emit_report(r, Format::Json, dir / "r.json");
    std::ifstream in(dir / "r.json");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(report_from_json(text) == r);
    emit_report(r, Format::Csv, dir / "r.csv");
    CHECK(fs::file_size(dir / "r.csv") == to_csv(r).size());
    CHECK(errc_of([&] { emit_report(r, Format::Json, dir / "no" / "such" / "dir.json"); }) ==
          Errc::IoError);
    fs::remove_all(dir);

    CHECK(parse_format("csv") == Format::Csv);
    CHECK(errc_of([] { parse_format("xml"); }) == Errc::InvalidArgument);
    CHECK(errc_of([] { parse_unit("furlongs"); }) == Errc::InvalidArgument);
}

TEST_CASE("workload presets")
{
    REQUIRE(preset_names().size() == 9);
    for (const auto& name : preset_names())
    {
        CAPTURE(name);
        for (double scale : {1.0, 1.0 / 128, 1.0 / 1024})
        {
            const auto s = preset(name, scale);
            CHECK(s.name == name);
            CHECK(errc_of([&] { validate(s); }) == Errc::Ok);
            CHECK(s.device_bytes >= s.total_bytes);
            CHECK(s.device_bytes % s.block_size == 0);
        }
    }
    CHECK(preset("dd-small").block_size == 4096);
    CHECK(preset("dd-big").block_size == 8u << 20);
    CHECK(preset("dd-big").fsync_at_end);
    CHECK(preset("hdparm").pattern == Pattern::SeqRead);
    CHECK(preset("fio-seq-write").pattern == Pattern::SeqWrite);
    CHECK(preset("fio-rand-rw").fsync_every == 1);
    CHECK(preset("ioping").pattern == Pattern::Ping);
    CHECK(preset("bonnie").files == 4);
    CHECK(preset("fio-rand-read").total_bytes == devices::kDefaultCapacityBytes);
    CHECK(preset("fio-rand-read", 1.0 / 128).total_bytes == devices::kDefaultCapacityBytes / 128);
    CHECK(preset("fio-rand-read", 2).device_bytes == 2 * devices::kDefaultCapacityBytes);
    CHECK(errc_of([] { preset("fsck"); }) == Errc::InvalidArgument);
    CHECK(errc_of([] { preset("dd-small", 0); }) == Errc::InvalidArgument);
}

TEST_CASE("workload validation")
{
    const auto good = preset("fio-seq-read", 1.0 / 64);
    auto broken = [&](auto&& edit) {
        auto s = good;
        edit(s);
        return errc_of([&] { validate(s); });
    };
    CHECK(broken([](WorkloadSpec& s) { s.block_size = 0; }) == Errc::InvalidArgument);
    CHECK(broken([](WorkloadSpec& s) { s.block_size = 1000; }) == Errc::InvalidArgument);
    CHECK(broken([](WorkloadSpec& s) { s.runs = 1; }) == Errc::InvalidArgument);
    CHECK(broken([](WorkloadSpec& s) { s.total_bytes += 512; }) == Errc::InvalidArgument);
    CHECK(broken([](WorkloadSpec& s) { s.device_bytes = 512; }) == Errc::InvalidArgument);
    CHECK(broken([](WorkloadSpec& s) {
        s.pattern = Pattern::MultiFileSeq;
        s.files = 3;
    }) == Errc::InvalidArgument);
    CHECK(broken([](WorkloadSpec& s) {
        s.pattern = Pattern::Ping;
        s.pings = 0;
    }) == Errc::InvalidArgument);
}

TEST_CASE("traces are deterministic and independent of the driver mode")
{
    for (const auto& name : preset_names())
    {
        CAPTURE(name);
        auto s = preset(name, 1.0 / 256);
        const auto a = generate_trace(s, 3);
        s.mode = devices::DriverMode::Secured;
        const auto b = generate_trace(s, 3);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i)
        {
            CHECK(a[i].opcode == b[i].opcode);
            CHECK(a[i].sector == b[i].sector);
            CHECK(a[i].sectors == b[i].sectors);
        }
        for (const auto& op : a)
            if (op.opcode != devices::BlockOpcode::Flush)
                CHECK((op.sector + op.sectors) * devices::kSectorSize <= s.device_bytes);
    }

    auto s = preset("fio-rand-rw", 1.0 / 256);
    const auto r0 = generate_trace(s, 0);
    const auto r1 = generate_trace(s, 1);
    bool differ = false;
    for (std::size_t i = 0; i < std::min(r0.size(), r1.size()); ++i)
        differ = differ || r0[i].sector != r1[i].sector;
    CHECK(differ);

    std::size_t flushes = 0, writes = 0;
    for (const auto& op : r0)
    {
        flushes += op.opcode == devices::BlockOpcode::Flush;
        writes += op.opcode == devices::BlockOpcode::Write;
    }
    CHECK(flushes == writes);

    const auto seq = generate_trace(preset("fio-seq-read", 1.0 / 64), 0);
    for (std::size_t i = 0; i < seq.size(); ++i)
        CHECK(seq[i].sector == i * (1024 * 1024 / devices::kSectorSize));
}

TEST_CASE("trace hash depends on every request field")
{
    std::vector<devices::BlockRequest> reqs{{devices::BlockOpcode::Read, 8, 4096, {}},
                                            {devices::BlockOpcode::Write, 16, 512, {}}};
    const auto h = trace_hash(reqs);
    CHECK(h == trace_hash(reqs));
    auto edit = reqs;
    edit[1].sector = 17;
    CHECK(trace_hash(edit) != h);
    edit = reqs;
    edit[0].opcode = devices::BlockOpcode::Write;
    CHECK(trace_hash(edit) != h);
    edit = reqs;
    edit[0].length_bytes = 512;
    CHECK(trace_hash(edit) != h);
    edit = reqs;
    std::swap(edit[0], edit[1]);
    CHECK(trace_hash(edit) != h);
    CHECK(trace_hash({}) == 0xcbf29ce484222325ull);
}

TEST_CASE("plain and secured runs see identical device traces")
{
    for (const char* name : {"fio-rand-rw", "bonnie", "ioping"})
    {
        CAPTURE(name);
        auto s = preset(name, 1.0 / 512);
        s.runs = 2;
        const auto r = run_disk_comparison(s);
        CHECK_FALSE(r.partial);
        CHECK(r.meta("traces_identical") == std::optional<std::string>("true"));
        CHECK(r.meta("trace_hash_plain") == r.meta("trace_hash_secured"));
        CHECK(r.meta("latency_enabled") == std::optional<std::string>("false"));
        CHECK(r.rows.size() % 2 == 0);
        for (const auto& row : r.rows)
            CHECK(row.stats.n >= 2);
    }
    auto s = preset("fio-rand-rw", 1.0 / 512);
    s.runs = 2;
    const auto r = run_disk_comparison(s);
    for (const char* label : {"fio-rand-rw/plain", "fio-rand-rw/secured", "fio-rand-rw/plain/read",
                              "fio-rand-rw/secured/write"})
    {
        CAPTURE(label);
        REQUIRE(r.find(label) != nullptr);
        CHECK(r.find(label)->unit == Unit::Iops);
    }
}

TEST_CASE("single-mode disk bench rows")
{
    auto s = preset("dd-small", 1.0 / 512);
    s.runs = 2;
    s.mode = devices::DriverMode::Secured;
    const auto r = run_disk_bench(s);
    CHECK(r.suite == "diskbench");
    CHECK(r.meta("mode") == std::optional<std::string>("secured"));
    REQUIRE(r.find("dd-small/secured") != nullptr);
    CHECK(r.find("dd-small/secured")->unit == Unit::BytesPerSecond);
    CHECK(r.find("dd-small/secured/iops") != nullptr);
}

TEST_CASE("message bench produces one row per step")
{
    MessageBenchConfig cfg;
    cfg.runs = 2;
    cfg.warmup = 0;
    const auto r = run_message_bench(cfg);
    CHECK_FALSE(r.partial);
    CHECK(r.suite == "msgbench");
    for (const auto& step : message_steps())
    {
        CAPTURE(step);
        const auto* row = r.find("requester/" + step);
        REQUIRE(row != nullptr);
        CHECK(row->stats.n == 2);
        CHECK(row->stats.mean > 0);
    }
    CHECK(r.find("responder/GetVersion") != nullptr);
    CHECK(r.meta("topology") == std::optional<std::string>("in-process"));

    cfg.scenario = Scenario::AppPhase;
    cfg.topology = Topology::TcpLoopback;
    const auto a = run_message_bench(cfg);
    for (const auto& step : app_phase_steps())
    {
        CAPTURE(step);
        CHECK(a.find("requester/" + step) != nullptr);
        CHECK(a.find("responder/" + step) != nullptr);
    }
    CHECK(a.find("requester/GetVersion") == nullptr);
}

TEST_CASE("bootstrap bench rows")
{
    BootBenchConfig cfg;
    cfg.runs = 2;
    cfg.warmup = 0;
    const auto r = run_bootstrap_bench(cfg);
    CHECK_FALSE(r.partial);
    for (const char* label : {"boot/plain", "boot/secured", "boot/delta"})
    {
        CAPTURE(label);
        REQUIRE(r.find(label) != nullptr);
    }
    CHECK(r.find("boot/step/establish_session") != nullptr);
    CHECK(r.find("boot/secured")->stats.mean > r.find("boot/plain")->stats.mean);
    cfg.runs = 1;
    CHECK(errc_of([&] { run_bootstrap_bench(cfg); }) == Errc::InsufficientSamples);
}
