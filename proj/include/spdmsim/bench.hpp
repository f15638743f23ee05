// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <spdmsim/devices.hpp>
#include <spdmsim/requester.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

/// Timing, statistics and report emission for the message, disk and
/// bootstrap experiments.
namespace spdmsim::bench
{

// ---------------------------------------------------------------------------
// Statistics

enum class Unit : std::uint8_t
{
    Seconds,
    BytesPerSecond,
    Iops,
};

const char* unit_name(Unit unit) noexcept;
// InvalidArgument for an unknown name.
Unit parse_unit(const std::string& name);

struct SampleSet
{
    Unit unit = Unit::Seconds;
    std::vector<double> values;
};

struct StatSummary
{
    std::size_t n = 0;
    double mean = 0;
    // Sample standard deviation (n - 1 denominator).
    double sd = 0;
    // t(0.975, n - 1) * sd / sqrt(n).
    double ci95 = 0;

    friend bool operator==(const StatSummary&, const StatSummary&) = default;
};

// Two-sided 95% Student-t critical value for `df` degrees of freedom.
double t_critical_95(std::size_t df);

// InsufficientSamples when fewer than two values.
StatSummary summarize(std::span<const double> values);
StatSummary summarize(const SampleSet& samples);

// ---------------------------------------------------------------------------
// Reports

struct Row
{
    std::string label;
    Unit unit = Unit::Seconds;
    StatSummary stats;
    std::vector<double> samples;

    friend bool operator==(const Row&, const Row&) = default;
};

struct Report
{
    std::string suite;
    // Set when a run aborted; rows then cover the completed runs only.
    bool partial = false;
    std::string error;
    // Ordered key/value pairs: fixture sizes, scale, seed, topology, host.
    std::vector<std::pair<std::string, std::string>> metadata;
    std::vector<Row> rows;

    void set_meta(const std::string& key, const std::string& value);
    std::optional<std::string> meta(const std::string& key) const;
    // Summarizes `samples`; rows with fewer than two samples are skipped.
    void add_row(const std::string& label, const SampleSet& samples);
    const Row* find(const std::string& label) const;

    friend bool operator==(const Report&, const Report&) = default;
};

enum class Format : std::uint8_t
{
    Json,
    Csv,
};

Format parse_format(const std::string& name);

std::string to_json(const Report& report);
// MalformedMessage when the document does not follow the report schema.
Report report_from_json(const std::string& text);
// Header line, then one line per row: label,unit,n,mean,sd,ci95.
std::string to_csv(const Report& report);
// IoError when the file cannot be written.
void emit_report(const Report& report, Format format, const std::filesystem::path& path);

// Free-text host description (kernel, machine, CPU count).
std::string host_description();

// ---------------------------------------------------------------------------
// Message bench

enum class Topology : std::uint8_t
{
    // Requester and responder joined by a synchronous loopback channel.
    InProcess,
    // Responder on a server thread behind a localhost TCP socket.
    TcpLoopback,
    // Responder in another process at `remote_address`; no responder timings.
    TcpRemote,
};

const char* topology_name(Topology t) noexcept;

enum class Scenario : std::uint8_t
{
    // Every step of the message flow.
    Full,
    // Key agreement, heartbeat, key update, app request, end session.
    AppPhase,
};

struct MessageBenchConfig
{
    std::size_t runs = 100;
    // Untimed iterations before the first recorded run.
    std::size_t warmup = 1;
    Scenario scenario = Scenario::Full;
    Topology topology = Topology::InProcess;
    std::string remote_address;
    // Fixture directory written by generate_fixtures(); generated into a
    // temporary directory when unset.
    std::optional<std::filesystem::path> fixtures_dir;
    std::uint64_t seed = 1;
};

// Step labels in execution order; rows are "requester/<step>" and
// "responder/<step>".
const std::vector<std::string>& message_steps();
const std::vector<std::string>& app_phase_steps();
// The steps a driver's secured probe performs, for the boot cross-check.
const std::vector<std::string>& bootstrap_steps();

Report run_message_bench(const MessageBenchConfig& config);

// ---------------------------------------------------------------------------
// Disk bench

enum class Pattern : std::uint8_t
{
    SeqRead,
    SeqWrite,
    RandRead,
    RandRW,
    // Single-block read and write latency probes.
    Ping,
    // Sequential write then read across several equal files.
    MultiFileSeq,
};

const char* pattern_name(Pattern p) noexcept;

struct WorkloadSpec
{
    std::string name;
    Pattern pattern = Pattern::SeqRead;
    std::size_t block_size = 4096;
    // Bytes transferred per run.
    std::uint64_t total_bytes = devices::kDefaultCapacityBytes;
    // Region the workload addresses (the device size).
    std::uint64_t device_bytes = devices::kDefaultCapacityBytes;
    // Flush after every N writes; 0 never.
    std::size_t fsync_every = 0;
    bool fsync_at_end = false;
    devices::LatencyModel latency;
    devices::DriverMode mode = devices::DriverMode::Plain;
    std::size_t runs = 10;
    std::uint64_t seed = 1;
    // Probes per run for Ping.
    std::size_t pings = 10;
    // File count for MultiFileSeq.
    std::size_t files = 4;
};

// InvalidArgument when the spec breaks its invariants.
void validate(const WorkloadSpec& spec);

const std::vector<std::string>& preset_names();
// `scale` multiplies the transferred bytes (and the device size above 1).
WorkloadSpec preset(const std::string& name, double scale = 1.0);

struct BlockOp
{
    devices::BlockOpcode opcode = devices::BlockOpcode::Read;
    std::uint64_t sector = 0;
    std::uint32_t sectors = 0;
};

// Deterministic operation sequence of one run (independent of mode).
std::vector<BlockOp> generate_trace(const WorkloadSpec& spec, std::size_t run);
// FNV-1a over (opcode, sector, length) of each request.
std::uint64_t trace_hash(std::span<const devices::BlockRequest> requests);

// One mode, spec.runs runs. Rows: "<name>/<mode>[/<part>]".
Report run_disk_bench(const WorkloadSpec& spec);
// Plain and secured runs interleaved with identical seeds and latency model;
// metadata records the device-side trace hashes of both modes.
Report run_disk_comparison(const WorkloadSpec& spec);

// ---------------------------------------------------------------------------
// Bootstrap bench

struct BootBenchConfig
{
    std::size_t runs = 15;
    std::size_t warmup = 1;
    std::optional<std::filesystem::path> fixtures_dir;
};

// Rows "boot/plain", "boot/secured", "boot/delta" and "boot/step/<name>".
Report run_bootstrap_bench(const BootBenchConfig& config);

} // namespace spdmsim::bench
