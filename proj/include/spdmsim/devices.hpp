// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <spdmsim/crypto.hpp>
#include <spdmsim/requester.hpp>
#include <spdmsim/responder.hpp>
#include <spdmsim/transport.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

/// The two emulated peripherals: an RNG and a block device with its driver.
namespace spdmsim::devices
{

// ---------------------------------------------------------------------------
// RNG

inline constexpr std::uint8_t kRngOpcode = 0x01;
inline constexpr std::size_t kRngBytes = 8;

class RngDevice
{
  public:
    // Unseeded devices draw from the system CSPRNG.
    explicit RngDevice(std::optional<std::uint64_t> seed = {},
                       std::uint8_t opcode = kRngOpcode);

    std::uint8_t opcode() const noexcept
    {
        return opcode_;
    }
    // Application handler: any payload starting with the opcode yields
    // exactly 8 bytes.
    Bytes handle(ByteView request);
    // Registers handle() on the responder.
    void attach(Responder& responder);

  private:
    std::uint8_t opcode_;
    std::mutex mutex_;
    crypto::RandomSource rng_;
};

// Plain (RawApp) when `session_id` is unset, otherwise inside the session.
Bytes rng_request(Requester& requester, std::optional<std::uint32_t> session_id,
                  std::uint8_t opcode = kRngOpcode);

// ---------------------------------------------------------------------------
// Block requests

inline constexpr std::size_t kSectorSize = 512;
inline constexpr std::uint64_t kDefaultCapacityBytes = 64ull << 20;
// Application opcode carrying a sealed block request inside AppData.
inline constexpr std::uint8_t kBlockAppOpcode = 0xB1;

enum class BlockOpcode : std::uint8_t
{
    Read = 0x00,
    Write = 0x01,
    Flush = 0x04,
    // Carries a protocol frame, never disk payload.
    Spdm = 0x5D,
};

const char* opcode_name(BlockOpcode op) noexcept;

struct BlockRequest
{
    BlockOpcode opcode = BlockOpcode::Read;
    std::uint64_t sector = 0;
    std::uint32_t length_bytes = 0;
    // Write payload or protocol frame.
    Bytes data;

    friend bool operator==(const BlockRequest&, const BlockRequest&) = default;
};

enum class BlockStatus : std::uint8_t
{
    Ok = 0,
    RangeError = 1,
    Malformed = 2,
    IoError = 3,
    Unsupported = 4,
};

struct BlockResponse
{
    BlockStatus status = BlockStatus::Ok;
    Bytes data;

    friend bool operator==(const BlockResponse&, const BlockResponse&) = default;
};

// opcode u8 | sector u64 LE | length u32 LE | data (Write and Spdm only).
Bytes encode_block_request(const BlockRequest& req);
// MalformedMessage on any layout violation.
BlockRequest decode_block_request(ByteView raw);
// status u8 | data.
Bytes encode_block_response(const BlockResponse& rsp);
BlockResponse decode_block_response(ByteView raw);

// ---------------------------------------------------------------------------
// Device

struct LatencyModel
{
    // Charged when a request does not start where the previous one ended.
    std::chrono::nanoseconds seek_delay{0};
    std::chrono::nanoseconds per_byte_delay{0};
    bool enabled = false;

    std::chrono::nanoseconds delay(bool seek, std::size_t bytes) const noexcept;
};

struct BlockDeviceConfig
{
    std::uint64_t capacity_sectors = kDefaultCapacityBytes / kSectorSize;
    // Raw sector-addressed file; in-memory when unset.
    std::optional<std::filesystem::path> backing_file;
    LatencyModel latency;
};

struct BlockDeviceStats
{
    std::uint64_t requests = 0;
    std::uint64_t spdm_frames = 0;
    std::uint64_t seeks = 0;
    std::uint64_t bytes_read = 0;
    std::uint64_t bytes_written = 0;
    std::uint64_t flushes = 0;
    std::chrono::nanoseconds modeled_delay{0};
    std::chrono::nanoseconds service_time{0};
};

/// Sector store plus the responder it hosts. Spdm requests go to the
/// responder; sealed block requests come back through its app handler.
class BlockDevice
{
  public:
    // Sees every Read/Write/Flush the device services, before the store.
    using ServiceHook = std::function<void(const BlockRequest&)>;

    // `responder` may be null for a device without protocol support.
    BlockDevice(BlockDeviceConfig config, std::shared_ptr<Responder> responder);
    ~BlockDevice();
    BlockDevice(const BlockDevice&) = delete;
    BlockDevice& operator=(const BlockDevice&) = delete;

    // Applies the latency model, then the store operation.
    BlockResponse service(const BlockRequest& req);
    // Transport entry point: encoded BlockRequest in, encoded response out.
    Bytes handle_frame(ByteView raw);

    std::uint64_t capacity_sectors() const noexcept
    {
        return config_.capacity_sectors;
    }
    const LatencyModel& latency() const noexcept
    {
        return config_.latency;
    }
    BlockDeviceStats stats() const;
    void set_service_hook(ServiceHook hook);
    // Direct store access, bypassing the latency model and transport.
    Bytes peek(std::uint64_t sector, std::size_t count) const;
    Responder* responder() const noexcept
    {
        return responder_.get();
    }

  private:
    BlockResponse service_locked(const BlockRequest& req);
    void read_store(std::uint64_t offset, std::uint8_t* out, std::size_t n) const;
    void write_store(std::uint64_t offset, const std::uint8_t* in, std::size_t n);

    BlockDeviceConfig config_;
    std::shared_ptr<Responder> responder_;
    mutable std::mutex mutex_;
    std::vector<std::uint8_t> memory_;
    mutable std::fstream file_;
    std::optional<std::uint64_t> last_end_;
    BlockDeviceStats stats_;
    ServiceHook hook_;
};

// ---------------------------------------------------------------------------
// Driver

/// Channel adapter for the driver's requester: each protocol frame travels
/// as a BlockRequest with the Spdm opcode (sector 0, length = frame size).
class SpdmOverBlockChannel final : public transport::Channel
{
  public:
    explicit SpdmOverBlockChannel(std::shared_ptr<transport::Channel> inner);

    void send_msg(ByteView data) override;
    Bytes recv_msg(transport::Millis timeout = transport::kWaitForever) override;
    void reset() override;
    transport::ChannelStats stats() const override;
    void close() override;
    std::size_t capacity() const override;

  private:
    std::shared_ptr<transport::Channel> inner_;
};

enum class DriverMode : std::uint8_t
{
    Plain,
    Secured,
};

struct BootstrapStep
{
    std::string name;
    std::chrono::nanoseconds duration{0};
};

struct BootstrapRecord
{
    std::vector<BootstrapStep> steps;
    std::chrono::nanoseconds total{0};
    std::uint64_t messages = 0;
};

class BlockDriver
{
  public:
    // Probe: plain mode is ready immediately; secured mode runs the full
    // bootstrap and opens a certificate session.
    BlockDriver(std::shared_ptr<transport::Channel> channel, DriverMode mode,
                RequesterConfig config = {},
                std::shared_ptr<crypto::CryptoProvider> provider = {});
    ~BlockDriver();

    Bytes read_sectors(std::uint64_t sector, std::size_t count);
    void write_sectors(std::uint64_t sector, ByteView data);
    void flush();

    // Opens a fresh session after the previous one went down.
    void reestablish();

    DriverMode mode() const noexcept
    {
        return mode_;
    }
    const BootstrapRecord& bootstrap() const noexcept
    {
        return bootstrap_;
    }
    std::optional<std::uint32_t> session_id() const noexcept
    {
        return session_id_;
    }
    Requester* requester() noexcept
    {
        return requester_.get();
    }
    transport::Channel& channel() noexcept
    {
        return *channel_;
    }

  private:
    BlockResponse submit(const BlockRequest& req);

    std::shared_ptr<transport::Channel> channel_;
    DriverMode mode_;
    transport::Millis timeout_;
    std::unique_ptr<Requester> requester_;
    std::optional<std::uint32_t> session_id_;
    BootstrapRecord bootstrap_;
};

// Responder preloaded for a block device: slot 0, measurements, PSK entries.
struct DeviceIdentity
{
    crypto::Credential credential;
    std::vector<Bytes> trusted_requester_roots;
    std::map<Bytes, Bytes> psk_table;
};

std::shared_ptr<Responder> make_device_responder(const DeviceIdentity& identity,
                                                 std::shared_ptr<crypto::CryptoProvider> provider,
                                                 ResponderConfig config = {});

} // namespace spdmsim::devices
