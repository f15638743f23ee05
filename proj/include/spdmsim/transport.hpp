// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <spdmsim/bytes.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace spdmsim::transport
{

using Millis = std::chrono::milliseconds;
inline constexpr Millis kWaitForever = Millis::max();

struct ChannelStats
{
    std::uint64_t messages_sent = 0;
    std::uint64_t bytes_sent = 0;
    std::uint64_t messages_received = 0;
    std::uint64_t bytes_received = 0;

    std::uint64_t total_messages() const noexcept
    {
        return messages_sent + messages_received;
    }
    friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

/// Message-boundary-preserving duplex endpoint. One thread per endpoint; the
/// two endpoints of a channel may live on different threads.
class Channel
{
  public:
    virtual ~Channel() = default;

    // CapacityExceeded if data is larger than capacity(); ChannelClosed.
    virtual void send_msg(ByteView data) = 0;
    // Timeout or ChannelClosed.
    virtual Bytes recv_msg(Millis timeout = kWaitForever) = 0;
    virtual void reset() = 0;
    virtual ChannelStats stats() const = 0;
    virtual void close() = 0;
    virtual std::size_t capacity() const = 0;
};

// ---------------------------------------------------------------------------
// MMIO mailbox

enum class MmioSide : std::uint8_t
{
    Driver,
    Device,
};

// The two control bits of the mailbox. The driver raises the doorbell after
// writing the request buffer and the device clears it when it has copied the
// request out; response_ready is the device's interrupt line, mirrored.
struct MmioFlags
{
    bool doorbell = false;
    bool response_ready = false;

    // Flag guarding the buffer written by `writer`.
    bool outbound(MmioSide writer) const noexcept
    {
        return writer == MmioSide::Driver ? doorbell : response_ready;
    }
    bool can_write(MmioSide writer) const noexcept
    {
        return !outbound(writer);
    }
    bool can_read(MmioSide reader) const noexcept
    {
        return outbound(reader == MmioSide::Driver ? MmioSide::Device
                                                   : MmioSide::Driver);
    }
    // Raising an already raised flag (or clearing a clear one) breaks
    // alternation and throws Internal.
    void raise(MmioSide writer);
    void clear_for(MmioSide reader);
};

inline constexpr std::size_t kDefaultMmioBufferSize = 64 * 1024;

class MmioRegion;

class MmioChannel final : public Channel
{
  public:
    // Returns {driver endpoint, device endpoint} sharing one region.
    static std::pair<std::unique_ptr<MmioChannel>, std::unique_ptr<MmioChannel>>
        create_pair(std::size_t buffer_size = kDefaultMmioBufferSize);

    MmioChannel(std::shared_ptr<MmioRegion> region, MmioSide side);
    ~MmioChannel() override;

    void send_msg(ByteView data) override;
    Bytes recv_msg(Millis timeout = kWaitForever) override;
    void reset() override;
    ChannelStats stats() const override;
    void close() override;
    std::size_t capacity() const override;

    MmioFlags flags() const;
    MmioSide side() const noexcept
    {
        return side_;
    }

  private:
    std::shared_ptr<MmioRegion> region_;
    MmioSide side_;
};

// ---------------------------------------------------------------------------
// TCP

inline constexpr std::size_t kMaxTcpFrame = 16 * 1024 * 1024;

// Frames are a 4-byte big-endian length followed by the payload.
class TcpChannel final : public Channel
{
  public:
    explicit TcpChannel(int fd);
    ~TcpChannel() override;
    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;

    static std::unique_ptr<TcpChannel> connect(const std::string& host,
                                               std::uint16_t port,
                                               Millis timeout = Millis(5000));

    void send_msg(ByteView data) override;
    Bytes recv_msg(Millis timeout = kWaitForever) override;
    void reset() override;
    ChannelStats stats() const override;
    void close() override;
    std::size_t capacity() const override
    {
        return kMaxTcpFrame;
    }

  private:
    void read_exact(std::uint8_t* out, std::size_t n,
                    std::chrono::steady_clock::time_point deadline,
                    bool first_byte_may_timeout);

    int fd_;
    ChannelStats stats_;
};

class TcpListener
{
  public:
    // Port 0 picks an ephemeral port.
    TcpListener(const std::string& host, std::uint16_t port);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const noexcept
    {
        return port_;
    }
    // Timeout when no peer connects in time.
    std::unique_ptr<TcpChannel> accept(Millis timeout = kWaitForever);
    void close();

  private:
    int fd_;
    std::uint16_t port_ = 0;
};

// "host:port" -> pair; InvalidArgument on bad syntax.
std::pair<std::string, std::uint16_t> parse_address(const std::string& addr);

// ---------------------------------------------------------------------------
// Test hooks and serving helpers

enum class FrameDirection : std::uint8_t
{
    Outbound,
    Inbound,
};

struct CapturedFrame
{
    FrameDirection direction;
    Bytes data;
};

/// Wraps a channel to record and optionally rewrite frames in flight.
class InterceptingChannel final : public Channel
{
  public:
    // Called for every frame before recording; may rewrite it in place.
    using Mutator = std::function<void(FrameDirection, Bytes&)>;

    explicit InterceptingChannel(std::unique_ptr<Channel> inner);

    void set_mutator(Mutator m);
    void set_recording(bool on);
    std::vector<CapturedFrame> captured() const;
    void clear_captured();

    void send_msg(ByteView data) override;
    Bytes recv_msg(Millis timeout = kWaitForever) override;
    void reset() override;
    ChannelStats stats() const override;
    void close() override;
    std::size_t capacity() const override;

  private:
    void observe(FrameDirection dir, Bytes& data);

    std::unique_ptr<Channel> inner_;
    mutable std::mutex mutex_;
    Mutator mutator_;
    bool recording_ = true;
    std::vector<CapturedFrame> captured_;
};

using FrameHandler = std::function<Bytes(ByteView)>;

/// Single-threaded channel that runs `handler` inside send_msg and queues its
/// reply for the next recv_msg. Deterministic; used by tests.
class LoopbackChannel final : public Channel
{
  public:
    explicit LoopbackChannel(FrameHandler handler,
                             std::size_t capacity = std::size_t{1} << 24);

    void send_msg(ByteView data) override;
    Bytes recv_msg(Millis timeout = kWaitForever) override;
    void reset() override;
    ChannelStats stats() const override;
    void close() override;
    std::size_t capacity() const override;

  private:
    FrameHandler handler_;
    std::size_t capacity_;
    std::deque<Bytes> pending_;
    ChannelStats stats_;
    bool closed_ = false;
};

/// Runs `handler` for every frame received on `channel` on a background
/// thread and sends back its result, until stopped or the peer closes.
class FrameServer
{
  public:
    FrameServer(std::shared_ptr<Channel> channel, FrameHandler handler);
    ~FrameServer();
    FrameServer(const FrameServer&) = delete;
    FrameServer& operator=(const FrameServer&) = delete;

    void stop();
    std::uint64_t frames_served() const noexcept
    {
        return served_.load();
    }

  private:
    std::shared_ptr<Channel> channel_;
    std::atomic<bool> stop_{false};
    std::atomic<std::uint64_t> served_{0};
    std::thread thread_;
};

/// Accept loop serving each TCP connection with a handler obtained from
/// `factory`, one thread per connection.
class TcpServer
{
  public:
    using HandlerFactory = std::function<FrameHandler()>;

    TcpServer(const std::string& host, std::uint16_t port,
              HandlerFactory factory);
    ~TcpServer();
    TcpServer(const TcpServer&) = delete;
    TcpServer& operator=(const TcpServer&) = delete;

    std::uint16_t port() const noexcept
    {
        return listener_.port();
    }
    void stop();

  private:
    TcpListener listener_;
    HandlerFactory factory_;
    std::atomic<bool> stop_{false};
    std::mutex mutex_;
    std::vector<std::unique_ptr<FrameServer>> connections_;
    std::thread accept_thread_;
};

} // namespace spdmsim::transport
