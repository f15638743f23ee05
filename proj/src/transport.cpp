// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/errors.hpp>
#include <spdmsim/transport.hpp>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

namespace spdmsim::transport
{

// ---------------------------------------------------------------------------
// MMIO

void MmioFlags::raise(MmioSide writer)
{
    bool& f = writer == MmioSide::Driver ? doorbell : response_ready;
    if (f)
        fail(Errc::Internal, "mailbox flag raised twice");
    f = true;
}

void MmioFlags::clear_for(MmioSide reader)
{
    bool& f = reader == MmioSide::Driver ? response_ready : doorbell;
    if (!f)
        fail(Errc::Internal, "mailbox flag cleared while low");
    f = false;
}

class MmioRegion
{
  public:
    explicit MmioRegion(std::size_t size) : size(size)
    {
        buffers[0].assign(size, 0);
        buffers[1].assign(size, 0);
    }

    const std::size_t size;
    std::mutex mutex;
    std::condition_variable cv;
    MmioFlags flags;
    // [0] request buffer (driver writes), [1] response buffer (device writes).
    std::array<Bytes, 2> buffers;
    std::array<std::size_t, 2> lengths{0, 0};
    // Per writer side: messages and bytes written / read.
    std::array<std::uint64_t, 2> messages{0, 0};
    std::array<std::uint64_t, 2> bytes{0, 0};
    bool closed = false;
};

namespace
{

std::size_t buffer_of(MmioSide writer)
{
    return writer == MmioSide::Driver ? 0 : 1;
}

MmioSide peer_of(MmioSide s)
{
    return s == MmioSide::Driver ? MmioSide::Device : MmioSide::Driver;
}

template <class Pred>
bool wait_for(std::unique_lock<std::mutex>& lock, std::condition_variable& cv,
              Millis timeout, Pred pred)
{
    if (timeout == kWaitForever)
    {
        cv.wait(lock, pred);
        return true;
    }
    return cv.wait_for(lock, timeout, pred);
}

} // namespace

std::pair<std::unique_ptr<MmioChannel>, std::unique_ptr<MmioChannel>>
    MmioChannel::create_pair(std::size_t buffer_size)
{
    if (buffer_size == 0)
        fail(Errc::InvalidArgument, "mailbox buffer size must be positive");
    auto region = std::make_shared<MmioRegion>(buffer_size);
    return {std::make_unique<MmioChannel>(region, MmioSide::Driver),
            std::make_unique<MmioChannel>(region, MmioSide::Device)};
}

MmioChannel::MmioChannel(std::shared_ptr<MmioRegion> region, MmioSide side) :
    region_(std::move(region)), side_(side)
{}

MmioChannel::~MmioChannel()
{
    close();
}

void MmioChannel::send_msg(ByteView data)
{
    auto& r = *region_;
    if (data.size() > r.size)
        fail(Errc::CapacityExceeded,
             std::to_string(data.size()) + " bytes exceed the " +
                 std::to_string(r.size) + "-byte mailbox buffer");
    std::unique_lock lock(r.mutex);
    r.cv.wait(lock, [&] { return r.closed || r.flags.can_write(side_); });
    if (r.closed)
        fail(Errc::ChannelClosed, "mailbox closed");
    auto& buf = r.buffers[buffer_of(side_)];
    std::copy(data.begin(), data.end(), buf.begin());
    r.lengths[buffer_of(side_)] = data.size();
    r.flags.raise(side_);
    ++r.messages[buffer_of(side_)];
    r.bytes[buffer_of(side_)] += data.size();
    r.cv.notify_all();
}

Bytes MmioChannel::recv_msg(Millis timeout)
{
    auto& r = *region_;
    std::unique_lock lock(r.mutex);
    bool ready = wait_for(lock, r.cv, timeout,
                          [&] { return r.closed || r.flags.can_read(side_); });
    if (r.flags.can_read(side_))
    {
        auto b = buffer_of(peer_of(side_));
        Bytes out(r.buffers[b].begin(),
                  r.buffers[b].begin() + static_cast<long>(r.lengths[b]));
        r.flags.clear_for(side_);
        r.cv.notify_all();
        return out;
    }
    if (r.closed)
        fail(Errc::ChannelClosed, "mailbox closed");
    (void)ready;
    fail(Errc::Timeout, "no message within " + std::to_string(timeout.count()) +
                            " ms");
}

void MmioChannel::reset()
{
    auto& r = *region_;
    std::lock_guard lock(r.mutex);
    r.flags = MmioFlags{};
    for (auto& b : r.buffers)
        std::fill(b.begin(), b.end(), 0);
    r.lengths = {0, 0};
    r.cv.notify_all();
}

ChannelStats MmioChannel::stats() const
{
    auto& r = *region_;
    std::lock_guard lock(r.mutex);
    ChannelStats s;
    s.messages_sent = r.messages[buffer_of(side_)];
    s.bytes_sent = r.bytes[buffer_of(side_)];
    s.messages_received = r.messages[buffer_of(peer_of(side_))];
    s.bytes_received = r.bytes[buffer_of(peer_of(side_))];
    return s;
}

void MmioChannel::close()
{
    auto& r = *region_;
    std::lock_guard lock(r.mutex);
    r.closed = true;
    r.cv.notify_all();
}

std::size_t MmioChannel::capacity() const
{
    return region_->size;
}

MmioFlags MmioChannel::flags() const
{
    std::lock_guard lock(region_->mutex);
    return region_->flags;
}

// ---------------------------------------------------------------------------
// TCP

namespace
{

[[noreturn]] void sys_fail(Errc code, const std::string& what)
{
    fail(code, what + ": " + std::strerror(errno));
}

void set_nodelay(int fd)
{
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

int remaining_ms(std::chrono::steady_clock::time_point deadline)
{
    if (deadline == std::chrono::steady_clock::time_point::max())
        return -1;
    auto left = std::chrono::duration_cast<Millis>(
        deadline - std::chrono::steady_clock::now());
    return left.count() < 0 ? 0 : static_cast<int>(left.count());
}

std::chrono::steady_clock::time_point deadline_after(Millis timeout)
{
    if (timeout == kWaitForever)
        return std::chrono::steady_clock::time_point::max();
    return std::chrono::steady_clock::now() + timeout;
}

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive)
{
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    if (passive)
        hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    std::string port_str = std::to_string(port);
    int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(),
                           port_str.c_str(), &hints, &res);
    if (rc != 0)
        fail(Errc::IoError, "cannot resolve " + host + ": " + gai_strerror(rc));
    return res;
}

} // namespace

TcpChannel::TcpChannel(int fd) : fd_(fd)
{
    set_nodelay(fd_);
}

TcpChannel::~TcpChannel()
{
    close();
}

std::unique_ptr<TcpChannel> TcpChannel::connect(const std::string& host,
                                                std::uint16_t port,
                                                Millis timeout)
{
    addrinfo* res = resolve(host, port, false);
    std::unique_ptr<addrinfo, decltype(&freeaddrinfo)> guard(res, freeaddrinfo);
    int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0)
        sys_fail(Errc::IoError, "socket");
    int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
    if (rc != 0 && errno != EINPROGRESS)
    {
        int err = errno;
        ::close(fd);
        errno = err;
        sys_fail(Errc::ChannelClosed, "connect " + host + ":" + std::to_string(port));
    }
    if (rc != 0)
    {
        pollfd pfd{fd, POLLOUT, 0};
        int pr = ::poll(&pfd, 1, timeout == kWaitForever
                                     ? -1
                                     : static_cast<int>(timeout.count()));
        if (pr == 0)
        {
            ::close(fd);
            fail(Errc::Timeout, "connect timed out");
        }
        int err = 0;
        socklen_t len = sizeof(err);
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (pr < 0 || err != 0)
        {
            ::close(fd);
            errno = err;
            sys_fail(Errc::ChannelClosed,
                     "connect " + host + ":" + std::to_string(port));
        }
    }
    ::fcntl(fd, F_SETFL, flags);
    return std::make_unique<TcpChannel>(fd);
}

void TcpChannel::send_msg(ByteView data)
{
    if (fd_ < 0)
        fail(Errc::ChannelClosed, "socket closed");
    if (data.size() > kMaxTcpFrame)
        fail(Errc::CapacityExceeded, "frame larger than 16 MiB");
    std::uint32_t n = static_cast<std::uint32_t>(data.size());
    std::array<std::uint8_t, 4> prefix = {
        static_cast<std::uint8_t>(n >> 24), static_cast<std::uint8_t>(n >> 16),
        static_cast<std::uint8_t>(n >> 8), static_cast<std::uint8_t>(n)};
    auto write_all = [&](const std::uint8_t* p, std::size_t len) {
        while (len > 0)
        {
            ssize_t w = ::send(fd_, p, len, MSG_NOSIGNAL);
            if (w < 0)
            {
                if (errno == EINTR)
                    continue;
                sys_fail(Errc::ChannelClosed, "send");
            }
            p += w;
            len -= static_cast<std::size_t>(w);
        }
    };
    write_all(prefix.data(), prefix.size());
    write_all(data.data(), data.size());
    ++stats_.messages_sent;
    stats_.bytes_sent += data.size();
}

void TcpChannel::read_exact(std::uint8_t* out, std::size_t n,
                            std::chrono::steady_clock::time_point deadline,
                            bool first_byte_may_timeout)
{
    std::size_t got = 0;
    while (got < n)
    {
        pollfd pfd{fd_, POLLIN, 0};
        int pr = ::poll(&pfd, 1, remaining_ms(deadline));
        if (pr < 0)
        {
            if (errno == EINTR)
                continue;
            sys_fail(Errc::ChannelClosed, "poll");
        }
        if (pr == 0)
        {
            if (!(first_byte_may_timeout && got == 0))
                close();
            fail(Errc::Timeout, "no complete frame before the deadline");
        }
        ssize_t r = ::recv(fd_, out + got, n - got, 0);
        if (r == 0)
            fail(Errc::ChannelClosed, "peer closed the connection");
        if (r < 0)
        {
            if (errno == EINTR || errno == EAGAIN)
                continue;
            sys_fail(Errc::ChannelClosed, "recv");
        }
        got += static_cast<std::size_t>(r);
    }
}

Bytes TcpChannel::recv_msg(Millis timeout)
{
    if (fd_ < 0)
        fail(Errc::ChannelClosed, "socket closed");
    auto deadline = deadline_after(timeout);
    std::array<std::uint8_t, 4> prefix{};
    read_exact(prefix.data(), prefix.size(), deadline, true);
    std::uint32_t n = (std::uint32_t(prefix[0]) << 24) |
                      (std::uint32_t(prefix[1]) << 16) |
                      (std::uint32_t(prefix[2]) << 8) | std::uint32_t(prefix[3]);
    if (n > kMaxTcpFrame)
    {
        close();
        fail(Errc::MalformedMessage, "incoming frame larger than 16 MiB");
    }
    Bytes out(n);
    if (n > 0)
        read_exact(out.data(), n, deadline, false);
    ++stats_.messages_received;
    stats_.bytes_received += n;
    return out;
}

void TcpChannel::reset() {}

ChannelStats TcpChannel::stats() const
{
    return stats_;
}

void TcpChannel::close()
{
    if (fd_ >= 0)
    {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port)
{
    addrinfo* res = resolve(host, port, true);
    std::unique_ptr<addrinfo, decltype(&freeaddrinfo)> guard(res, freeaddrinfo);
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd_ < 0)
        sys_fail(Errc::IoError, "socket");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd_, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd_, 16) != 0)
    {
        int err = errno;
        ::close(fd_);
        errno = err;
        sys_fail(Errc::IoError, "bind " + host + ":" + std::to_string(port));
    }
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener()
{
    close();
}

std::unique_ptr<TcpChannel> TcpListener::accept(Millis timeout)
{
    if (fd_ < 0)
        fail(Errc::ChannelClosed, "listener closed");
    pollfd pfd{fd_, POLLIN, 0};
    int pr = ::poll(&pfd, 1,
                    timeout == kWaitForever ? -1 : static_cast<int>(timeout.count()));
    if (pr == 0)
        fail(Errc::Timeout, "no connection");
    if (pr < 0)
        sys_fail(Errc::IoError, "poll");
    int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0)
        sys_fail(Errc::IoError, "accept");
    return std::make_unique<TcpChannel>(fd);
}

void TcpListener::close()
{
    if (fd_ >= 0)
    {
        ::close(fd_);
        fd_ = -1;
    }
}

std::pair<std::string, std::uint16_t> parse_address(const std::string& addr)
{
    auto colon = addr.rfind(':');
    if (colon == std::string::npos || colon + 1 == addr.size())
        fail(Errc::InvalidArgument, "address must be host:port, got '" + addr + "'");
    std::string host = addr.substr(0, colon);
    unsigned long port = 0;
    try
    {
        std::size_t used = 0;
        port = std::stoul(addr.substr(colon + 1), &used);
        if (used != addr.size() - colon - 1)
            throw std::invalid_argument("trailing");
    }
    catch (const std::exception&)
    {
        fail(Errc::InvalidArgument, "bad port in '" + addr + "'");
    }
    if (port > 65535)
        fail(Errc::InvalidArgument, "port out of range in '" + addr + "'");
    if (host.empty())
        host = "0.0.0.0";
    return {host, static_cast<std::uint16_t>(port)};
}

// ---------------------------------------------------------------------------
// Interceptor

InterceptingChannel::InterceptingChannel(std::unique_ptr<Channel> inner) :
    inner_(std::move(inner))
{}

void InterceptingChannel::set_mutator(Mutator m)
{
    std::lock_guard lock(mutex_);
    mutator_ = std::move(m);
}

void InterceptingChannel::set_recording(bool on)
{
    std::lock_guard lock(mutex_);
    recording_ = on;
}

std::vector<CapturedFrame> InterceptingChannel::captured() const
{
    std::lock_guard lock(mutex_);
    return captured_;
}

void InterceptingChannel::clear_captured()
{
    std::lock_guard lock(mutex_);
    captured_.clear();
}

void InterceptingChannel::observe(FrameDirection dir, Bytes& data)
{
    std::lock_guard lock(mutex_);
    if (mutator_)
        mutator_(dir, data);
    if (recording_)
        captured_.push_back({dir, data});
}

void InterceptingChannel::send_msg(ByteView data)
{
    Bytes copy(data.begin(), data.end());
    observe(FrameDirection::Outbound, copy);
    inner_->send_msg(copy);
}

Bytes InterceptingChannel::recv_msg(Millis timeout)
{
    Bytes data = inner_->recv_msg(timeout);
    observe(FrameDirection::Inbound, data);
    return data;
}

void InterceptingChannel::reset()
{
    inner_->reset();
}

ChannelStats InterceptingChannel::stats() const
{
    return inner_->stats();
}

void InterceptingChannel::close()
{
    inner_->close();
}

std::size_t InterceptingChannel::capacity() const
{
    return inner_->capacity();
}

// ---------------------------------------------------------------------------
// Loopback

LoopbackChannel::LoopbackChannel(FrameHandler handler, std::size_t capacity) :
    handler_(std::move(handler)), capacity_(capacity)
{}

void LoopbackChannel::send_msg(ByteView data)
{
    if (closed_)
        fail(Errc::ChannelClosed, "loopback channel closed");
    if (data.size() > capacity_)
        fail(Errc::CapacityExceeded, "frame of " + std::to_string(data.size()) +
                                         " bytes exceeds capacity");
    ++stats_.messages_sent;
    stats_.bytes_sent += data.size();
    pending_.push_back(handler_(data));
}

Bytes LoopbackChannel::recv_msg(Millis)
{
    if (pending_.empty())
    {
        if (closed_)
            fail(Errc::ChannelClosed, "loopback channel closed");
        fail(Errc::Timeout, "no frame pending");
    }
    Bytes out = std::move(pending_.front());
    pending_.pop_front();
    ++stats_.messages_received;
    stats_.bytes_received += out.size();
    return out;
}

void LoopbackChannel::reset()
{
    pending_.clear();
}

ChannelStats LoopbackChannel::stats() const
{
    return stats_;
}

void LoopbackChannel::close()
{
    closed_ = true;
}

std::size_t LoopbackChannel::capacity() const
{
    return capacity_;
}

// ---------------------------------------------------------------------------
// Servers

FrameServer::FrameServer(std::shared_ptr<Channel> channel, FrameHandler handler) :
    channel_(std::move(channel))
{
    thread_ = std::thread([this, handler = std::move(handler)] {
        while (!stop_.load())
        {
            Bytes frame;
            try
            {
                frame = channel_->recv_msg(Millis(50));
            }
            catch (const Error& e)
            {
                if (e.code() == Errc::Timeout)
                    continue;
                return;
            }
            try
            {
                Bytes reply = handler(frame);
                channel_->send_msg(reply);
                ++served_;
            }
            catch (const Error&)
            {
                return;
            }
        }
    });
}

FrameServer::~FrameServer()
{
    stop();
}

void FrameServer::stop()
{
    stop_ = true;
    if (thread_.joinable())
        thread_.join();
}

TcpServer::TcpServer(const std::string& host, std::uint16_t port,
                     HandlerFactory factory) :
    listener_(host, port), factory_(std::move(factory))
{
    accept_thread_ = std::thread([this] {
        while (!stop_.load())
        {
            std::unique_ptr<TcpChannel> conn;
            try
            {
                conn = listener_.accept(Millis(50));
            }
            catch (const Error& e)
            {
                if (e.code() == Errc::Timeout)
                    continue;
                return;
            }
            std::shared_ptr<Channel> shared(std::move(conn));
            auto server = std::make_unique<FrameServer>(shared, factory_());
            std::lock_guard lock(mutex_);
            connections_.push_back(std::move(server));
        }
    });
}

TcpServer::~TcpServer()
{
    stop();
}

void TcpServer::stop()
{
    stop_ = true;
    if (accept_thread_.joinable())
        accept_thread_.join();
    std::lock_guard lock(mutex_);
    for (auto& c : connections_)
        c->stop();
    connections_.clear();
    listener_.close();
}

} // namespace spdmsim::transport
