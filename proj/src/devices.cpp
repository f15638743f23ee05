// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/devices.hpp>
#include <spdmsim/errors.hpp>
#include <spdmsim/protocol.hpp>

#include <algorithm>
#include <thread>

namespace spdmsim::devices
{

namespace
{

using Clock = std::chrono::steady_clock;

void put_le(Bytes& out, std::uint64_t v, std::size_t n)
{
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(ByteView in, std::size_t at, std::size_t n)
{
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i)
        v |= std::uint64_t(in[at + i]) << (8 * i);
    return v;
}

constexpr std::size_t kRequestHeader = 13;
// Largest Read/Write a single request may carry.
constexpr std::uint32_t kMaxTransfer = 8u << 20;

bool carries_data(BlockOpcode op)
{
    return op == BlockOpcode::Write || op == BlockOpcode::Spdm;
}

} // namespace

// ---------------------------------------------------------------------------
// RNG

RngDevice::RngDevice(std::optional<std::uint64_t> seed, std::uint8_t opcode) :
    opcode_(opcode), rng_(seed ? crypto::RandomSource(*seed) : crypto::RandomSource())
{}

Bytes RngDevice::handle(ByteView request)
{
    if (request.empty() || request.front() != opcode_)
        fail(Errc::InvalidArgument, "not an RNG request");
    std::lock_guard lock(mutex_);
    return rng_.bytes(kRngBytes);
}

void RngDevice::attach(Responder& responder)
{
    responder.register_app_handler(opcode_, [this](ByteView req) { return handle(req); });
}

Bytes rng_request(Requester& requester, std::optional<std::uint32_t> session_id,
                  std::uint8_t opcode)
{
    const Bytes req{opcode};
    Bytes out = session_id ? requester.send_app_request(*session_id, req)
                           : requester.send_plain_app_request(req);
    if (out.size() != kRngBytes)
        fail(Errc::MalformedMessage, "RNG response is " + std::to_string(out.size()) +
                                         " bytes, expected 8");
    return out;
}

// ---------------------------------------------------------------------------
// Block request codec

const char* opcode_name(BlockOpcode op) noexcept
{
    switch (op)
    {
        case BlockOpcode::Read: return "Read";
        case BlockOpcode::Write: return "Write";
        case BlockOpcode::Flush: return "Flush";
        case BlockOpcode::Spdm: return "Spdm";
    }
    return "?";
}

Bytes encode_block_request(const BlockRequest& req)
{
    if (carries_data(req.opcode) && req.data.size() != req.length_bytes)
        fail(Errc::InvalidArgument, "block request data length differs from length_bytes");
    if (!carries_data(req.opcode) && !req.data.empty())
        fail(Errc::InvalidArgument, std::string(opcode_name(req.opcode)) + " carries no data");
    Bytes out;
    out.reserve(kRequestHeader + req.data.size());
    out.push_back(static_cast<std::uint8_t>(req.opcode));
    put_le(out, req.sector, 8);
    put_le(out, req.length_bytes, 4);
    append(out, req.data);
    return out;
}

BlockRequest decode_block_request(ByteView raw)
{
    if (raw.size() < kRequestHeader)
        fail(Errc::MalformedMessage, "block request shorter than its header");
    BlockRequest req;
    const auto op = raw[0];
    switch (op)
    {
        case 0x00:
        case 0x01:
        case 0x04:
        case 0x5D: req.opcode = static_cast<BlockOpcode>(op); break;
        default: fail(Errc::MalformedMessage, "unknown block opcode " + std::to_string(op));
    }
    req.sector = get_le(raw, 1, 8);
    req.length_bytes = static_cast<std::uint32_t>(get_le(raw, 9, 4));
    const std::size_t rest = raw.size() - kRequestHeader;
    if (carries_data(req.opcode))
    {
        if (rest != req.length_bytes)
            fail(Errc::MalformedMessage, "block request data length mismatch");
        req.data.assign(raw.begin() + kRequestHeader, raw.end());
    }
    else if (rest != 0)
    {
        fail(Errc::MalformedMessage, "trailing bytes after block request");
    }
    if ((req.opcode == BlockOpcode::Read || req.opcode == BlockOpcode::Write) &&
        req.length_bytes % kSectorSize != 0)
        fail(Errc::MalformedMessage, "transfer length is not a multiple of 512");
    if (req.opcode == BlockOpcode::Spdm && req.sector != 0)
        fail(Errc::MalformedMessage, "protocol frames use sector 0");
    if (req.opcode == BlockOpcode::Flush && req.length_bytes != 0)
        fail(Errc::MalformedMessage, "flush carries no length");
    return req;
}

Bytes encode_block_response(const BlockResponse& rsp)
{
    Bytes out;
    out.reserve(1 + rsp.data.size());
    out.push_back(static_cast<std::uint8_t>(rsp.status));
    append(out, rsp.data);
    return out;
}

BlockResponse decode_block_response(ByteView raw)
{
    if (raw.empty())
        fail(Errc::MalformedMessage, "empty block response");
    if (raw[0] > static_cast<std::uint8_t>(BlockStatus::Unsupported))
        fail(Errc::MalformedMessage, "unknown block status");
    BlockResponse rsp;
    rsp.status = static_cast<BlockStatus>(raw[0]);
    rsp.data.assign(raw.begin() + 1, raw.end());
    return rsp;
}

// ---------------------------------------------------------------------------
// Device

std::chrono::nanoseconds LatencyModel::delay(bool seek, std::size_t bytes) const noexcept
{
    if (!enabled)
        return std::chrono::nanoseconds{0};
    return (seek ? seek_delay : std::chrono::nanoseconds{0}) +
           per_byte_delay * static_cast<std::int64_t>(bytes);
}

BlockDevice::BlockDevice(BlockDeviceConfig config, std::shared_ptr<Responder> responder) :
    config_(std::move(config)), responder_(std::move(responder))
{
    if (config_.capacity_sectors == 0)
        fail(Errc::InvalidArgument, "block device capacity must be positive");
    const std::uint64_t bytes = config_.capacity_sectors * kSectorSize;
    if (config_.backing_file)
    {
        const auto& path = *config_.backing_file;
        std::error_code ec;
        if (!std::filesystem::exists(path, ec))
            std::ofstream(path, std::ios::binary).close();
        if (std::filesystem::file_size(path, ec) < bytes)
            std::filesystem::resize_file(path, bytes, ec);
        if (ec)
            fail(Errc::IoError, "cannot size backing file " + path.string() + ": " + ec.message());
        file_.open(path, std::ios::in | std::ios::out | std::ios::binary);
        if (!file_)
            fail(Errc::IoError, "cannot open backing file " + path.string());
    }
    else
    {
        memory_.assign(bytes, 0);
    }
    if (responder_)
        responder_->register_app_handler(kBlockAppOpcode, [this](ByteView payload) {
            BlockResponse rsp;
            try
            {
                rsp = service(decode_block_request(payload.subspan(1)));
            }
            catch (const Error&)
            {
                rsp.status = BlockStatus::Malformed;
            }
            return encode_block_response(rsp);
        });
}

BlockDevice::~BlockDevice() = default;

void BlockDevice::read_store(std::uint64_t offset, std::uint8_t* out, std::size_t n) const
{
    if (!config_.backing_file)
    {
        std::copy_n(memory_.begin() + static_cast<long>(offset), n, out);
        return;
    }
    file_.seekg(static_cast<std::streamoff>(offset));
    file_.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(n));
    if (!file_)
    {
        file_.clear();
        fail(Errc::IoError, "backing file read failed");
    }
}

void BlockDevice::write_store(std::uint64_t offset, const std::uint8_t* in, std::size_t n)
{
    if (!config_.backing_file)
    {
        std::copy_n(in, n, memory_.begin() + static_cast<long>(offset));
        return;
    }
    file_.seekp(static_cast<std::streamoff>(offset));
    file_.write(reinterpret_cast<const char*>(in), static_cast<std::streamsize>(n));
    if (!file_)
    {
        file_.clear();
        fail(Errc::IoError, "backing file write failed");
    }
}

BlockResponse BlockDevice::service(const BlockRequest& req)
{
    std::lock_guard lock(mutex_);
    if (hook_)
        hook_(req);
    const auto start = Clock::now();
    BlockResponse rsp = service_locked(req);
    stats_.service_time += Clock::now() - start;
    return rsp;
}

BlockResponse BlockDevice::service_locked(const BlockRequest& req)
{
    ++stats_.requests;
    BlockResponse rsp;
    switch (req.opcode)
    {
        case BlockOpcode::Read:
        case BlockOpcode::Write:
        {
            const std::uint64_t count = req.length_bytes / kSectorSize;
            if (req.length_bytes == 0 || req.length_bytes > kMaxTransfer ||
                req.sector >= config_.capacity_sectors ||
                count > config_.capacity_sectors - req.sector)
            {
                rsp.status = BlockStatus::RangeError;
                return rsp;
            }
            const bool seek = !last_end_ || *last_end_ != req.sector;
            last_end_ = req.sector + count;
            if (seek)
                ++stats_.seeks;
            const auto d = config_.latency.delay(seek, req.length_bytes);
            stats_.modeled_delay += d;
            if (d.count() > 0)
                std::this_thread::sleep_for(d);
            const std::uint64_t offset = req.sector * kSectorSize;
            try
            {
                if (req.opcode == BlockOpcode::Read)
                {
                    rsp.data.resize(req.length_bytes);
                    read_store(offset, rsp.data.data(), rsp.data.size());
                    stats_.bytes_read += req.length_bytes;
                }
                else
                {
                    write_store(offset, req.data.data(), req.data.size());
                    stats_.bytes_written += req.length_bytes;
                }
            }
            catch (const Error&)
            {
                rsp = {BlockStatus::IoError, {}};
            }
            return rsp;
        }
        case BlockOpcode::Flush:
            ++stats_.flushes;
            if (config_.backing_file)
            {
                file_.flush();
                if (!file_)
                    rsp.status = BlockStatus::IoError;
            }
            return rsp;
        case BlockOpcode::Spdm: rsp.status = BlockStatus::Unsupported; return rsp;
    }
    rsp.status = BlockStatus::Malformed;
    return rsp;
}

Bytes BlockDevice::handle_frame(ByteView raw)
{
    BlockRequest req;
    try
    {
        req = decode_block_request(raw);
    }
    catch (const Error&)
    {
        return encode_block_response({BlockStatus::Malformed, {}});
    }
    if (req.opcode != BlockOpcode::Spdm)
        return encode_block_response(service(req));
    if (!responder_)
        return encode_block_response({BlockStatus::Unsupported, {}});
    {
        std::lock_guard lock(mutex_);
        ++stats_.spdm_frames;
    }
    return encode_block_response({BlockStatus::Ok, responder_->handle_frame(req.data)});
}

BlockDeviceStats BlockDevice::stats() const
{
    std::lock_guard lock(mutex_);
    return stats_;
}

void BlockDevice::set_service_hook(ServiceHook hook)
{
    std::lock_guard lock(mutex_);
    hook_ = std::move(hook);
}

Bytes BlockDevice::peek(std::uint64_t sector, std::size_t count) const
{
    std::lock_guard lock(mutex_);
    if (sector > config_.capacity_sectors || count > config_.capacity_sectors - sector)
        fail(Errc::RangeError, "peek beyond capacity");
    Bytes out(count * kSectorSize);
    read_store(sector * kSectorSize, out.data(), out.size());
    return out;
}

// ---------------------------------------------------------------------------
// Driver

SpdmOverBlockChannel::SpdmOverBlockChannel(std::shared_ptr<transport::Channel> inner) :
    inner_(std::move(inner))
{
    if (!inner_)
        fail(Errc::InvalidArgument, "block channel needs an inner channel");
}

void SpdmOverBlockChannel::send_msg(ByteView data)
{
    BlockRequest req;
    req.opcode = BlockOpcode::Spdm;
    req.length_bytes = static_cast<std::uint32_t>(data.size());
    req.data.assign(data.begin(), data.end());
    inner_->send_msg(encode_block_request(req));
}

Bytes SpdmOverBlockChannel::recv_msg(transport::Millis timeout)
{
    auto rsp = decode_block_response(inner_->recv_msg(timeout));
    if (rsp.status != BlockStatus::Ok)
        fail(Errc::UnsupportedRequest, "device refused the protocol frame");
    return std::move(rsp.data);
}

void SpdmOverBlockChannel::reset()
{
    inner_->reset();
}

transport::ChannelStats SpdmOverBlockChannel::stats() const
{
    return inner_->stats();
}

void SpdmOverBlockChannel::close()
{
    inner_->close();
}

std::size_t SpdmOverBlockChannel::capacity() const
{
    const auto c = inner_->capacity();
    return c > kRequestHeader ? c - kRequestHeader : 0;
}

BlockDriver::BlockDriver(std::shared_ptr<transport::Channel> channel, DriverMode mode,
                         RequesterConfig config,
                         std::shared_ptr<crypto::CryptoProvider> provider) :
    channel_(std::move(channel)), mode_(mode), timeout_(config.timeout)
{
    if (!channel_)
        fail(Errc::InvalidArgument, "driver needs a channel");
    if (mode_ == DriverMode::Plain)
        return;
    if (!provider)
        provider = std::make_shared<crypto::OpenSslProvider>();
    requester_ = std::make_unique<Requester>(std::move(config), std::move(provider),
                                             std::make_shared<SpdmOverBlockChannel>(channel_));
    const auto before = channel_->stats().messages_sent;
    const auto start = Clock::now();
    auto step = [&](const char* name, auto&& fn) {
        const auto t0 = Clock::now();
        fn();
        bootstrap_.steps.push_back({name, Clock::now() - t0});
    };
    step("init_connection", [&] { requester_->init_connection(); });
    step("fetch_digests", [&] { requester_->fetch_digests(); });
    step("fetch_certificate", [&] { requester_->fetch_certificate(0); });
    step("challenge_authenticate", [&] { requester_->challenge_authenticate(0); });
    step("establish_session", [&] { session_id_ = requester_->establish_session(); });
    bootstrap_.total = Clock::now() - start;
    bootstrap_.messages = channel_->stats().messages_sent - before;
}

BlockDriver::~BlockDriver()
{
    if (requester_ && session_id_)
    {
        try
        {
            requester_->end_session(*session_id_);
        }
        catch (const Error&)
        {}
    }
}

void BlockDriver::reestablish()
{
    if (mode_ != DriverMode::Secured)
        fail(Errc::InvalidPhase, "plain driver has no session");
    session_id_ = requester_->establish_session();
}

BlockResponse BlockDriver::submit(const BlockRequest& req)
{
    BlockResponse rsp;
    if (mode_ == DriverMode::Plain)
    {
        channel_->send_msg(encode_block_request(req));
        rsp = decode_block_response(channel_->recv_msg(timeout_));
    }
    else
    {
        if (!session_id_)
            fail(Errc::InvalidPhase, "no session");
        Bytes payload{kBlockAppOpcode};
        append(payload, encode_block_request(req));
        rsp = decode_block_response(requester_->send_app_request(*session_id_, payload));
    }
    switch (rsp.status)
    {
        case BlockStatus::Ok: return rsp;
        case BlockStatus::RangeError: fail(Errc::RangeError, "request beyond device capacity");
        case BlockStatus::Malformed: fail(Errc::MalformedMessage, "device rejected the request");
        case BlockStatus::IoError: fail(Errc::IoError, "device I/O error");
        case BlockStatus::Unsupported: fail(Errc::UnsupportedRequest, "device refused request");
    }
    fail(Errc::MalformedMessage, "unknown block status");
}

Bytes BlockDriver::read_sectors(std::uint64_t sector, std::size_t count)
{
    if (count == 0)
        fail(Errc::InvalidArgument, "read of zero sectors");
    BlockRequest req;
    req.opcode = BlockOpcode::Read;
    req.sector = sector;
    req.length_bytes = static_cast<std::uint32_t>(count * kSectorSize);
    auto rsp = submit(req);
    if (rsp.data.size() != req.length_bytes)
        fail(Errc::MalformedMessage, "short read");
    return std::move(rsp.data);
}

void BlockDriver::write_sectors(std::uint64_t sector, ByteView data)
{
    if (data.empty() || data.size() % kSectorSize != 0)
        fail(Errc::InvalidArgument, "write length must be a positive multiple of 512");
    BlockRequest req;
    req.opcode = BlockOpcode::Write;
    req.sector = sector;
    req.length_bytes = static_cast<std::uint32_t>(data.size());
    req.data.assign(data.begin(), data.end());
    submit(req);
}

void BlockDriver::flush()
{
    BlockRequest req;
    req.opcode = BlockOpcode::Flush;
    submit(req);
}

std::shared_ptr<Responder> make_device_responder(const DeviceIdentity& identity,
                                                 std::shared_ptr<crypto::CryptoProvider> provider,
                                                 ResponderConfig config)
{
    auto r = std::make_shared<Responder>(std::move(config), provider);
    r->provision_slot(0, identity.credential);
    r->provision_measurements(protocol::default_measurements(*provider));
    for (const auto& [hint, secret] : identity.psk_table)
        r->provision_psk(hint, secret);
    for (const auto& root : identity.trusted_requester_roots)
        r->trust_requester_root(root);
    return r;
}

} // namespace spdmsim::devices
