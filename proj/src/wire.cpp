// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/errors.hpp>
#include <spdmsim/wire.hpp>

#include <bit>
#include <cstring>
#include <limits>

namespace spdmsim::wire
{

bool is_supported_version(std::uint8_t version) noexcept
{
    return version == kVersion10 || version == kVersion11;
}

const char* code_name(Code code) noexcept
{
    switch (code)
    {
        case Code::GetDigests: return "GET_DIGESTS";
        case Code::Digests: return "DIGESTS";
        case Code::GetCertificate: return "GET_CERTIFICATE";
        case Code::Certificate: return "CERTIFICATE";
        case Code::Challenge: return "CHALLENGE";
        case Code::ChallengeAuth: return "CHALLENGE_AUTH";
        case Code::GetVersion: return "GET_VERSION";
        case Code::Version: return "VERSION";
        case Code::GetMeasurements: return "GET_MEASUREMENTS";
        case Code::Measurements: return "MEASUREMENTS";
        case Code::GetCapabilities: return "GET_CAPABILITIES";
        case Code::Capabilities: return "CAPABILITIES";
        case Code::NegotiateAlgorithms: return "NEGOTIATE_ALGORITHMS";
        case Code::Algorithms: return "ALGORITHMS";
        case Code::KeyExchange: return "KEY_EXCHANGE";
        case Code::KeyExchangeRsp: return "KEY_EXCHANGE_RSP";
        case Code::Finish: return "FINISH";
        case Code::FinishRsp: return "FINISH_RSP";
        case Code::PskExchange: return "PSK_EXCHANGE";
        case Code::PskExchangeRsp: return "PSK_EXCHANGE_RSP";
        case Code::PskFinish: return "PSK_FINISH";
        case Code::PskFinishRsp: return "PSK_FINISH_RSP";
        case Code::Heartbeat: return "HEARTBEAT";
        case Code::HeartbeatAck: return "HEARTBEAT_ACK";
        case Code::KeyUpdate: return "KEY_UPDATE";
        case Code::KeyUpdateAck: return "KEY_UPDATE_ACK";
        case Code::GetEncapsulatedRequest: return "GET_ENCAPSULATED_REQUEST";
        case Code::EncapsulatedRequest: return "ENCAPSULATED_REQUEST";
        case Code::DeliverEncapsulatedResponse:
            return "DELIVER_ENCAPSULATED_RESPONSE";
        case Code::EncapsulatedResponseAck: return "ENCAPSULATED_RESPONSE_ACK";
        case Code::EndSession: return "END_SESSION";
        case Code::EndSessionAck: return "END_SESSION_ACK";
        case Code::AppData: return "APP_DATA";
        case Code::Error: return "ERROR";
    }
    return "UNKNOWN";
}

bool is_known_code(std::uint8_t code) noexcept
{
    return std::string_view(code_name(static_cast<Code>(code))) != "UNKNOWN";
}

const char* error_code_name(ErrorCode code) noexcept
{
    switch (code)
    {
        case ErrorCode::InvalidRequest: return "InvalidRequest";
        case ErrorCode::Busy: return "Busy";
        case ErrorCode::UnexpectedRequest: return "UnexpectedRequest";
        case ErrorCode::DecryptError: return "DecryptError";
        case ErrorCode::UnsupportedRequest: return "UnsupportedRequest";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
        case ErrorCode::MalformedMessage: return "MalformedMessage";
    }
    return "Unknown";
}

namespace
{

bool is_known_error_code(std::uint8_t v)
{
    return std::string_view(error_code_name(static_cast<ErrorCode>(v))) !=
           "Unknown";
}

constexpr int kMaxNesting = 4;

class Writer
{
  public:
    explicit Writer(Bytes& out) : out_(out) {}

    void u8(std::uint8_t v)
    {
        out_.push_back(v);
    }
    void u16(std::uint16_t v)
    {
        put_le(v, 2);
    }
    void u32(std::uint32_t v)
    {
        put_le(v, 4);
    }
    void u64(std::uint64_t v)
    {
        put_le(v, 8);
    }
    void raw(ByteView data)
    {
        append(out_, data);
    }
    void vec16(ByteView data)
    {
        if (data.size() > std::numeric_limits<std::uint16_t>::max())
            fail(Errc::EncodingOverflow, "field exceeds 2-byte length prefix");
        u16(static_cast<std::uint16_t>(data.size()));
        raw(data);
    }
    void vec32(ByteView data)
    {
        if (data.size() > std::numeric_limits<std::uint32_t>::max())
            fail(Errc::EncodingOverflow, "field exceeds 4-byte length prefix");
        u32(static_cast<std::uint32_t>(data.size()));
        raw(data);
    }
    void ids(const std::vector<std::uint16_t>& list)
    {
        if (list.size() > std::numeric_limits<std::uint8_t>::max())
            fail(Errc::EncodingOverflow, "algorithm list exceeds 255 entries");
        u8(static_cast<std::uint8_t>(list.size()));
        for (auto id : list)
            u16(id);
    }

  private:
    void put_le(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i)
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    Bytes& out_;
};

class Reader
{
  public:
    explicit Reader(ByteView data) : data_(data) {}

    std::uint8_t u8()
    {
        need(1);
        return data_[pos_++];
    }
    std::uint16_t u16()
    {
        return static_cast<std::uint16_t>(get_le(2));
    }
    std::uint32_t u32()
    {
        return static_cast<std::uint32_t>(get_le(4));
    }
    std::uint64_t u64()
    {
        return get_le(8);
    }
    Bytes raw(std::size_t n)
    {
        need(n);
        Bytes out(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }
    ByteView view(std::size_t n)
    {
        need(n);
        auto v = data_.subspan(pos_, n);
        pos_ += n;
        return v;
    }
    template <std::size_t N>
    std::array<std::uint8_t, N> fixed()
    {
        need(N);
        std::array<std::uint8_t, N> out;
        std::memcpy(out.data(), data_.data() + pos_, N);
        pos_ += N;
        return out;
    }
    Bytes vec16()
    {
        return raw(u16());
    }
    Bytes vec32()
    {
        return raw(u32());
    }
    ByteView view32()
    {
        return view(u32());
    }
    std::vector<std::uint16_t> ids()
    {
        std::vector<std::uint16_t> list(u8());
        for (auto& id : list)
            id = u16();
        return list;
    }
    void expect_end() const
    {
        if (pos_ != data_.size())
            fail(Errc::MalformedMessage, "trailing bytes after message");
    }

  private:
    void need(std::size_t n) const
    {
        if (n > data_.size() - pos_)
            fail(Errc::MalformedMessage, "truncated message");
    }
    std::uint64_t get_le(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    ByteView data_;
    std::size_t pos_ = 0;
};

struct Params
{
    std::uint8_t p1 = 0;
    std::uint8_t p2 = 0;
};

void require_zero(std::uint8_t value, const char* what)
{
    if (value != 0)
        fail(Errc::MalformedMessage, std::string("nonzero reserved ") + what);
}

void require_empty_params(Params p)
{
    require_zero(p.p1, "param1");
    require_zero(p.p2, "param2");
}

std::uint8_t check_slot(std::uint8_t slot)
{
    if (slot >= kMaxSlots)
        fail(Errc::MalformedMessage, "slot index out of range");
    return slot;
}

bool flag_bit(std::uint8_t param, const char* what)
{
    if (param > 1)
        fail(Errc::MalformedMessage, std::string("reserved bits set in ") + what);
    return param == 1;
}

KeyUpdateOp check_key_update_op(std::uint8_t v)
{
    if (v < 1 || v > 3)
        fail(Errc::MalformedMessage, "unknown key update operation");
    return static_cast<KeyUpdateOp>(v);
}

Message decode_nested(ByteView data, int depth);

void encode_inner(Writer& w, const Message& inner)
{
    w.vec32(encode_message(inner));
}

// Each overload fills the header params and writes the body.
void encode_body(const GetVersion&, Params&, Writer&) {}
void encode_body(const Version& m, Params&, Writer& w)
{
    if (m.versions.size() > 255)
        fail(Errc::EncodingOverflow, "version list exceeds 255 entries");
    w.u8(static_cast<std::uint8_t>(m.versions.size()));
    for (auto v : m.versions)
        w.u8(v);
}
void encode_body(const GetCapabilities& m, Params&, Writer& w)
{
    w.u8(m.ct_exponent);
    w.u32(m.flags);
}
void encode_body(const Capabilities& m, Params&, Writer& w)
{
    w.u8(m.ct_exponent);
    w.u32(m.flags);
}
void encode_body(const NegotiateAlgorithms& m, Params&, Writer& w)
{
    w.ids(m.offered.hash);
    w.ids(m.offered.responder_sig);
    w.ids(m.offered.requester_sig);
    w.ids(m.offered.dhe);
    w.ids(m.offered.aead);
    w.ids(m.offered.key_schedule);
}
void encode_body(const Algorithms& m, Params&, Writer& w)
{
    w.u16(static_cast<std::uint16_t>(m.selected.hash));
    w.u16(static_cast<std::uint16_t>(m.selected.responder_sig));
    w.u16(static_cast<std::uint16_t>(m.selected.requester_sig));
    w.u16(static_cast<std::uint16_t>(m.selected.dhe_group));
    w.u16(static_cast<std::uint16_t>(m.selected.aead));
    w.u16(static_cast<std::uint16_t>(m.selected.key_schedule));
}
void encode_body(const GetDigests&, Params&, Writer&) {}
void encode_body(const Digests& m, Params& p, Writer& w)
{
    if (static_cast<std::size_t>(std::popcount(m.slot_mask)) != m.digests.size())
        fail(Errc::EncodingOverflow, "digest count does not match slot mask");
    p.p2 = m.slot_mask;
    for (const auto& d : m.digests)
        w.vec16(d);
}
void encode_body(const GetCertificate& m, Params& p, Writer& w)
{
    p.p1 = check_slot(m.slot);
    w.u32(m.offset);
    w.u32(m.length);
}
void encode_body(const Certificate& m, Params& p, Writer& w)
{
    p.p1 = check_slot(m.slot);
    w.u32(m.remainder_length);
    w.vec32(m.portion);
}
void encode_body(const Challenge& m, Params& p, Writer& w)
{
    p.p1 = check_slot(m.slot);
    p.p2 = m.measurement_summary_selector;
    w.raw(m.nonce);
}
void encode_body(const ChallengeAuth& m, Params& p, Writer& w)
{
    p.p1 = static_cast<std::uint8_t>(check_slot(m.slot) |
                                     (m.mutual_auth_requested ? 0x80 : 0));
    w.vec16(m.cert_chain_digest);
    w.raw(m.nonce);
    w.vec16(m.measurement_summary_digest);
    w.vec16(m.opaque);
    w.vec16(m.signature);
}
void encode_body(const GetMeasurements& m, Params& p, Writer& w)
{
    p.p1 = m.signature_requested ? 1 : 0;
    p.p2 = m.operand;
    if (m.signature_requested)
    {
        w.raw(m.nonce);
        w.u8(check_slot(m.slot));
    }
}
void encode_body(const Measurements& m, Params& p, Writer& w)
{
    if (m.blocks.size() > 255)
        fail(Errc::EncodingOverflow, "more than 255 measurement blocks");
    p.p1 = m.block_count;
    p.p2 = m.signature ? 1 : 0;
    w.u8(static_cast<std::uint8_t>(m.blocks.size()));
    for (const auto& b : m.blocks)
    {
        w.u8(b.index);
        w.u8(b.block_type);
        w.vec16(b.payload);
        w.vec16(b.digest);
    }
    w.raw(m.nonce);
    if (m.signature)
        w.vec16(*m.signature);
}
void encode_body(const KeyExchange& m, Params& p, Writer& w)
{
    p.p1 = m.measurement_summary_selector;
    p.p2 = check_slot(m.slot);
    w.u16(m.req_session_id);
    w.raw(m.requester_random);
    w.vec16(m.dhe_public);
}
void encode_body(const KeyExchangeRsp& m, Params& p, Writer& w)
{
    p.p1 = static_cast<std::uint8_t>(m.mutual_auth);
    w.u16(m.rsp_session_id);
    w.raw(m.responder_random);
    w.vec16(m.dhe_public);
    w.vec16(m.measurement_summary_digest);
    w.vec16(m.signature);
    w.vec16(m.verify_data);
}
void encode_body(const Finish& m, Params& p, Writer& w)
{
    p.p1 = m.requester_signature ? 1 : 0;
    p.p2 = check_slot(m.req_slot);
    if (m.requester_signature)
        w.vec16(*m.requester_signature);
    w.vec16(m.verify_data);
}
void encode_body(const FinishRsp& m, Params&, Writer& w)
{
    w.vec16(m.verify_data);
}
void encode_body(const PskExchange& m, Params& p, Writer& w)
{
    p.p1 = m.measurement_summary_selector;
    w.u16(m.req_session_id);
    w.vec16(m.psk_hint);
    w.vec16(m.requester_context);
}
void encode_body(const PskExchangeRsp& m, Params&, Writer& w)
{
    w.u16(m.rsp_session_id);
    w.vec16(m.measurement_summary_digest);
    w.vec16(m.responder_context);
    w.vec16(m.verify_data);
}
void encode_body(const PskFinish& m, Params&, Writer& w)
{
    w.vec16(m.verify_data);
}
void encode_body(const PskFinishRsp&, Params&, Writer&) {}
void encode_body(const Heartbeat&, Params&, Writer&) {}
void encode_body(const HeartbeatAck&, Params&, Writer&) {}
void encode_body(const KeyUpdate& m, Params& p, Writer&)
{
    p.p1 = static_cast<std::uint8_t>(m.op);
    p.p2 = m.tag;
}
void encode_body(const KeyUpdateAck& m, Params& p, Writer&)
{
    p.p1 = static_cast<std::uint8_t>(m.op);
    p.p2 = m.tag;
}
void encode_body(const EndSession&, Params&, Writer&) {}
void encode_body(const EndSessionAck&, Params&, Writer&) {}
void encode_body(const GetEncapsulatedRequest&, Params&, Writer&) {}
void encode_body(const EncapsulatedRequest& m, Params& p, Writer& w)
{
    p.p1 = m.request_id;
    encode_inner(w, *m.inner);
}
void encode_body(const DeliverEncapsulatedResponse& m, Params& p, Writer& w)
{
    p.p1 = m.request_id;
    encode_inner(w, *m.inner);
}
void encode_body(const EncapsulatedResponseAck& m, Params& p, Writer& w)
{
    p.p1 = m.request_id;
    p.p2 = m.inner ? 1 : 0;
    if (m.inner)
        encode_inner(w, **m.inner);
}
void encode_body(const ErrorMsg& m, Params& p, Writer& w)
{
    p.p1 = static_cast<std::uint8_t>(m.code);
    p.p2 = m.data;
    w.vec16(m.detail);
}
void encode_body(const AppData& m, Params&, Writer& w)
{
    w.vec32(m.payload);
}

Body decode_body(Code code, Params p, Reader& r, int depth)
{
    auto inner = [&]() { return Boxed(decode_nested(r.view32(), depth + 1)); };

    switch (code)
    {
        case Code::GetVersion:
            require_empty_params(p);
            return GetVersion{};
        case Code::Version:
        {
            require_empty_params(p);
            Version m;
            m.versions = r.raw(r.u8());
            return m;
        }
        case Code::GetCapabilities:
        {
            require_empty_params(p);
            GetCapabilities m;
            m.ct_exponent = r.u8();
            m.flags = r.u32();
            return m;
        }
        case Code::Capabilities:
        {
            require_empty_params(p);
            Capabilities m;
            m.ct_exponent = r.u8();
            m.flags = r.u32();
            return m;
        }
        case Code::NegotiateAlgorithms:
        {
            require_empty_params(p);
            NegotiateAlgorithms m;
            m.offered.hash = r.ids();
            m.offered.responder_sig = r.ids();
            m.offered.requester_sig = r.ids();
            m.offered.dhe = r.ids();
            m.offered.aead = r.ids();
            m.offered.key_schedule = r.ids();
            return m;
        }
        case Code::Algorithms:
        {
            require_empty_params(p);
            Algorithms m;
            m.selected.hash = static_cast<HashAlgo>(r.u16());
            m.selected.responder_sig = static_cast<SigAlgo>(r.u16());
            m.selected.requester_sig = static_cast<SigAlgo>(r.u16());
            m.selected.dhe_group = static_cast<DheGroup>(r.u16());
            m.selected.aead = static_cast<AeadAlgo>(r.u16());
            m.selected.key_schedule = static_cast<KeySchedule>(r.u16());
            return m;
        }
        case Code::GetDigests:
            require_empty_params(p);
            return GetDigests{};
        case Code::Digests:
        {
            require_zero(p.p1, "param1");
            Digests m;
            m.slot_mask = p.p2;
            for (int i = 0; i < std::popcount(m.slot_mask); ++i)
                m.digests.push_back(r.vec16());
            return m;
        }
        case Code::GetCertificate:
        {
            require_zero(p.p2, "param2");
            GetCertificate m;
            m.slot = check_slot(p.p1);
            m.offset = r.u32();
            m.length = r.u32();
            return m;
        }
        case Code::Certificate:
        {
            require_zero(p.p2, "param2");
            Certificate m;
            m.slot = check_slot(p.p1);
            m.remainder_length = r.u32();
            m.portion = r.vec32();
            return m;
        }
        case Code::Challenge:
        {
            Challenge m;
            m.slot = check_slot(p.p1);
            m.measurement_summary_selector = p.p2;
            m.nonce = r.fixed<kNonceSize>();
            return m;
        }
        case Code::ChallengeAuth:
        {
            require_zero(p.p2, "param2");
            if ((p.p1 & 0x70) != 0)
                fail(Errc::MalformedMessage, "reserved bits set in param1");
            ChallengeAuth m;
            m.slot = check_slot(p.p1 & 0x0f);
            m.mutual_auth_requested = (p.p1 & 0x80) != 0;
            m.cert_chain_digest = r.vec16();
            m.nonce = r.fixed<kNonceSize>();
            m.measurement_summary_digest = r.vec16();
            m.opaque = r.vec16();
            m.signature = r.vec16();
            return m;
        }
        case Code::GetMeasurements:
        {
            GetMeasurements m;
            m.signature_requested = flag_bit(p.p1, "param1");
            m.operand = p.p2;
            if (m.signature_requested)
            {
                m.nonce = r.fixed<kNonceSize>();
                m.slot = check_slot(r.u8());
            }
            return m;
        }
        case Code::Measurements:
        {
            Measurements m;
            m.block_count = p.p1;
            bool has_sig = flag_bit(p.p2, "param2");
            auto n = r.u8();
            m.blocks.resize(n);
            for (auto& b : m.blocks)
            {
                b.index = r.u8();
                b.block_type = r.u8();
                b.payload = r.vec16();
                b.digest = r.vec16();
            }
            m.nonce = r.fixed<kNonceSize>();
            if (has_sig)
                m.signature = r.vec16();
            return m;
        }
        case Code::KeyExchange:
        {
            KeyExchange m;
            m.measurement_summary_selector = p.p1;
            m.slot = check_slot(p.p2);
            m.req_session_id = r.u16();
            m.requester_random = r.fixed<kNonceSize>();
            m.dhe_public = r.vec16();
            return m;
        }
        case Code::KeyExchangeRsp:
        {
            require_zero(p.p2, "param2");
            if (p.p1 > 2)
                fail(Errc::MalformedMessage, "unknown mutual auth mode");
            KeyExchangeRsp m;
            m.mutual_auth = static_cast<MutualAuthMode>(p.p1);
            m.rsp_session_id = r.u16();
            m.responder_random = r.fixed<kNonceSize>();
            m.dhe_public = r.vec16();
            m.measurement_summary_digest = r.vec16();
            m.signature = r.vec16();
            m.verify_data = r.vec16();
            return m;
        }
        case Code::Finish:
        {
            Finish m;
            bool has_sig = flag_bit(p.p1, "param1");
            m.req_slot = check_slot(p.p2);
            if (has_sig)
                m.requester_signature = r.vec16();
            m.verify_data = r.vec16();
            return m;
        }
        case Code::FinishRsp:
        {
            require_empty_params(p);
            FinishRsp m;
            m.verify_data = r.vec16();
            return m;
        }
        case Code::PskExchange:
        {
            require_zero(p.p2, "param2");
            PskExchange m;
            m.measurement_summary_selector = p.p1;
            m.req_session_id = r.u16();
            m.psk_hint = r.vec16();
            m.requester_context = r.vec16();
            return m;
        }
        case Code::PskExchangeRsp:
        {
            require_empty_params(p);
            PskExchangeRsp m;
            m.rsp_session_id = r.u16();
            m.measurement_summary_digest = r.vec16();
            m.responder_context = r.vec16();
            m.verify_data = r.vec16();
            return m;
        }
        case Code::PskFinish:
        {
            require_empty_params(p);
            PskFinish m;
            m.verify_data = r.vec16();
            return m;
        }
        case Code::PskFinishRsp:
            require_empty_params(p);
            return PskFinishRsp{};
        case Code::Heartbeat:
            require_empty_params(p);
            return Heartbeat{};
        case Code::HeartbeatAck:
            require_empty_params(p);
            return HeartbeatAck{};
        case Code::KeyUpdate:
            return KeyUpdate{check_key_update_op(p.p1), p.p2};
        case Code::KeyUpdateAck:
            return KeyUpdateAck{check_key_update_op(p.p1), p.p2};
        case Code::EndSession:
            require_empty_params(p);
            return EndSession{};
        case Code::EndSessionAck:
            require_empty_params(p);
            return EndSessionAck{};
        case Code::GetEncapsulatedRequest:
            require_empty_params(p);
            return GetEncapsulatedRequest{};
        case Code::EncapsulatedRequest:
        {
            require_zero(p.p2, "param2");
            EncapsulatedRequest m;
            m.request_id = p.p1;
            m.inner = inner();
            return m;
        }
        case Code::DeliverEncapsulatedResponse:
        {
            require_zero(p.p2, "param2");
            DeliverEncapsulatedResponse m;
            m.request_id = p.p1;
            m.inner = inner();
            return m;
        }
        case Code::EncapsulatedResponseAck:
        {
            EncapsulatedResponseAck m;
            m.request_id = p.p1;
            if (flag_bit(p.p2, "param2"))
                m.inner = inner();
            return m;
        }
        case Code::Error:
        {
            if (!is_known_error_code(p.p1))
                fail(Errc::MalformedMessage, "unknown error code");
            ErrorMsg m;
            m.code = static_cast<ErrorCode>(p.p1);
            m.data = p.p2;
            m.detail = r.vec16();
            return m;
        }
        case Code::AppData:
        {
            require_empty_params(p);
            AppData m;
            m.payload = r.vec32();
            return m;
        }
    }
    fail(Errc::UnsupportedRequest, "unknown request/response code");
}

Message decode_nested(ByteView data, int depth)
{
    if (depth > kMaxNesting)
        fail(Errc::MalformedMessage, "encapsulation nested too deeply");
    Reader r(data);
    std::uint8_t version = r.u8();
    std::uint8_t code = r.u8();
    Params p{r.u8(), r.u8()};
    if (!is_supported_version(version))
        fail(Errc::VersionMismatch, "unsupported version byte");
    if (!is_known_code(code))
        fail(Errc::UnsupportedRequest, "unknown request/response code");
    Message msg{version, decode_body(static_cast<Code>(code), p, r, depth)};
    r.expect_end();
    return msg;
}

} // namespace

Boxed::Boxed() : ptr_(std::make_unique<Message>()) {}
Boxed::Boxed(Message msg) : ptr_(std::make_unique<Message>(std::move(msg))) {}
Boxed::Boxed(const Boxed& other) : ptr_(std::make_unique<Message>(*other.ptr_))
{}
Boxed::Boxed(Boxed&&) noexcept = default;
Boxed& Boxed::operator=(const Boxed& other)
{
    if (this != &other)
        ptr_ = std::make_unique<Message>(*other.ptr_);
    return *this;
}
Boxed& Boxed::operator=(Boxed&&) noexcept = default;
Boxed::~Boxed() = default;

bool operator==(const Boxed& a, const Boxed& b)
{
    if (!a.ptr_ || !b.ptr_)
        return a.ptr_ == b.ptr_;
    return *a.ptr_ == *b.ptr_;
}

Code code_of(const Body& body) noexcept
{
    static constexpr Code table[] = {
        Code::GetVersion,
        Code::Version,
        Code::GetCapabilities,
        Code::Capabilities,
        Code::NegotiateAlgorithms,
        Code::Algorithms,
        Code::GetDigests,
        Code::Digests,
        Code::GetCertificate,
        Code::Certificate,
        Code::Challenge,
        Code::ChallengeAuth,
        Code::GetMeasurements,
        Code::Measurements,
        Code::KeyExchange,
        Code::KeyExchangeRsp,
        Code::Finish,
        Code::FinishRsp,
        Code::PskExchange,
        Code::PskExchangeRsp,
        Code::PskFinish,
        Code::PskFinishRsp,
        Code::Heartbeat,
        Code::HeartbeatAck,
        Code::KeyUpdate,
        Code::KeyUpdateAck,
        Code::EndSession,
        Code::EndSessionAck,
        Code::GetEncapsulatedRequest,
        Code::EncapsulatedRequest,
        Code::DeliverEncapsulatedResponse,
        Code::EncapsulatedResponseAck,
        Code::Error,
        Code::AppData,
    };
    static_assert(std::size(table) == std::variant_size_v<Body>);
    return table[body.index()];
}

Code Message::code() const noexcept
{
    return code_of(body);
}

Message make_error(ErrorCode code, std::uint8_t version, std::string_view detail)
{
    ErrorMsg e;
    e.code = code;
    e.detail = to_bytes(detail);
    return make(std::move(e), version);
}

Bytes encode_message(const Message& msg)
{
    Bytes body;
    Writer w(body);
    Params p;
    std::visit([&](const auto& m) { encode_body(m, p, w); }, msg.body);

    Bytes out;
    out.reserve(kHeaderSize + body.size());
    out.push_back(msg.version);
    out.push_back(static_cast<std::uint8_t>(msg.code()));
    out.push_back(p.p1);
    out.push_back(p.p2);
    append(out, body);
    return out;
}

Message decode_message(ByteView data)
{
    return decode_nested(data, 0);
}

std::array<std::uint8_t, kRecordHeaderSize>
    record_header(std::uint32_t session_id, std::uint64_t seq_num,
                  std::uint32_t ciphertext_length) noexcept
{
    std::array<std::uint8_t, kRecordHeaderSize> h{};
    for (int i = 0; i < 4; ++i)
        h[i] = static_cast<std::uint8_t>(session_id >> (8 * i));
    for (int i = 0; i < 8; ++i)
        h[4 + i] = static_cast<std::uint8_t>(seq_num >> (8 * i));
    for (int i = 0; i < 4; ++i)
        h[12 + i] = static_cast<std::uint8_t>(ciphertext_length >> (8 * i));
    return h;
}

Bytes encode_secured_record(const SecuredRecord& rec)
{
    if (rec.ciphertext_and_tag.size() > std::numeric_limits<std::uint32_t>::max())
        fail(Errc::EncodingOverflow, "record exceeds 4-byte length field");
    if (rec.ciphertext_and_tag.size() < kAeadTagSize)
        fail(Errc::MalformedMessage, "record shorter than the AEAD tag");
    auto header = record_header(
        rec.session_id, rec.seq_num,
        static_cast<std::uint32_t>(rec.ciphertext_and_tag.size()));
    Bytes out;
    out.reserve(header.size() + rec.ciphertext_and_tag.size());
    append(out, header);
    append(out, rec.ciphertext_and_tag);
    return out;
}

SecuredRecord decode_secured_record(ByteView data)
{
    Reader r(data);
    SecuredRecord rec;
    rec.session_id = r.u32();
    rec.seq_num = r.u64();
    auto length = r.u32();
    if (length < kAeadTagSize)
        fail(Errc::MalformedMessage, "record shorter than the AEAD tag");
    rec.ciphertext_and_tag = r.raw(length);
    r.expect_end();
    return rec;
}

Bytes encode_frame(FrameKind kind, ByteView payload)
{
    Bytes out;
    out.reserve(payload.size() + 1);
    out.push_back(static_cast<std::uint8_t>(kind));
    append(out, payload);
    return out;
}

Frame decode_frame(ByteView data)
{
    if (data.empty())
        fail(Errc::MalformedMessage, "empty frame");
    auto kind = data[0];
    if (kind != static_cast<std::uint8_t>(FrameKind::RawApp) &&
        kind != static_cast<std::uint8_t>(FrameKind::Spdm) &&
        kind != static_cast<std::uint8_t>(FrameKind::Secured))
        fail(Errc::MalformedMessage, "unknown frame kind");
    return Frame{static_cast<FrameKind>(kind), Bytes(data.begin() + 1, data.end())};
}

} // namespace spdmsim::wire
