// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include "message_gen.hpp"

#include <bit>

namespace spdmsim::testing
{

namespace w = wire;

namespace
{

class Gen
{
  public:
    explicit Gen(std::mt19937_64& rng) : rng_(rng) {}

    std::uint64_t below(std::uint64_t n)
    {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng_);
    }
    bool coin()
    {
        return below(2) == 1;
    }
    std::uint8_t u8()
    {
        return static_cast<std::uint8_t>(below(256));
    }
    std::uint16_t u16()
    {
        return static_cast<std::uint16_t>(below(65536));
    }
    std::uint32_t u32()
    {
        return static_cast<std::uint32_t>(rng_());
    }
    std::uint8_t slot()
    {
        return static_cast<std::uint8_t>(below(w::kMaxSlots));
    }
    // Mostly short, occasionally empty or a few KiB.
    Bytes bytes(std::size_t typical = 64)
    {
        std::size_t n;
        switch (below(8))
        {
            case 0: n = 0; break;
            case 1: n = below(4096) + 1; break;
            default: n = below(typical) + 1;
        }
        Bytes b(n);
        for (auto& x : b)
            x = u8();
        return b;
    }
    w::Nonce nonce()
    {
        w::Nonce n;
        for (auto& x : n)
            x = u8();
        return n;
    }
    std::vector<std::uint16_t> ids()
    {
        std::vector<std::uint16_t> v(below(6));
        for (auto& x : v)
            x = u16();
        return v;
    }

  private:
    std::mt19937_64& rng_;
};

const w::ErrorCode kErrorCodes[] = {
    w::ErrorCode::InvalidRequest,     w::ErrorCode::Busy,
    w::ErrorCode::UnexpectedRequest,  w::ErrorCode::DecryptError,
    w::ErrorCode::UnsupportedRequest, w::ErrorCode::VersionMismatch,
    w::ErrorCode::MalformedMessage,
};

w::Body random_body(std::mt19937_64& rng, std::size_t variant, int depth);

template <class T>
std::size_t index_of()
{
    static const std::size_t i = w::Body(std::in_place_type<T>).index();
    return i;
}

bool encapsulates(std::size_t v)
{
    return v == index_of<w::EncapsulatedRequest>() ||
           v == index_of<w::DeliverEncapsulatedResponse>() ||
           v == index_of<w::EncapsulatedResponseAck>();
}

w::Message nested(std::mt19937_64& rng, int depth)
{
    Gen g(rng);
    // At the depth limit only non-encapsulating variants are drawn.
    std::size_t v;
    do
        v = g.below(kVariantCount);
    while (depth <= 0 && encapsulates(v));
    return w::Message{g.coin() ? w::kVersion10 : w::kVersion11, random_body(rng, v, depth - 1)};
}

static_assert(kVariantCount == 34, "random_body covers each Body alternative by index");

w::Body random_body(std::mt19937_64& rng, std::size_t variant, int depth)
{
    Gen g(rng);
    switch (variant)
    {
        case 0: return w::GetVersion{};
        case 1:
        {
            w::Version m;
            m.versions.resize(g.below(4));
            for (auto& v : m.versions)
                v = g.u8();
            return m;
        }
        case 2: return w::GetCapabilities{g.u8(), g.u32()};
        case 3: return w::Capabilities{g.u8(), g.u32()};
        case 4:
        {
            w::NegotiateAlgorithms m;
            m.offered = {g.ids(), g.ids(), g.ids(), g.ids(), g.ids(), g.ids()};
            return m;
        }
        case 5:
        {
            w::Algorithms m;
            m.selected.hash = static_cast<HashAlgo>(g.u16());
            m.selected.responder_sig = static_cast<SigAlgo>(g.u16());
            m.selected.requester_sig = static_cast<SigAlgo>(g.u16());
            m.selected.dhe_group = static_cast<DheGroup>(g.u16());
            m.selected.aead = static_cast<AeadAlgo>(g.u16());
            m.selected.key_schedule = static_cast<KeySchedule>(g.u16());
            return m;
        }
        case 6: return w::GetDigests{};
        case 7:
        {
            w::Digests m;
            m.slot_mask = g.u8();
            for (int i = 0; i < std::popcount(m.slot_mask); ++i)
                m.digests.push_back(g.bytes(48));
            return m;
        }
        case 8: return w::GetCertificate{g.slot(), g.u32(), g.u32()};
        case 9: return w::Certificate{g.slot(), g.bytes(1024), g.u32()};
        case 10: return w::Challenge{g.slot(), g.u8(), g.nonce()};
        case 11:
        {
            w::ChallengeAuth m;
            m.slot = g.slot();
            m.mutual_auth_requested = g.coin();
            m.cert_chain_digest = g.bytes(48);
            m.nonce = g.nonce();
            m.measurement_summary_digest = g.bytes(48);
            m.opaque = g.bytes(16);
            m.signature = g.bytes(384);
            return m;
        }
        case 12:
        {
            w::GetMeasurements m;
            m.operand = g.u8();
            m.signature_requested = g.coin();
            if (m.signature_requested)
            {
                m.nonce = g.nonce();
                m.slot = g.slot();
            }
            return m;
        }
        case 13:
        {
            w::Measurements m;
            m.block_count = g.u8();
            m.blocks.resize(g.below(6));
            for (auto& b : m.blocks)
                b = w::MeasurementBlock{g.u8(), g.u8(), g.bytes(128), g.bytes(48)};
            m.nonce = g.nonce();
            if (g.coin())
                m.signature = g.bytes(96);
            return m;
        }
        case 14: return w::KeyExchange{g.u8(), g.slot(), g.u16(), g.nonce(), g.bytes(96)};
        case 15:
        {
            w::KeyExchangeRsp m;
            m.mutual_auth = static_cast<w::MutualAuthMode>(g.below(3));
            m.rsp_session_id = g.u16();
            m.responder_random = g.nonce();
            m.dhe_public = g.bytes(96);
            m.measurement_summary_digest = g.bytes(48);
            m.signature = g.bytes(96);
            m.verify_data = g.bytes(48);
            return m;
        }
        case 16:
        {
            w::Finish m;
            m.req_slot = g.slot();
            if (g.coin())
                m.requester_signature = g.bytes(384);
            m.verify_data = g.bytes(48);
            return m;
        }
        case 17: return w::FinishRsp{g.bytes(48)};
        case 18: return w::PskExchange{g.u8(), g.u16(), g.bytes(16), g.bytes(32)};
        case 19: return w::PskExchangeRsp{g.u16(), g.bytes(48), g.bytes(32), g.bytes(48)};
        case 20: return w::PskFinish{g.bytes(48)};
        case 21: return w::PskFinishRsp{};
        case 22: return w::Heartbeat{};
        case 23: return w::HeartbeatAck{};
        case 24: return w::KeyUpdate{static_cast<w::KeyUpdateOp>(g.below(3) + 1), g.u8()};
        case 25: return w::KeyUpdateAck{static_cast<w::KeyUpdateOp>(g.below(3) + 1), g.u8()};
        case 26: return w::EndSession{};
        case 27: return w::EndSessionAck{};
        case 28: return w::GetEncapsulatedRequest{};
        case 29: return w::EncapsulatedRequest{g.u8(), w::Boxed(nested(rng, depth))};
        case 30: return w::DeliverEncapsulatedResponse{g.u8(), w::Boxed(nested(rng, depth))};
        case 31:
        {
            w::EncapsulatedResponseAck m;
            m.request_id = g.u8();
            if (g.coin())
                m.inner = w::Boxed(nested(rng, depth));
            return m;
        }
        case 32:
            return w::ErrorMsg{kErrorCodes[g.below(std::size(kErrorCodes))], g.u8(), g.bytes(32)};
        case 33: return w::AppData{g.bytes(256)};
    }
    return w::GetVersion{};
}

} // namespace

wire::Message random_message(std::mt19937_64& rng, std::size_t variant, int max_depth)
{
    Gen g(rng);
    const auto version = g.coin() ? w::kVersion10 : w::kVersion11;
    return w::Message{version, random_body(rng, variant % kVariantCount, max_depth - 1)};
}

} // namespace spdmsim::testing
