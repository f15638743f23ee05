// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/protocol.hpp>

namespace spdmsim::protocol
{

const char* phase_name(ConnectionPhase p) noexcept
{
    switch (p)
    {
        case ConnectionPhase::Reset: return "Reset";
        case ConnectionPhase::VersionAgreed: return "VersionAgreed";
        case ConnectionPhase::CapsKnown: return "CapsKnown";
        case ConnectionPhase::AlgsAgreed: return "AlgsAgreed";
        case ConnectionPhase::Authenticated: return "Authenticated";
    }
    return "?";
}

Bytes signing_input(std::string_view context, ByteView transcript_hash)
{
    Bytes out = to_bytes("spdmsim1.1 ");
    append(out, as_view(context));
    append(out, transcript_hash);
    return out;
}

wire::Message strip(const wire::Message& msg)
{
    wire::Message out = msg;
    std::visit(
        [](auto& body) {
            using T = std::decay_t<decltype(body)>;
            if constexpr (std::is_same_v<T, wire::ChallengeAuth>)
            {
                body.signature.clear();
            }
            else if constexpr (std::is_same_v<T, wire::Measurements>)
            {
                if (body.signature)
                    body.signature->clear();
            }
            else if constexpr (std::is_same_v<T, wire::KeyExchangeRsp>)
            {
                body.signature.clear();
                body.verify_data.clear();
            }
            else if constexpr (std::is_same_v<T, wire::Finish>)
            {
                if (body.requester_signature)
                    body.requester_signature->clear();
                body.verify_data.clear();
            }
            else if constexpr (std::is_same_v<T, wire::FinishRsp> ||
                               std::is_same_v<T, wire::PskExchangeRsp> ||
                               std::is_same_v<T, wire::PskFinish>)
            {
                body.verify_data.clear();
            }
        },
        out.body);
    return out;
}

Bytes encode_stripped(const wire::Message& msg)
{
    return wire::encode_message(strip(msg));
}

wire::MeasurementBlock with_digest(const wire::MeasurementBlock& block,
                                   const crypto::CryptoProvider& provider,
                                   HashAlgo hash)
{
    wire::MeasurementBlock out = block;
    out.digest = provider.hash(hash, block.payload);
    return out;
}

std::vector<wire::MeasurementBlock>
    default_measurements(const crypto::CryptoProvider& provider, HashAlgo hash)
{
    std::vector<wire::MeasurementBlock> blocks;
    for (std::size_t i = 1; i <= kMeasurementFixtureCount; ++i)
    {
        wire::MeasurementBlock b;
        b.index = static_cast<std::uint8_t>(i);
        b.block_type = static_cast<std::uint8_t>((i - 1) % 5);
        b.payload.assign(kMeasurementFixtureSize, static_cast<std::uint8_t>(i));
        blocks.push_back(with_digest(b, provider, hash));
    }
    return blocks;
}

Bytes measurement_summary(const crypto::CryptoProvider& provider, HashAlgo hash,
                          const std::vector<wire::MeasurementBlock>& blocks,
                          std::uint8_t selector)
{
    if (selector == wire::kSummaryNone)
        return {};
    Bytes all;
    for (const auto& b : blocks)
        append(all, provider.hash(hash, b.payload));
    return provider.hash(hash, all);
}

Errc errc_from_wire(wire::ErrorCode code) noexcept
{
    switch (code)
    {
        case wire::ErrorCode::InvalidRequest: return Errc::InvalidRequest;
        case wire::ErrorCode::Busy: return Errc::Busy;
        case wire::ErrorCode::UnexpectedRequest: return Errc::UnexpectedRequest;
        case wire::ErrorCode::DecryptError: return Errc::DecryptError;
        case wire::ErrorCode::UnsupportedRequest: return Errc::UnsupportedRequest;
        case wire::ErrorCode::VersionMismatch: return Errc::VersionMismatch;
        case wire::ErrorCode::MalformedMessage: return Errc::MalformedMessage;
    }
    return Errc::Internal;
}

} // namespace spdmsim::protocol
