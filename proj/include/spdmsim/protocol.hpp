// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <spdmsim/crypto.hpp>
#include <spdmsim/errors.hpp>
#include <spdmsim/wire.hpp>

#include <cstdint>
#include <string_view>
#include <vector>

/// Pieces shared by the requester and responder state machines: phases,
/// transcript encodings, signing inputs and the default fixtures.
namespace spdmsim::protocol
{

enum class ConnectionPhase : std::uint8_t
{
    Reset,
    VersionAgreed,
    CapsKnown,
    AlgsAgreed,
    Authenticated,
};

const char* phase_name(ConnectionPhase p) noexcept;

// GET_VERSION is always sent with this version byte; everything after it
// uses the negotiated version.
inline constexpr std::uint8_t kVersionDiscovery = wire::kVersion10;

inline constexpr std::size_t kMaxSessions = 4;
inline constexpr std::size_t kDefaultCertChunk = 1024;
inline constexpr std::size_t kMeasurementFixtureCount = 5;
inline constexpr std::size_t kMeasurementFixtureSize = 128;
inline constexpr std::size_t kDefaultChainBytes = 4096;

// Signature contexts.
inline constexpr std::string_view kChallengeAuthContext = "challenge_auth signing";
inline constexpr std::string_view kMeasurementsContext = "measurements signing";
inline constexpr std::string_view kKeyExchangeContext = "key_exchange_rsp signing";
inline constexpr std::string_view kFinishContext = "finish signing";

// "spdmsim1.1 " || context || transcript hash.
Bytes signing_input(std::string_view context, ByteView transcript_hash);

// Copy of `msg` with signature and verify_data fields emptied (presence
// flags kept); this is the form both endpoints append to transcripts.
wire::Message strip(const wire::Message& msg);
Bytes encode_stripped(const wire::Message& msg);

// Block i (1..5) holds 128 bytes of value i; block types cycle through the
// DMTF-style tags 0..4.
std::vector<wire::MeasurementBlock>
    default_measurements(const crypto::CryptoProvider& provider,
                         HashAlgo hash = HashAlgo::Sha384);

// Same block with digest = hash(payload) under `hash`.
wire::MeasurementBlock with_digest(const wire::MeasurementBlock& block,
                                   const crypto::CryptoProvider& provider,
                                   HashAlgo hash);

// Empty for kSummaryNone, otherwise hash over the concatenated block digests.
Bytes measurement_summary(const crypto::CryptoProvider& provider, HashAlgo hash,
                          const std::vector<wire::MeasurementBlock>& blocks,
                          std::uint8_t selector);

Errc errc_from_wire(wire::ErrorCode code) noexcept;

inline constexpr std::uint32_t make_session_id(std::uint16_t req,
                                               std::uint16_t rsp) noexcept
{
    return (std::uint32_t(req) << 16) | rsp;
}

} // namespace spdmsim::protocol
