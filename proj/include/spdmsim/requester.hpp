// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <spdmsim/crypto.hpp>
#include <spdmsim/protocol.hpp>
#include <spdmsim/session.hpp>
#include <spdmsim/transport.hpp>
#include <spdmsim/wire.hpp>

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

namespace spdmsim
{

enum class MeasurementMode : std::uint8_t
{
    AllAtOnce,
    // Count query, then one request per index; only the last is signed.
    OneByOne,
};

enum class SessionMode : std::uint8_t
{
    CertDhe,
    Psk,
};

struct RequesterConfig
{
    std::vector<std::uint8_t> supported_versions = {wire::kVersion10,
                                                    wire::kVersion11};
    std::uint32_t capability_flags = wire::cap::All;
    std::uint8_t ct_exponent = 12;
    AlgorithmMenu algorithm_menu = default_menu();
    std::vector<Bytes> trusted_responder_roots;
    // Own identity for mutual authentication. Without it the MutAuth
    // capability is not advertised.
    std::optional<crypto::Credential> credential;
    std::map<Bytes, Bytes> psk_table;
    MeasurementMode measurement_mode = MeasurementMode::AllAtOnce;
    std::size_t cert_chunk_size = protocol::kDefaultCertChunk;
    transport::Millis timeout = transport::Millis(10'000);
    // Extra attempts after ERROR(Busy) on plain requests.
    unsigned busy_retries = 3;
    std::uint8_t measurement_summary_selector = wire::kSummaryNone;
    // Skip GET_CERTIFICATE when a chain with the advertised digest is cached.
    bool use_cache = true;
};

struct DigestResult
{
    std::uint8_t slot_mask = 0;
    std::vector<Bytes> digests;
    // Slots whose digest matches a cached chain.
    std::uint8_t cached_mask = 0;
};

struct MeasurementResult
{
    // Count reported by the responder (total blocks held).
    std::size_t count = 0;
    std::vector<wire::MeasurementBlock> blocks;
    bool signature_verified = false;
};

/// Client side of the protocol, bound to one channel. Single-owner; every
/// operation blocks until the exchange completes or fails with spdmsim::Error.
class Requester
{
  public:
    // Attempt number (1-based) and request code, called before each retry.
    using BackoffHook = std::function<void(unsigned, wire::Code)>;
    // Request code and round-trip time of each completed plain exchange.
    using ExchangeHook = std::function<void(wire::Code, std::chrono::nanoseconds)>;

    Requester(RequesterConfig config, std::shared_ptr<crypto::CryptoProvider> provider,
              std::shared_ptr<transport::Channel> channel);
    ~Requester();
    Requester(const Requester&) = delete;
    Requester& operator=(const Requester&) = delete;

    CryptoSuite init_connection();
    DigestResult fetch_digests();
    crypto::CertificateChain fetch_certificate(std::uint8_t slot = 0);
    crypto::PublicKey challenge_authenticate(std::uint8_t slot = 0);
    MeasurementResult fetch_measurements(std::optional<MeasurementMode> mode = {},
                                         std::uint8_t slot = 0);
    // Single block by index (1-based); unsigned unless `sign`.
    MeasurementResult fetch_measurement_block(std::uint8_t index, bool sign = false,
                                              std::uint8_t slot = 0);
    std::uint32_t establish_session(SessionMode mode = SessionMode::CertDhe,
                                    const Bytes& psk_hint = {});
    // Serves the responder's encapsulated requests until it has none left.
    // Plain when `session_id` is unset, otherwise inside that session.
    void process_encapsulated_requests(std::optional<std::uint32_t> session_id = {});
    void heartbeat(std::uint32_t session_id);
    void request_key_update(std::uint32_t session_id, wire::KeyUpdateOp op);
    void end_session(std::uint32_t session_id);
    Bytes send_app_request(std::uint32_t session_id, ByteView payload);
    // Unprotected baseline path (RawApp frame).
    Bytes send_plain_app_request(ByteView payload);

    // Adds a chain to the digest-keyed cache (e.g. after loading from disk).
    void cache_chain(const crypto::CertificateChain& chain);
    // Back to Reset; sessions are kept.
    void reset();
    void set_backoff_hook(BackoffHook hook);
    void set_exchange_hook(ExchangeHook hook);

    protocol::ConnectionPhase phase() const noexcept;
    const CryptoSuite& suite() const noexcept;
    std::uint8_t version() const noexcept;
    std::uint32_t negotiated_capabilities() const noexcept;
    const session::TranscriptLog& connection_transcript() const noexcept;
    std::optional<session::TranscriptLog>
        session_transcript(std::uint32_t session_id) const;
    const session::SessionState* session_state(std::uint32_t session_id) const;
    std::vector<std::uint32_t> session_ids() const;
    const crypto::PublicKey& responder_key() const noexcept;
    // Plain and in-session message codes sent and received, in order.
    const std::vector<wire::Code>& code_trace() const noexcept;
    void clear_code_trace() noexcept;
    transport::Channel& channel() noexcept;

#ifdef SPDMSIM_TEST_HOOKS
    std::optional<session::SessionSecrets>
        export_session_secrets(std::uint32_t session_id) const;
#endif

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace spdmsim
