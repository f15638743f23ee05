// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <spdmsim/crypto.hpp>
#include <spdmsim/protocol.hpp>
#include <spdmsim/session.hpp>
#include <spdmsim/wire.hpp>

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

namespace spdmsim
{

struct ResponderConfig
{
    std::vector<std::uint8_t> supported_versions = {wire::kVersion10,
                                                    wire::kVersion11};
    std::uint32_t capability_flags = wire::cap::All;
    std::uint8_t ct_exponent = 12;
    AlgorithmMenu algorithm_menu = default_menu();
    // Ask the requester to prove its identity when both sides support it.
    bool mutual_auth = true;
    // Request it in CHALLENGE_AUTH; otherwise the requester chain is
    // retrieved inside the KEY_EXCHANGE handshake.
    bool challenge_mutual_auth = true;
    std::size_t max_sessions = protocol::kMaxSessions;
    // Upper bound on one CERTIFICATE portion.
    std::size_t max_cert_chunk = 32 * 1024;
    // Chunk size the responder uses when it retrieves the requester chain.
    std::size_t encap_cert_chunk = protocol::kDefaultCertChunk;
    // Sessions idle longer than this are terminated; unset means never.
    std::optional<std::chrono::milliseconds> session_timeout;
    // Accept RawApp frames (the unprotected baseline path).
    bool allow_plain_app = true;
};

/// Serving side of the protocol. One instance per transport connection,
/// single-owner. handle_frame never throws: every failure is answered with an
/// encoded ERROR response.
class Responder
{
  public:
    // Receives the whole AppData payload (first byte is the opcode) and
    // returns the response payload.
    using AppHandler = std::function<Bytes(ByteView)>;
    // Request code, whether it arrived inside a session, handling time.
    using TimingHook =
        std::function<void(wire::Code, bool, std::chrono::nanoseconds)>;

    Responder(ResponderConfig config,
              std::shared_ptr<crypto::CryptoProvider> provider);
    ~Responder();
    Responder(const Responder&) = delete;
    Responder& operator=(const Responder&) = delete;

    // Provisioning; call before serving begins.
    void provision_slot(std::uint8_t slot, crypto::Credential credential);
    void provision_measurements(std::vector<wire::MeasurementBlock> blocks);
    void provision_psk(Bytes hint, Bytes secret);
    void trust_requester_root(Bytes root_der);
    void register_app_handler(std::uint8_t opcode, AppHandler handler);

    // One transport frame in, one frame out.
    Bytes handle_frame(ByteView frame);
    // One plain protocol message in, one encoded message out.
    Bytes handle_message(ByteView raw);

    // The next `count` plain requests are answered with ERROR(Busy).
    void inject_busy(unsigned count);
    // Delivered on the requester's next in-session GET_ENCAPSULATED_REQUEST.
    void queue_key_update(std::uint32_t session_id, wire::KeyUpdateOp op);
    void set_timing_hook(TimingHook hook);

    protocol::ConnectionPhase phase() const noexcept;
    const CryptoSuite& suite() const noexcept;
    std::uint8_t version() const noexcept;
    const session::TranscriptLog& connection_transcript() const noexcept;
    std::optional<session::TranscriptLog>
        session_transcript(std::uint32_t session_id) const;
    std::optional<session::Phase> session_phase(std::uint32_t session_id) const;
    std::size_t active_sessions() const noexcept;
    std::vector<std::uint32_t> session_ids() const;
    // Set once the requester chain has been retrieved and, for the
    // challenge flow, its signature verified.
    bool requester_authenticated() const noexcept;
    const crypto::PublicKey& requester_key() const noexcept;
    std::uint64_t decrypt_failures() const noexcept;

#ifdef SPDMSIM_TEST_HOOKS
    std::optional<session::SessionSecrets>
        export_session_secrets(std::uint32_t session_id) const;
#endif

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace spdmsim
