// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <spdmsim/algorithms.hpp>
#include <spdmsim/bytes.hpp>
#include <spdmsim/crypto.hpp>
#include <spdmsim/wire.hpp>

#include <array>
#include <cstdint>
#include <optional>

namespace spdmsim::session
{

enum class Checkpoint
{
    Vca,
    Th1,
    Finish,
    Th2,
};

const char* checkpoint_name(Checkpoint cp) noexcept;

/// Append-only log of encoded messages with named checkpoints.
class TranscriptLog
{
  public:
    void append(ByteView encoded);
    void append(const wire::Message& msg);

    // Records the current log size under `cp`. Checkpoints must be monotone
    // in log position.
    void mark(Checkpoint cp);
    void mark_at(Checkpoint cp, std::size_t position);

    bool has(Checkpoint cp) const noexcept;
    std::size_t position(Checkpoint cp) const;
    ByteView prefix(Checkpoint cp) const;
    ByteView bytes() const noexcept
    {
        return data_;
    }
    std::size_t size() const noexcept
    {
        return data_.size();
    }
    // Copy of the log truncated to the checkpoint, with later checkpoints
    // dropped. Used to branch per-session logs off the shared VCA prefix.
    TranscriptLog fork(Checkpoint cp) const;
    void clear() noexcept;

    friend bool operator==(const TranscriptLog&, const TranscriptLog&) = default;

  private:
    static constexpr std::size_t kCheckpoints = 4;
    Bytes data_;
    std::array<std::optional<std::size_t>, kCheckpoints> marks_{};
};

// UnknownCheckpoint when `cp` has not been recorded.
Bytes transcript_hash(const crypto::CryptoProvider& provider, HashAlgo hash,
                      const TranscriptLog& log, Checkpoint cp);

enum class Direction : std::uint8_t
{
    RequesterToResponder = 0,
    ResponderToRequester = 1,
};

inline constexpr std::size_t index(Direction d) noexcept
{
    return static_cast<std::size_t>(d);
}

inline constexpr Direction opposite(Direction d) noexcept
{
    return d == Direction::RequesterToResponder
               ? Direction::ResponderToRequester
               : Direction::RequesterToResponder;
}

struct TrafficKeys
{
    Bytes key;
    Bytes iv;
    friend bool operator==(const TrafficKeys&, const TrafficKeys&) = default;
};

struct SessionSecrets
{
    HashAlgo hash = HashAlgo::None;
    AeadAlgo aead = AeadAlgo::None;

    Bytes handshake_secret;
    std::array<Bytes, 2> handshake_traffic_secret;
    std::array<TrafficKeys, 2> handshake_keys;
    std::array<Bytes, 2> finished_key;

    Bytes master_secret;
    std::array<Bytes, 2> data_traffic_secret;
    std::array<TrafficKeys, 2> data_keys;
    std::array<std::uint32_t, 2> update_generation{0, 0};

    bool has_handshake() const noexcept
    {
        return !handshake_secret.empty();
    }
    bool has_data() const noexcept
    {
        return !master_secret.empty();
    }
    void wipe() noexcept;

    friend bool operator==(const SessionSecrets&,
                           const SessionSecrets&) = default;
};

// HKDF info encoding: u16 output length (LE) || "spdmsim1.1 " || label ||
// context.
Bytes hkdf_label(std::size_t length, std::string_view label, ByteView context);

SessionSecrets derive_handshake_secrets(const crypto::CryptoProvider& provider,
                                        ByteView input_secret, ByteView th1,
                                        const CryptoSuite& suite);

// MissingHandshakeSecret when the handshake portion is absent.
void derive_data_secrets(const crypto::CryptoProvider& provider,
                         SessionSecrets& secrets, ByteView th2);

Bytes compute_verify_data(const crypto::CryptoProvider& provider,
                          const SessionSecrets& secrets, Direction direction,
                          const TranscriptLog& log, Checkpoint cp);

enum class Phase : std::uint8_t
{
    Handshaking,
    Established,
    Terminated,
};

const char* phase_name(Phase p) noexcept;

struct SessionState
{
    std::uint32_t session_id = 0;
    Phase phase = Phase::Handshaking;
    CryptoSuite suite;
    std::array<std::uint64_t, 2> seq_out{0, 0};
    std::array<std::uint64_t, 2> seq_in_expected{0, 0};
    SessionSecrets secrets;

    // Switches from handshake to data keys and restarts both sequence
    // spaces; requires data secrets.
    void activate();
    // Erases every key; idempotent.
    void terminate() noexcept;
};

// Applies one key update to `direction`, or to both directions for
// UpdateAllKeys. New key = HKDF-Expand(old key, "traffic upd"); the IV and
// sequence counters carry over. InvalidPhase unless Established.
void update_keys(const crypto::CryptoProvider& provider, SessionState& state,
                 wire::KeyUpdateOp op, Direction direction);

// Static IV XOR the sequence number (8 bytes LE into the low IV bytes).
Bytes record_nonce(ByteView iv, std::uint64_t seq_num);

// Keys currently protecting `direction` (handshake keys while Handshaking).
const TrafficKeys& active_keys(const SessionState& state, Direction direction);

wire::SecuredRecord seal_record(const crypto::CryptoProvider& provider,
                                SessionState& state, Direction direction,
                                ByteView plaintext);

// The record is authenticated before its sequence number is judged, so a
// forged record never advances or reveals the expected counter.
Bytes open_record(const crypto::CryptoProvider& provider, SessionState& state,
                  Direction direction, const wire::SecuredRecord& rec);

} // namespace spdmsim::session
