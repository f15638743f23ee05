// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/errors.hpp>
#include <spdmsim/session.hpp>

#include <limits>

namespace spdmsim::session
{

namespace
{

constexpr std::string_view kLabelPrefix = "spdmsim1.1 ";

std::size_t slot(Checkpoint cp)
{
    return static_cast<std::size_t>(cp);
}

TrafficKeys derive_traffic_keys(const crypto::CryptoProvider& provider,
                                HashAlgo hash, ByteView secret)
{
    TrafficKeys keys;
    keys.key = provider.hkdf_expand(hash, secret,
                                    hkdf_label(kAeadKeySize, "key", {}),
                                    kAeadKeySize);
    keys.iv = provider.hkdf_expand(hash, secret,
                                   hkdf_label(kAeadNonceSize, "iv", {}),
                                   kAeadNonceSize);
    return keys;
}

} // namespace

const char* checkpoint_name(Checkpoint cp) noexcept
{
    switch (cp)
    {
        case Checkpoint::Vca: return "VCA";
        case Checkpoint::Th1: return "TH1";
        case Checkpoint::Finish: return "FINISH";
        case Checkpoint::Th2: return "TH2";
    }
    return "?";
}

void TranscriptLog::append(ByteView encoded)
{
    spdmsim::append(data_, encoded);
}

void TranscriptLog::append(const wire::Message& msg)
{
    auto encoded = wire::encode_message(msg);
    spdmsim::append(data_, encoded);
}

void TranscriptLog::mark(Checkpoint cp)
{
    mark_at(cp, data_.size());
}

void TranscriptLog::mark_at(Checkpoint cp, std::size_t position)
{
    if (position > data_.size())
        fail(Errc::InvalidArgument, "checkpoint beyond end of transcript");
    for (std::size_t i = 0; i < kCheckpoints; ++i)
    {
        if (!marks_[i])
            continue;
        if ((i < slot(cp) && *marks_[i] > position) ||
            (i > slot(cp) && *marks_[i] < position))
            fail(Errc::InvalidArgument, "checkpoints must be monotone");
    }
    marks_[slot(cp)] = position;
}

bool TranscriptLog::has(Checkpoint cp) const noexcept
{
    return marks_[slot(cp)].has_value();
}

std::size_t TranscriptLog::position(Checkpoint cp) const
{
    if (!has(cp))
        fail(Errc::UnknownCheckpoint,
             std::string("checkpoint ") + checkpoint_name(cp) + " not recorded");
    return *marks_[slot(cp)];
}

ByteView TranscriptLog::prefix(Checkpoint cp) const
{
    return ByteView(data_).first(position(cp));
}

TranscriptLog TranscriptLog::fork(Checkpoint cp) const
{
    TranscriptLog out;
    std::size_t pos = position(cp);
    out.data_.assign(data_.begin(), data_.begin() + static_cast<long>(pos));
    for (std::size_t i = 0; i <= slot(cp); ++i)
        out.marks_[i] = marks_[i];
    return out;
}

void TranscriptLog::clear() noexcept
{
    data_.clear();
    marks_ = {};
}

Bytes transcript_hash(const crypto::CryptoProvider& provider, HashAlgo hash,
                      const TranscriptLog& log, Checkpoint cp)
{
    return provider.hash(hash, log.prefix(cp));
}

void SessionSecrets::wipe() noexcept
{
    secure_wipe(handshake_secret);
    secure_wipe(master_secret);
    for (std::size_t d = 0; d < 2; ++d)
    {
        secure_wipe(handshake_traffic_secret[d]);
        secure_wipe(handshake_keys[d].key);
        secure_wipe(handshake_keys[d].iv);
        secure_wipe(finished_key[d]);
        secure_wipe(data_traffic_secret[d]);
        secure_wipe(data_keys[d].key);
        secure_wipe(data_keys[d].iv);
    }
}

Bytes hkdf_label(std::size_t length, std::string_view label, ByteView context)
{
    Bytes info;
    info.reserve(2 + kLabelPrefix.size() + label.size() + context.size());
    info.push_back(static_cast<std::uint8_t>(length & 0xFF));
    info.push_back(static_cast<std::uint8_t>((length >> 8) & 0xFF));
    append(info, as_view(kLabelPrefix));
    append(info, as_view(label));
    append(info, context);
    return info;
}

SessionSecrets derive_handshake_secrets(const crypto::CryptoProvider& provider,
                                        ByteView input_secret, ByteView th1,
                                        const CryptoSuite& suite)
{
    if (input_secret.empty())
        fail(Errc::InvalidArgument, "input secret must not be empty");
    const HashAlgo h = suite.hash;
    const std::size_t hlen = digest_size(h);
    if (hlen == 0)
        fail(Errc::InvalidArgument, "suite hash not implemented");

    SessionSecrets s;
    s.hash = h;
    s.aead = suite.aead;
    s.handshake_secret = provider.hkdf_extract(h, Bytes(hlen, 0), input_secret);

    const std::array<std::string_view, 2> labels = {"req hs data", "rsp hs data"};
    for (std::size_t d = 0; d < 2; ++d)
    {
        s.handshake_traffic_secret[d] = provider.hkdf_expand(
            h, s.handshake_secret, hkdf_label(hlen, labels[d], th1), hlen);
        s.handshake_keys[d] =
            derive_traffic_keys(provider, h, s.handshake_traffic_secret[d]);
        s.finished_key[d] = provider.hkdf_expand(
            h, s.handshake_traffic_secret[d], hkdf_label(hlen, "finished", {}),
            hlen);
    }
    return s;
}

void derive_data_secrets(const crypto::CryptoProvider& provider,
                         SessionSecrets& s, ByteView th2)
{
    if (!s.has_handshake())
        fail(Errc::MissingHandshakeSecret, "handshake secret not derived");
    const HashAlgo h = s.hash;
    const std::size_t hlen = digest_size(h);

    Bytes salt = provider.hkdf_expand(h, s.handshake_secret,
                                      hkdf_label(hlen, "derived", {}), hlen);
    s.master_secret = provider.hkdf_extract(h, salt, Bytes(hlen, 0));

    const std::array<std::string_view, 2> labels = {"req app data",
                                                    "rsp app data"};
    for (std::size_t d = 0; d < 2; ++d)
    {
        s.data_traffic_secret[d] = provider.hkdf_expand(
            h, s.master_secret, hkdf_label(hlen, labels[d], th2), hlen);
        s.data_keys[d] = derive_traffic_keys(provider, h, s.data_traffic_secret[d]);
        s.update_generation[d] = 0;
    }
}

Bytes compute_verify_data(const crypto::CryptoProvider& provider,
                          const SessionSecrets& secrets, Direction direction,
                          const TranscriptLog& log, Checkpoint cp)
{
    const Bytes& fk = secrets.finished_key[index(direction)];
    if (fk.empty())
        fail(Errc::MissingHandshakeSecret, "finished key not derived");
    auto th = transcript_hash(provider, secrets.hash, log, cp);
    return provider.hmac(secrets.hash, fk, th);
}

const char* phase_name(Phase p) noexcept
{
    switch (p)
    {
        case Phase::Handshaking: return "Handshaking";
        case Phase::Established: return "Established";
        case Phase::Terminated: return "Terminated";
    }
    return "?";
}

void SessionState::activate()
{
    if (phase != Phase::Handshaking)
        fail(Errc::InvalidPhase, "session is not handshaking");
    if (!secrets.has_data())
        fail(Errc::MissingHandshakeSecret, "data secrets not derived");
    phase = Phase::Established;
    seq_out = {0, 0};
    seq_in_expected = {0, 0};
}

void SessionState::terminate() noexcept
{
    phase = Phase::Terminated;
    secrets.wipe();
}

void update_keys(const crypto::CryptoProvider& provider, SessionState& state,
                 wire::KeyUpdateOp op, Direction direction)
{
    if (state.phase != Phase::Established)
        fail(Errc::InvalidPhase, "key update requires an established session");
    if (op == wire::KeyUpdateOp::VerifyNewKey)
        fail(Errc::InvalidArgument, "VerifyNewKey does not change keys");

    auto update_one = [&](Direction d) {
        auto& keys = state.secrets.data_keys[index(d)];
        Bytes next = provider.hkdf_expand(
            state.secrets.hash, keys.key,
            hkdf_label(kAeadKeySize, "traffic upd", {}), kAeadKeySize);
        secure_wipe(keys.key);
        keys.key = std::move(next);
        ++state.secrets.update_generation[index(d)];
    };
    if (op == wire::KeyUpdateOp::UpdateAllKeys)
    {
        update_one(Direction::RequesterToResponder);
        update_one(Direction::ResponderToRequester);
    }
    else
    {
        update_one(direction);
    }
}

Bytes record_nonce(ByteView iv, std::uint64_t seq_num)
{
    if (iv.size() != kAeadNonceSize)
        fail(Errc::InvalidArgument, "IV has wrong length");
    Bytes nonce(iv.begin(), iv.end());
    for (std::size_t i = 0; i < 8; ++i)
        nonce[i] ^= static_cast<std::uint8_t>(seq_num >> (8 * i));
    return nonce;
}

const TrafficKeys& active_keys(const SessionState& state, Direction direction)
{
    switch (state.phase)
    {
        case Phase::Handshaking:
            if (!state.secrets.has_handshake())
                fail(Errc::MissingHandshakeSecret, "handshake keys not derived");
            return state.secrets.handshake_keys[index(direction)];
        case Phase::Established:
            return state.secrets.data_keys[index(direction)];
        case Phase::Terminated: break;
    }
    fail(Errc::InvalidPhase, "session terminated");
}

wire::SecuredRecord seal_record(const crypto::CryptoProvider& provider,
                                SessionState& state, Direction direction,
                                ByteView plaintext)
{
    const TrafficKeys& keys = active_keys(state, direction);
    auto& seq = state.seq_out[index(direction)];
    if (seq == std::numeric_limits<std::uint64_t>::max())
        fail(Errc::SequenceExhausted, "sequence number would wrap");
    if (plaintext.size() + kAeadTagSize > std::numeric_limits<std::uint32_t>::max())
        fail(Errc::EncodingOverflow, "record plaintext too large");

    wire::SecuredRecord rec;
    rec.session_id = state.session_id;
    rec.seq_num = seq;
    auto aad = wire::record_header(
        rec.session_id, rec.seq_num,
        static_cast<std::uint32_t>(plaintext.size() + kAeadTagSize));
    rec.ciphertext_and_tag =
        provider.aead_seal(state.suite.aead, keys.key,
                           record_nonce(keys.iv, rec.seq_num), aad, plaintext);
    ++seq;
    return rec;
}

Bytes open_record(const crypto::CryptoProvider& provider, SessionState& state,
                  Direction direction, const wire::SecuredRecord& rec)
{
    const TrafficKeys& keys = active_keys(state, direction);
    if (rec.ciphertext_and_tag.size() < kAeadTagSize ||
        rec.ciphertext_and_tag.size() > std::numeric_limits<std::uint32_t>::max())
        fail(Errc::DecryptError, "record too short");
    auto aad = wire::record_header(
        rec.session_id, rec.seq_num,
        static_cast<std::uint32_t>(rec.ciphertext_and_tag.size()));
    Bytes plain =
        provider.aead_open(state.suite.aead, keys.key,
                           record_nonce(keys.iv, rec.seq_num), aad,
                           rec.ciphertext_and_tag);
    if (rec.session_id != state.session_id)
        fail(Errc::DecryptError, "record belongs to another session");
    auto& expected = state.seq_in_expected[index(direction)];
    if (rec.seq_num < expected)
        fail(Errc::ReplayDetected, "sequence number " + std::to_string(rec.seq_num) +
                                       " already accepted");
    if (rec.seq_num > expected)
        fail(Errc::SequenceGap, "expected sequence number " +
                                    std::to_string(expected) + ", got " +
                                    std::to_string(rec.seq_num));
    ++expected;
    return plain;
}

} // namespace spdmsim::session
