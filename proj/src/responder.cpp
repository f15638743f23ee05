// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/errors.hpp>
#include <spdmsim/responder.hpp>

#include <algorithm>
#include <array>
#include <deque>

namespace spdmsim
{

namespace w = wire;
using protocol::ConnectionPhase;
using session::Checkpoint;
using session::Direction;

namespace
{

// Handler-level failure that becomes an ERROR response.
struct Reject
{
    w::ErrorCode code;
    std::string detail;
    // Terminate the session after the error has been sealed.
    bool terminate = false;
};

[[noreturn]] void reject(w::ErrorCode code, std::string detail,
                         bool terminate = false)
{
    throw Reject{code, std::move(detail), terminate};
}

struct Reply
{
    w::Message msg;
    std::function<void()> after_seal;
};

bool is_request_code(w::Code c)
{
    return (static_cast<std::uint8_t>(c) & 0x80) != 0;
}

w::Nonce random_nonce(crypto::CryptoProvider& p)
{
    w::Nonce n{};
    auto b = p.random_bytes(n.size());
    std::copy(b.begin(), b.end(), n.begin());
    return n;
}

struct EncapFlow
{
    enum class Purpose
    {
        ChallengeMutualAuth,
        HandshakeCert,
        KeyUpdate,
    };

    Purpose purpose = Purpose::ChallengeMutualAuth;
    std::uint8_t request_id = 0;
    bool started = false;
    w::Message outstanding;
    session::TranscriptLog log;
    Bytes chain_image;
    Bytes expected_digest;
    w::Nonce nonce{};
    w::KeyUpdateOp op = w::KeyUpdateOp::UpdateKey;
    std::uint8_t tag = 0;
};

struct SessionEntry
{
    session::SessionState state;
    session::TranscriptLog log;
    bool psk = false;
    std::uint8_t slot = 0;
    w::MutualAuthMode mutual = w::MutualAuthMode::None;
    bool handshake_cert_done = false;
    std::chrono::steady_clock::time_point last_activity;
    std::deque<w::KeyUpdateOp> pending_updates;
    std::optional<EncapFlow> encap;
    std::uint8_t next_tag = 1;
};

} // namespace

struct Responder::Impl
{
    Impl(ResponderConfig c, std::shared_ptr<crypto::CryptoProvider> p) :
        cfg(std::move(c)), provider(std::move(p))
    {
        if (!provider)
            fail(Errc::InvalidArgument, "responder needs a crypto provider");
        if (cfg.supported_versions.empty())
            fail(Errc::InvalidArgument, "responder needs at least one version");
        if (cfg.algorithm_menu.empty())
            fail(Errc::InvalidArgument, "responder algorithm menu is empty");
    }

    ResponderConfig cfg;
    std::shared_ptr<crypto::CryptoProvider> provider;
    std::array<std::optional<crypto::Credential>, w::kMaxSlots> slots;
    std::vector<w::MeasurementBlock> measurements;
    std::map<Bytes, Bytes> psk;
    std::vector<Bytes> trusted_roots;
    std::map<std::uint8_t, AppHandler> apps;
    TimingHook timing;

    ConnectionPhase phase = ConnectionPhase::Reset;
    std::uint8_t version = protocol::kVersionDiscovery;
    std::uint32_t caps = 0;
    CryptoSuite suite;
    session::TranscriptLog vca;
    session::TranscriptLog auth_log;
    session::TranscriptLog meas_log;
    std::optional<EncapFlow> encap;

    crypto::CertificateChain requester_chain;
    crypto::PublicKey requester_key;
    bool requester_verified = false;

    std::map<std::uint32_t, SessionEntry> sessions;
    std::uint16_t next_rsp_id = 1;
    unsigned busy = 0;
    std::uint64_t decrypt_failures = 0;

    // -- helpers ----------------------------------------------------------

    w::Message error(w::ErrorCode code, std::string_view detail) const
    {
        return w::make_error(code, version, detail);
    }

    template <class T>
    w::Message msg(T body) const
    {
        return w::make(std::move(body), version);
    }

    Bytes hash(ByteView data) const
    {
        return provider->hash(suite.hash, data);
    }

    bool has_cap(std::uint32_t bit) const
    {
        return (caps & bit) != 0;
    }

    const crypto::Credential& credential(std::uint8_t slot) const
    {
        if (slot >= w::kMaxSlots || !slots[slot])
            reject(w::ErrorCode::InvalidRequest,
                   "slot " + std::to_string(slot) + " not provisioned");
        return *slots[slot];
    }

    void require_phase(ConnectionPhase min, const char* what) const
    {
        if (phase < min)
            reject(w::ErrorCode::UnexpectedRequest,
                   std::string(what) + " before " + protocol::phase_name(min));
    }

    bool mutual_applicable() const
    {
        return cfg.mutual_auth && has_cap(w::cap::MutAuth) &&
               has_cap(w::cap::Encap) && !trusted_roots.empty();
    }

    std::size_t live_sessions() const
    {
        return static_cast<std::size_t>(
            std::count_if(sessions.begin(), sessions.end(), [](const auto& kv) {
                return kv.second.state.phase != session::Phase::Terminated;
            }));
    }

    std::uint16_t allocate_rsp_id(std::uint16_t req_id)
    {
        for (int attempt = 0; attempt < 0x10000; ++attempt)
        {
            std::uint16_t id = next_rsp_id++;
            if (id == 0)
                continue;
            if (!sessions.count(protocol::make_session_id(req_id, id)))
                return id;
        }
        reject(w::ErrorCode::Busy, "no free session id");
    }

    void reset_negotiation()
    {
        phase = ConnectionPhase::Reset;
        version = protocol::kVersionDiscovery;
        caps = 0;
        suite = {};
        vca.clear();
        auth_log.clear();
        meas_log.clear();
        encap.reset();
        requester_chain = {};
        requester_key = {};
        requester_verified = false;
    }

    // -- plain requests -----------------------------------------------------

    w::Message on_get_version(const w::Message& req)
    {
        reset_negotiation();
        w::Version v;
        v.versions = cfg.supported_versions;
        auto rsp = w::make(v, req.version);
        vca.append(req);
        vca.append(rsp);
        phase = ConnectionPhase::VersionAgreed;
        return rsp;
    }

    w::Message on_get_capabilities(const w::Message& req)
    {
        if (phase != ConnectionPhase::VersionAgreed)
            reject(w::ErrorCode::UnexpectedRequest,
                   "GET_CAPABILITIES requires VersionAgreed");
        if (std::find(cfg.supported_versions.begin(), cfg.supported_versions.end(),
                      req.version) == cfg.supported_versions.end())
            reject(w::ErrorCode::VersionMismatch, "version not offered");
        version = req.version;
        caps = req.as<w::GetCapabilities>().flags & cfg.capability_flags;
        w::Capabilities c;
        c.ct_exponent = cfg.ct_exponent;
        c.flags = cfg.capability_flags;
        auto rsp = msg(c);
        vca.append(req);
        vca.append(rsp);
        phase = ConnectionPhase::CapsKnown;
        return rsp;
    }

    static std::uint16_t pick(const std::vector<std::uint16_t>& offered,
                              const std::vector<std::uint16_t>& mine,
                              bool (*implemented)(std::uint16_t))
    {
        std::vector<std::uint16_t> usable;
        for (auto id : mine)
            if (implemented(id))
                usable.push_back(id);
        return select_common(offered, usable);
    }

    w::Message on_negotiate_algorithms(const w::Message& req)
    {
        if (phase != ConnectionPhase::CapsKnown)
            reject(w::ErrorCode::UnexpectedRequest,
                   "NEGOTIATE_ALGORITHMS requires CapsKnown");
        const auto& offered = req.as<w::NegotiateAlgorithms>().offered;
        const auto& mine = cfg.algorithm_menu;
        CryptoSuite s;
        s.hash = static_cast<HashAlgo>(pick(offered.hash, mine.hash, [](std::uint16_t id) {
            return is_implemented(static_cast<HashAlgo>(id));
        }));
        s.responder_sig = static_cast<SigAlgo>(
            pick(offered.responder_sig, mine.responder_sig, [](std::uint16_t id) {
                return is_implemented(static_cast<SigAlgo>(id));
            }));
        s.requester_sig = static_cast<SigAlgo>(
            pick(offered.requester_sig, mine.requester_sig, [](std::uint16_t id) {
                return is_implemented(static_cast<SigAlgo>(id));
            }));
        s.dhe_group = static_cast<DheGroup>(pick(offered.dhe, mine.dhe, [](std::uint16_t id) {
            return is_implemented(static_cast<DheGroup>(id));
        }));
        s.aead = static_cast<AeadAlgo>(pick(offered.aead, mine.aead, [](std::uint16_t id) {
            return is_implemented(static_cast<AeadAlgo>(id));
        }));
        s.key_schedule = static_cast<KeySchedule>(
            pick(offered.key_schedule, mine.key_schedule, [](std::uint16_t id) {
                return is_implemented(static_cast<KeySchedule>(id));
            }));
        auto rsp = msg(w::Algorithms{s});
        if (!s.complete())
            return rsp;
        suite = s;
        vca.append(req);
        vca.append(rsp);
        vca.mark(Checkpoint::Vca);
        auth_log = vca.fork(Checkpoint::Vca);
        meas_log = vca.fork(Checkpoint::Vca);
        phase = ConnectionPhase::AlgsAgreed;
        return rsp;
    }

    w::Message on_get_digests(const w::Message& req)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "GET_DIGESTS");
        if (!has_cap(w::cap::Cert))
            reject(w::ErrorCode::UnsupportedRequest, "certificate capability off");
        w::Digests d;
        for (std::size_t s = 0; s < w::kMaxSlots; ++s)
        {
            if (!slots[s])
                continue;
            d.slot_mask = static_cast<std::uint8_t>(d.slot_mask | (1u << s));
            d.digests.push_back(hash(slots[s]->chain.serialize()));
        }
        if (d.slot_mask == 0)
            reject(w::ErrorCode::UnsupportedRequest, "no certificate provisioned");
        auto rsp = msg(d);
        auth_log.append(req);
        auth_log.append(rsp);
        return rsp;
    }

    w::Message on_get_certificate(const w::Message& req)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "GET_CERTIFICATE");
        if (!has_cap(w::cap::Cert))
            reject(w::ErrorCode::UnsupportedRequest, "certificate capability off");
        const auto& g = req.as<w::GetCertificate>();
        Bytes image = credential(g.slot).chain.serialize();
        if (g.offset > image.size() || g.length == 0)
            reject(w::ErrorCode::InvalidRequest, "certificate offset out of range");
        std::size_t len = std::min<std::size_t>(
            {g.length, cfg.max_cert_chunk, image.size() - g.offset});
        w::Certificate c;
        c.slot = g.slot;
        c.portion.assign(image.begin() + g.offset,
                         image.begin() + static_cast<long>(g.offset + len));
        c.remainder_length = static_cast<std::uint32_t>(image.size() - g.offset - len);
        auto rsp = msg(c);
        auth_log.append(req);
        auth_log.append(rsp);
        return rsp;
    }

    w::Message on_challenge(const w::Message& req)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "CHALLENGE");
        if (!has_cap(w::cap::Chal))
            reject(w::ErrorCode::UnsupportedRequest, "challenge capability off");
        const auto& c = req.as<w::Challenge>();
        const auto& cred = credential(c.slot);
        w::ChallengeAuth a;
        a.slot = c.slot;
        a.mutual_auth_requested = mutual_applicable() && cfg.challenge_mutual_auth;
        a.cert_chain_digest = hash(cred.chain.serialize());
        a.nonce = random_nonce(*provider);
        a.measurement_summary_digest = protocol::measurement_summary(
            *provider, suite.hash, measurements, c.measurement_summary_selector);
        auto rsp = msg(a);
        auth_log.append(req);
        auth_log.append(protocol::encode_stripped(rsp));
        auto th = hash(auth_log.bytes());
        a.signature =
            provider->sign(cred.leaf_key,
                           protocol::signing_input(protocol::kChallengeAuthContext, th),
                           suite.responder_sig);
        auth_log = vca.fork(Checkpoint::Vca);
        if (a.mutual_auth_requested)
        {
            EncapFlow f;
            f.purpose = EncapFlow::Purpose::ChallengeMutualAuth;
            encap = std::move(f);
        }
        return msg(a);
    }

    w::Message on_get_measurements(const w::Message& req)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "GET_MEASUREMENTS");
        const auto& g = req.as<w::GetMeasurements>();
        const auto n = measurements.size();
        w::Measurements m;
        m.block_count = static_cast<std::uint8_t>(n);
        if (g.operand == w::kMeasurementAll)
        {
            for (const auto& b : measurements)
                m.blocks.push_back(protocol::with_digest(b, *provider, suite.hash));
        }
        else if (g.operand != w::kMeasurementCount)
        {
            if (g.operand > n)
                reject(w::ErrorCode::InvalidRequest,
                       "measurement index " + std::to_string(g.operand) +
                           " out of range");
            m.blocks.push_back(
                protocol::with_digest(measurements[g.operand - 1], *provider, suite.hash));
            m.block_count = 1;
        }
        m.nonce = random_nonce(*provider);
        const crypto::Credential* cred = nullptr;
        if (g.signature_requested)
        {
            if (!has_cap(w::cap::MeasSig))
                reject(w::ErrorCode::InvalidRequest, "signed measurements not supported");
            cred = &credential(g.slot);
            m.signature = Bytes{};
        }
        meas_log.append(req);
        if (!cred)
        {
            auto rsp = msg(m);
            meas_log.append(rsp);
            return rsp;
        }
        meas_log.append(protocol::encode_stripped(msg(m)));
        auto th = hash(meas_log.bytes());
        m.signature =
            provider->sign(cred->leaf_key,
                           protocol::signing_input(protocol::kMeasurementsContext, th),
                           suite.responder_sig);
        meas_log = vca.fork(Checkpoint::Vca);
        return msg(m);
    }

    void check_session_capacity()
    {
        if (live_sessions() >= cfg.max_sessions)
            reject(w::ErrorCode::Busy,
                   "session limit of " + std::to_string(cfg.max_sessions) + " reached");
    }

    w::Message on_key_exchange(const w::Message& req)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "KEY_EXCHANGE");
        if (!has_cap(w::cap::KeyEx))
            reject(w::ErrorCode::UnsupportedRequest, "key exchange capability off");
        const auto& k = req.as<w::KeyExchange>();
        const auto& cred = credential(k.slot);
        check_session_capacity();

        SessionEntry e;
        std::uint16_t rsp_id = allocate_rsp_id(k.req_session_id);
        e.state.session_id = protocol::make_session_id(k.req_session_id, rsp_id);
        e.state.suite = suite;
        e.slot = k.slot;
        e.log = vca.fork(Checkpoint::Vca);
        e.log.append(hash(cred.chain.serialize()));
        e.log.append(req);

        auto dhe = provider->generate_dhe_keypair(suite.dhe_group);
        Bytes shared;
        try
        {
            shared = provider->dhe_shared_secret(dhe, k.dhe_public);
        }
        catch (const Error& err)
        {
            reject(w::ErrorCode::InvalidRequest, err.what());
        }

        if (mutual_applicable())
            e.mutual = requester_verified ? w::MutualAuthMode::Signature
                                          : w::MutualAuthMode::EncapsulatedCert;
        w::KeyExchangeRsp r;
        r.mutual_auth = e.mutual;
        r.rsp_session_id = rsp_id;
        r.responder_random = random_nonce(*provider);
        r.dhe_public = dhe.public_key;
        r.measurement_summary_digest = protocol::measurement_summary(
            *provider, suite.hash, measurements, k.measurement_summary_selector);
        e.log.append(protocol::encode_stripped(msg(r)));
        e.log.mark(Checkpoint::Th1);
        auto th1 = session::transcript_hash(*provider, suite.hash, e.log, Checkpoint::Th1);
        e.state.secrets = session::derive_handshake_secrets(*provider, shared, th1, suite);
        secure_wipe(shared);
        r.signature =
            provider->sign(cred.leaf_key,
                           protocol::signing_input(protocol::kKeyExchangeContext, th1),
                           suite.responder_sig);
        r.verify_data = session::compute_verify_data(
            *provider, e.state.secrets, Direction::ResponderToRequester, e.log,
            Checkpoint::Th1);
        e.last_activity = std::chrono::steady_clock::now();
        sessions[e.state.session_id] = std::move(e);
        return msg(r);
    }

    w::Message on_psk_exchange(const w::Message& req)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "PSK_EXCHANGE");
        if (!has_cap(w::cap::Psk))
            reject(w::ErrorCode::UnsupportedRequest, "PSK capability off");
        const auto& p = req.as<w::PskExchange>();
        auto it = psk.find(p.psk_hint);
        if (it == psk.end())
            reject(w::ErrorCode::InvalidRequest, "unknown PSK hint");
        check_session_capacity();

        SessionEntry e;
        e.psk = true;
        std::uint16_t rsp_id = allocate_rsp_id(p.req_session_id);
        e.state.session_id = protocol::make_session_id(p.req_session_id, rsp_id);
        e.state.suite = suite;
        e.log = vca.fork(Checkpoint::Vca);
        e.log.append(req);

        w::PskExchangeRsp r;
        r.rsp_session_id = rsp_id;
        r.measurement_summary_digest = protocol::measurement_summary(
            *provider, suite.hash, measurements, p.measurement_summary_selector);
        r.responder_context = provider->random_bytes(w::kNonceSize);
        e.log.append(protocol::encode_stripped(msg(r)));
        e.log.mark(Checkpoint::Th1);
        auto th1 = session::transcript_hash(*provider, suite.hash, e.log, Checkpoint::Th1);
        e.state.secrets = session::derive_handshake_secrets(*provider, it->second, th1, suite);
        r.verify_data = session::compute_verify_data(
            *provider, e.state.secrets, Direction::ResponderToRequester, e.log,
            Checkpoint::Th1);
        e.last_activity = std::chrono::steady_clock::now();
        sessions[e.state.session_id] = std::move(e);
        return msg(r);
    }

    // -- encapsulated flow (responder acting as the asking side) -----------

    w::Message encap_request(EncapFlow& f, w::Message inner)
    {
        f.outstanding = inner;
        f.request_id = static_cast<std::uint8_t>(f.request_id + 1);
        w::EncapsulatedRequest r;
        r.request_id = f.request_id;
        r.inner = w::Boxed(std::move(inner));
        return msg(std::move(r));
    }

    w::Message encap_ack(const EncapFlow& f, std::optional<w::Message> next)
    {
        w::EncapsulatedResponseAck a;
        a.request_id = f.request_id;
        if (next)
            a.inner = w::Boxed(std::move(*next));
        return msg(std::move(a));
    }

    w::Message encap_start(EncapFlow& f)
    {
        f.started = true;
        if (f.purpose == EncapFlow::Purpose::KeyUpdate)
            return encap_request(f, msg(w::KeyUpdate{f.op, f.tag}));
        f.log = vca.fork(Checkpoint::Vca);
        return encap_request(f, msg(w::GetDigests{}));
    }

    w::GetCertificate next_chunk(const EncapFlow& f, std::uint32_t remainder) const
    {
        w::GetCertificate g;
        g.slot = 0;
        g.offset = static_cast<std::uint32_t>(f.chain_image.size());
        g.length = static_cast<std::uint32_t>(
            remainder == 0 ? cfg.encap_cert_chunk
                           : std::min<std::size_t>(cfg.encap_cert_chunk, remainder));
        return g;
    }

    // Returns the ack; `done` is set when the flow has no further request.
    w::Message encap_deliver(EncapFlow& f, const w::Message& req,
                             SessionEntry* entry, bool& done)
    {
        done = false;
        const auto& d = req.as<w::DeliverEncapsulatedResponse>();
        if (!f.started || d.request_id != f.request_id)
            reject(w::ErrorCode::InvalidRequest, "unexpected encapsulated response id");
        const w::Message& inner = *d.inner;
        if (inner.is<w::ErrorMsg>())
            reject(w::ErrorCode::InvalidRequest, "requester failed the encapsulated request");

        switch (f.outstanding.code())
        {
            case w::Code::GetDigests:
            {
                if (!inner.is<w::Digests>())
                    reject(w::ErrorCode::InvalidRequest, "expected DIGESTS");
                const auto& dg = inner.as<w::Digests>();
                if ((dg.slot_mask & 1) == 0 || dg.digests.empty())
                    reject(w::ErrorCode::InvalidRequest, "requester has no slot 0");
                f.expected_digest = dg.digests.front();
                f.log.append(f.outstanding);
                f.log.append(inner);
                auto g = msg(next_chunk(f, 0));
                f.outstanding = g;
                return encap_ack(f, g);
            }
            case w::Code::GetCertificate:
            {
                if (!inner.is<w::Certificate>())
                    reject(w::ErrorCode::InvalidRequest, "expected CERTIFICATE");
                const auto& c = inner.as<w::Certificate>();
                if (c.portion.empty() && c.remainder_length != 0)
                    reject(w::ErrorCode::InvalidRequest, "empty certificate portion");
                append(f.chain_image, c.portion);
                f.log.append(f.outstanding);
                f.log.append(inner);
                if (c.remainder_length > 0)
                {
                    auto g = next_chunk(f, c.remainder_length);
                    f.outstanding = msg(g);
                    return encap_ack(f, msg(g));
                }
                auto chain = crypto::CertificateChain::parse(f.chain_image, 0);
                if (hash(f.chain_image) != f.expected_digest)
                    reject(w::ErrorCode::InvalidRequest, "requester chain digest mismatch");
                crypto::PublicKey key;
                for (const auto& root : trusted_roots)
                {
                    try
                    {
                        key = provider->verify_certificate_chain(chain, root);
                        break;
                    }
                    catch (const Error&)
                    {}
                }
                if (!key.valid() || key.algorithm() != suite.requester_sig)
                    reject(w::ErrorCode::InvalidRequest, "requester chain not trusted");
                requester_chain = chain;
                requester_key = key;
                if (f.purpose == EncapFlow::Purpose::HandshakeCert)
                {
                    if (entry)
                        entry->handshake_cert_done = true;
                    done = true;
                    return encap_ack(f, std::nullopt);
                }
                w::Challenge ch;
                ch.slot = 0;
                ch.nonce = random_nonce(*provider);
                f.nonce = ch.nonce;
                auto m = msg(ch);
                f.outstanding = m;
                return encap_ack(f, m);
            }
            case w::Code::Challenge:
            {
                if (!inner.is<w::ChallengeAuth>())
                    reject(w::ErrorCode::InvalidRequest, "expected CHALLENGE_AUTH");
                const auto& a = inner.as<w::ChallengeAuth>();
                if (a.nonce == f.nonce)
                    reject(w::ErrorCode::InvalidRequest, "challenge nonce reflected");
                if (a.cert_chain_digest != f.expected_digest)
                    reject(w::ErrorCode::InvalidRequest, "challenge chain digest mismatch");
                f.log.append(f.outstanding);
                f.log.append(protocol::encode_stripped(inner));
                auto th = hash(f.log.bytes());
                if (!provider->verify(
                        requester_key,
                        protocol::signing_input(protocol::kChallengeAuthContext, th),
                        a.signature, suite.requester_sig))
                    reject(w::ErrorCode::InvalidRequest, "requester signature invalid");
                requester_verified = true;
                done = true;
                return encap_ack(f, std::nullopt);
            }
            case w::Code::KeyUpdate:
            {
                if (!inner.is<w::KeyUpdateAck>() || !entry)
                    reject(w::ErrorCode::InvalidRequest, "expected KEY_UPDATE_ACK");
                const auto& ack = inner.as<w::KeyUpdateAck>();
                const auto& sent = f.outstanding.as<w::KeyUpdate>();
                if (ack.op != sent.op || ack.tag != sent.tag)
                    reject(w::ErrorCode::InvalidRequest, "key update ack mismatch");
                if (sent.op == w::KeyUpdateOp::VerifyNewKey)
                {
                    done = true;
                    return encap_ack(f, std::nullopt);
                }
                session::update_keys(*provider, entry->state, sent.op,
                                     Direction::ResponderToRequester);
                auto verify = msg(w::KeyUpdate{w::KeyUpdateOp::VerifyNewKey, sent.tag});
                f.outstanding = verify;
                return encap_ack(f, verify);
            }
            default: break;
        }
        reject(w::ErrorCode::InvalidRequest, "no encapsulated request outstanding");
    }

    w::Message on_plain_encap(const w::Message& req)
    {
        if (!encap)
            reject(w::ErrorCode::UnexpectedRequest, "no encapsulated flow pending");
        if (req.is<w::GetEncapsulatedRequest>())
        {
            if (encap->started)
                reject(w::ErrorCode::UnexpectedRequest, "encapsulated flow already running");
            return encap_start(*encap);
        }
        bool done = false;
        w::Message ack;
        try
        {
            ack = encap_deliver(*encap, req, nullptr, done);
        }
        catch (const Reject&)
        {
            encap.reset();
            throw;
        }
        if (done)
            encap.reset();
        return ack;
    }

    w::Message dispatch_plain(const w::Message& req)
    {
        const auto code = req.code();
        if (!is_request_code(code))
            reject(w::ErrorCode::UnsupportedRequest,
                   std::string(w::code_name(code)) + " is not a request");
        if (busy > 0)
        {
            --busy;
            reject(w::ErrorCode::Busy, "busy");
        }
        if (code == w::Code::GetVersion)
            return on_get_version(req);
        if (phase == ConnectionPhase::Reset)
            reject(w::ErrorCode::UnexpectedRequest, "GET_VERSION required first");
        if (phase >= ConnectionPhase::CapsKnown && req.version != version)
            reject(w::ErrorCode::VersionMismatch, "message version differs from negotiated");
        switch (code)
        {
            case w::Code::GetCapabilities: return on_get_capabilities(req);
            case w::Code::NegotiateAlgorithms: return on_negotiate_algorithms(req);
            case w::Code::GetDigests: return on_get_digests(req);
            case w::Code::GetCertificate: return on_get_certificate(req);
            case w::Code::Challenge: return on_challenge(req);
            case w::Code::GetMeasurements: return on_get_measurements(req);
            case w::Code::KeyExchange: return on_key_exchange(req);
            case w::Code::PskExchange: return on_psk_exchange(req);
            case w::Code::GetEncapsulatedRequest:
            case w::Code::DeliverEncapsulatedResponse:
                require_phase(ConnectionPhase::AlgsAgreed, "encapsulated request");
                return on_plain_encap(req);
            case w::Code::Finish:
            case w::Code::PskFinish:
            case w::Code::Heartbeat:
            case w::Code::KeyUpdate:
            case w::Code::EndSession:
                reject(w::ErrorCode::UnexpectedRequest,
                       std::string(w::code_name(code)) + " is only valid inside a session");
            default: break;
        }
        reject(w::ErrorCode::UnsupportedRequest,
               std::string(w::code_name(code)) + " not supported");
    }

    Bytes handle_message(ByteView raw, w::Code* code_out)
    {
        w::Message req;
        try
        {
            req = w::decode_message(raw);
        }
        catch (const Error& e)
        {
            return w::encode_message(error(w::ErrorCode::InvalidRequest, e.what()));
        }
        if (code_out)
            *code_out = req.code();
        try
        {
            return w::encode_message(dispatch_plain(req));
        }
        catch (const Reject& r)
        {
            return w::encode_message(error(r.code, r.detail));
        }
        catch (const std::exception& e)
        {
            return w::encode_message(error(w::ErrorCode::InvalidRequest, e.what()));
        }
    }

    // -- in-session requests ----------------------------------------------

    Reply on_finish(SessionEntry& e, const w::Message& req)
    {
        if (e.psk)
            reject(w::ErrorCode::UnexpectedRequest, "FINISH in a PSK session");
        const auto& f = req.as<w::Finish>();
        const bool mutual = e.mutual != w::MutualAuthMode::None;
        if (mutual != f.requester_signature.has_value())
            reject(w::ErrorCode::InvalidRequest, "FINISH signature presence mismatch", true);
        if (e.mutual == w::MutualAuthMode::EncapsulatedCert && !e.handshake_cert_done)
            reject(w::ErrorCode::UnexpectedRequest, "requester chain not retrieved", true);

        session::TranscriptLog log = e.log;
        if (mutual)
            log.append(hash(requester_chain.serialize()));
        log.append(protocol::encode_stripped(req));
        log.mark(Checkpoint::Finish);
        auto th = session::transcript_hash(*provider, suite.hash, log, Checkpoint::Finish);
        if (mutual &&
            !provider->verify(requester_key,
                              protocol::signing_input(protocol::kFinishContext, th),
                              *f.requester_signature, e.state.suite.requester_sig))
            reject(w::ErrorCode::DecryptError, "requester FINISH signature invalid", true);
        auto expected = session::compute_verify_data(
            *provider, e.state.secrets, Direction::RequesterToResponder, log,
            Checkpoint::Finish);
        if (expected != f.verify_data)
            reject(w::ErrorCode::DecryptError, "FINISH verify_data mismatch", true);
        if (mutual && e.mutual == w::MutualAuthMode::EncapsulatedCert)
            requester_verified = true;

        w::FinishRsp r;
        log.append(protocol::encode_stripped(msg(r)));
        log.mark(Checkpoint::Th2);
        r.verify_data = session::compute_verify_data(
            *provider, e.state.secrets, Direction::ResponderToRequester, log,
            Checkpoint::Th2);
        auto th2 = session::transcript_hash(*provider, suite.hash, log, Checkpoint::Th2);
        session::derive_data_secrets(*provider, e.state.secrets, th2);
        e.log = std::move(log);
        return {msg(r), [&e] { e.state.activate(); }};
    }

    Reply on_psk_finish(SessionEntry& e, const w::Message& req)
    {
        if (!e.psk)
            reject(w::ErrorCode::UnexpectedRequest, "PSK_FINISH in a certificate session");
        const auto& f = req.as<w::PskFinish>();
        session::TranscriptLog log = e.log;
        log.append(protocol::encode_stripped(req));
        log.mark(Checkpoint::Finish);
        auto expected = session::compute_verify_data(
            *provider, e.state.secrets, Direction::RequesterToResponder, log,
            Checkpoint::Finish);
        if (expected != f.verify_data)
            reject(w::ErrorCode::DecryptError, "PSK_FINISH verify_data mismatch", true);
        auto rsp = msg(w::PskFinishRsp{});
        log.append(rsp);
        log.mark(Checkpoint::Th2);
        auto th2 = session::transcript_hash(*provider, suite.hash, log, Checkpoint::Th2);
        session::derive_data_secrets(*provider, e.state.secrets, th2);
        e.log = std::move(log);
        return {rsp, [&e] { e.state.activate(); }};
    }

    Reply on_session_encap(SessionEntry& e, const w::Message& req)
    {
        const bool handshaking = e.state.phase == session::Phase::Handshaking;
        if (req.is<w::GetEncapsulatedRequest>())
        {
            if (e.encap && e.encap->started)
                reject(w::ErrorCode::UnexpectedRequest, "encapsulated flow already running");
            if (handshaking)
            {
                if (e.mutual != w::MutualAuthMode::EncapsulatedCert || e.handshake_cert_done)
                    reject(w::ErrorCode::UnexpectedRequest, "no encapsulated request pending");
                EncapFlow f;
                f.purpose = EncapFlow::Purpose::HandshakeCert;
                e.encap = std::move(f);
                return {encap_start(*e.encap), {}};
            }
            if (e.pending_updates.empty())
            {
                w::EncapsulatedResponseAck none;
                return {msg(std::move(none)), {}};
            }
            EncapFlow f;
            f.purpose = EncapFlow::Purpose::KeyUpdate;
            f.op = e.pending_updates.front();
            f.tag = e.next_tag++;
            e.pending_updates.pop_front();
            e.encap = std::move(f);
            return {encap_start(*e.encap), {}};
        }
        if (!e.encap)
            reject(w::ErrorCode::UnexpectedRequest, "no encapsulated flow pending");
        bool done = false;
        w::Message ack;
        try
        {
            ack = encap_deliver(*e.encap, req, &e, done);
        }
        catch (const Reject&)
        {
            e.encap.reset();
            throw;
        }
        if (done)
            e.encap.reset();
        return {ack, {}};
    }

    Reply on_key_update(SessionEntry& e, const w::Message& req)
    {
        const auto& k = req.as<w::KeyUpdate>();
        auto ack = msg(w::KeyUpdateAck{k.op, k.tag});
        if (k.op == w::KeyUpdateOp::VerifyNewKey)
            return {ack, {}};
        return {ack, [this, &e, op = k.op] {
                    session::update_keys(*provider, e.state, op,
                                         Direction::RequesterToResponder);
                }};
    }

    Reply on_app_data(const w::Message& req)
    {
        const auto& payload = req.as<w::AppData>().payload;
        if (payload.empty())
            return {msg(w::AppData{}), {}};
        auto it = apps.find(payload.front());
        if (it == apps.end())
            reject(w::ErrorCode::UnsupportedRequest,
                   "no handler for opcode " + std::to_string(payload.front()));
        return {msg(w::AppData{it->second(payload)}), {}};
    }

    Reply dispatch_session(SessionEntry& e, const w::Message& req)
    {
        const auto code = req.code();
        if (req.version != version)
            reject(w::ErrorCode::VersionMismatch, "message version differs from negotiated");
        if (e.state.phase == session::Phase::Handshaking)
        {
            switch (code)
            {
                case w::Code::Finish: return on_finish(e, req);
                case w::Code::PskFinish: return on_psk_finish(e, req);
                case w::Code::GetEncapsulatedRequest:
                case w::Code::DeliverEncapsulatedResponse: return on_session_encap(e, req);
                default:
                    reject(w::ErrorCode::UnexpectedRequest,
                           std::string(w::code_name(code)) + " before FINISH");
            }
        }
        switch (code)
        {
            case w::Code::Heartbeat: return {msg(w::HeartbeatAck{}), {}};
            case w::Code::KeyUpdate: return on_key_update(e, req);
            case w::Code::EndSession:
                return {msg(w::EndSessionAck{}), [&e] { e.state.terminate(); }};
            case w::Code::AppData: return on_app_data(req);
            case w::Code::GetEncapsulatedRequest:
            case w::Code::DeliverEncapsulatedResponse: return on_session_encap(e, req);
            case w::Code::Finish:
            case w::Code::PskFinish:
                reject(w::ErrorCode::UnexpectedRequest, "session already established");
            default: break;
        }
        reject(w::ErrorCode::UnsupportedRequest,
               std::string(w::code_name(code)) + " not supported inside a session");
    }

    Bytes plain_error_frame(w::ErrorCode code, std::string_view detail) const
    {
        return w::encode_frame(w::FrameKind::Spdm,
                               w::encode_message(error(code, detail)));
    }

    Bytes handle_secured(ByteView payload, w::Code* code_out)
    {
        w::SecuredRecord rec;
        try
        {
            rec = w::decode_secured_record(payload);
        }
        catch (const Error& err)
        {
            // The header names the session even when the lengths disagree.
            if (payload.size() >= 4)
            {
                const std::uint32_t id = payload[0] | payload[1] << 8 | payload[2] << 16 |
                                         static_cast<std::uint32_t>(payload[3]) << 24;
                if (auto it = sessions.find(id); it != sessions.end())
                {
                    ++decrypt_failures;
                    it->second.state.terminate();
                }
            }
            return plain_error_frame(w::ErrorCode::DecryptError, err.what());
        }
        auto it = sessions.find(rec.session_id);
        if (it == sessions.end() || it->second.state.phase == session::Phase::Terminated)
            return plain_error_frame(w::ErrorCode::DecryptError, "unknown session");
        SessionEntry& e = it->second;
        auto now = std::chrono::steady_clock::now();
        if (cfg.session_timeout && now - e.last_activity > *cfg.session_timeout)
        {
            e.state.terminate();
            return plain_error_frame(w::ErrorCode::InvalidRequest, "session timed out");
        }

        Bytes plain;
        try
        {
            plain = session::open_record(*provider, e.state,
                                         Direction::RequesterToResponder, rec);
        }
        catch (const Error& err)
        {
            ++decrypt_failures;
            e.state.terminate();
            return plain_error_frame(w::ErrorCode::DecryptError, err.what());
        }
        e.last_activity = now;

        Reply reply;
        bool terminate = false;
        try
        {
            auto req = w::decode_message(plain);
            if (code_out)
                *code_out = req.code();
            reply = dispatch_session(e, req);
        }
        catch (const Reject& r)
        {
            reply.msg = error(r.code, r.detail);
            terminate = r.terminate;
        }
        catch (const std::exception& ex)
        {
            reply.msg = error(w::ErrorCode::InvalidRequest, ex.what());
        }
        auto out = session::seal_record(*provider, e.state,
                                        Direction::ResponderToRequester,
                                        w::encode_message(reply.msg));
        if (reply.after_seal)
            reply.after_seal();
        if (terminate)
            e.state.terminate();
        return w::encode_frame(w::FrameKind::Secured, w::encode_secured_record(out));
    }

    Bytes handle_raw_app(ByteView payload)
    {
        if (!cfg.allow_plain_app)
            return plain_error_frame(w::ErrorCode::UnsupportedRequest,
                                     "plain application requests disabled");
        if (payload.empty())
            return w::encode_frame(w::FrameKind::RawApp, {});
        auto it = apps.find(payload.front());
        if (it == apps.end())
            return plain_error_frame(w::ErrorCode::UnsupportedRequest,
                                     "no handler for opcode");
        return w::encode_frame(w::FrameKind::RawApp, it->second(payload));
    }

    Bytes handle_frame(ByteView frame)
    {
        auto start = std::chrono::steady_clock::now();
        w::Code code = w::Code::Error;
        bool secured = false;
        Bytes out;
        try
        {
            auto f = w::decode_frame(frame);
            switch (f.kind)
            {
                case w::FrameKind::Spdm:
                    out = w::encode_frame(w::FrameKind::Spdm,
                                          handle_message(f.payload, &code));
                    break;
                case w::FrameKind::Secured:
                    secured = true;
                    out = handle_secured(f.payload, &code);
                    break;
                case w::FrameKind::RawApp:
                    code = w::Code::AppData;
                    out = handle_raw_app(f.payload);
                    break;
            }
        }
        catch (const std::exception& e)
        {
            out = plain_error_frame(w::ErrorCode::InvalidRequest, e.what());
        }
        if (timing)
            timing(code, secured, std::chrono::steady_clock::now() - start);
        return out;
    }
};

Responder::Responder(ResponderConfig config,
                     std::shared_ptr<crypto::CryptoProvider> provider) :
    impl_(std::make_unique<Impl>(std::move(config), std::move(provider)))
{}

Responder::~Responder() = default;

void Responder::provision_slot(std::uint8_t slot, crypto::Credential credential)
{
    if (slot >= w::kMaxSlots)
        fail(Errc::InvalidSlot, "slot " + std::to_string(slot) + " out of range 0..7");
    if (credential.chain.empty() || !credential.leaf_key.valid())
        fail(Errc::InvalidArgument, "credential needs a chain and a leaf key");
    impl_->slots[slot] = std::move(credential);
}

void Responder::provision_measurements(std::vector<w::MeasurementBlock> blocks)
{
    for (std::size_t i = 0; i < blocks.size(); ++i)
        if (blocks[i].index != i + 1)
            fail(Errc::NonContiguousMeasurementIndex,
                 "measurement at position " + std::to_string(i + 1) + " has index " +
                     std::to_string(blocks[i].index));
    if (blocks.size() >= w::kMeasurementAll)
        fail(Errc::InvalidArgument, "too many measurement blocks");
    impl_->measurements = std::move(blocks);
}

void Responder::provision_psk(Bytes hint, Bytes secret)
{
    if (hint.empty() || secret.empty())
        fail(Errc::InvalidArgument, "PSK hint and secret must be non-empty");
    impl_->psk[std::move(hint)] = std::move(secret);
}

void Responder::trust_requester_root(Bytes root_der)
{
    impl_->trusted_roots.push_back(std::move(root_der));
}

void Responder::register_app_handler(std::uint8_t opcode, AppHandler handler)
{
    if (impl_->apps.count(opcode))
        fail(Errc::DuplicateOpcode, "opcode " + std::to_string(opcode) + " already registered");
    impl_->apps[opcode] = std::move(handler);
}

Bytes Responder::handle_frame(ByteView frame)
{
    return impl_->handle_frame(frame);
}

Bytes Responder::handle_message(ByteView raw)
{
    return impl_->handle_message(raw, nullptr);
}

void Responder::inject_busy(unsigned count)
{
    impl_->busy = count;
}

void Responder::queue_key_update(std::uint32_t session_id, w::KeyUpdateOp op)
{
    auto it = impl_->sessions.find(session_id);
    if (it == impl_->sessions.end())
        fail(Errc::SessionNotFound, "no session " + std::to_string(session_id));
    if (op == w::KeyUpdateOp::VerifyNewKey)
        fail(Errc::InvalidArgument, "queue UpdateKey or UpdateAllKeys");
    it->second.pending_updates.push_back(op);
}

void Responder::set_timing_hook(TimingHook hook)
{
    impl_->timing = std::move(hook);
}

protocol::ConnectionPhase Responder::phase() const noexcept
{
    return impl_->phase;
}

const CryptoSuite& Responder::suite() const noexcept
{
    return impl_->suite;
}

std::uint8_t Responder::version() const noexcept
{
    return impl_->version;
}

const session::TranscriptLog& Responder::connection_transcript() const noexcept
{
    return impl_->vca;
}

std::optional<session::TranscriptLog>
    Responder::session_transcript(std::uint32_t session_id) const
{
    auto it = impl_->sessions.find(session_id);
    if (it == impl_->sessions.end())
        return std::nullopt;
    return it->second.log;
}

std::optional<session::Phase> Responder::session_phase(std::uint32_t session_id) const
{
    auto it = impl_->sessions.find(session_id);
    if (it == impl_->sessions.end())
        return std::nullopt;
    return it->second.state.phase;
}

std::size_t Responder::active_sessions() const noexcept
{
    return impl_->live_sessions();
}

std::vector<std::uint32_t> Responder::session_ids() const
{
    std::vector<std::uint32_t> ids;
    for (const auto& kv : impl_->sessions)
        ids.push_back(kv.first);
    return ids;
}

bool Responder::requester_authenticated() const noexcept
{
    return impl_->requester_verified;
}

const crypto::PublicKey& Responder::requester_key() const noexcept
{
    return impl_->requester_key;
}

std::uint64_t Responder::decrypt_failures() const noexcept
{
    return impl_->decrypt_failures;
}

#ifdef SPDMSIM_TEST_HOOKS
std::optional<session::SessionSecrets>
    Responder::export_session_secrets(std::uint32_t session_id) const
{
    auto it = impl_->sessions.find(session_id);
    if (it == impl_->sessions.end())
        return std::nullopt;
    return it->second.state.secrets;
}
#endif

} // namespace spdmsim
