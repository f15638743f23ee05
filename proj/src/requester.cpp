// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/errors.hpp>
#include <spdmsim/requester.hpp>

#include <algorithm>
#include <array>

namespace spdmsim
{

namespace w = wire;
using protocol::ConnectionPhase;
using session::Checkpoint;
using session::Direction;

namespace
{

struct VerifiedChain
{
    crypto::CertificateChain chain;
    crypto::PublicKey key;
};

struct SessionEntry
{
    session::SessionState state;
    session::TranscriptLog log;
};

bool in_menu(const std::vector<std::uint16_t>& menu, std::uint16_t id)
{
    return std::find(menu.begin(), menu.end(), id) != menu.end();
}

std::string detail_of(const w::ErrorMsg& e)
{
    std::string s = w::error_code_name(e.code);
    if (!e.detail.empty())
        s += ": " + std::string(e.detail.begin(), e.detail.end());
    return s;
}

} // namespace

struct Requester::Impl
{
    Impl(RequesterConfig c, std::shared_ptr<crypto::CryptoProvider> p,
         std::shared_ptr<transport::Channel> ch) :
        cfg(std::move(c)), provider(std::move(p)), channel(std::move(ch))
    {
        if (!provider || !channel)
            fail(Errc::InvalidArgument, "requester needs a crypto provider and a channel");
        if (cfg.supported_versions.empty())
            fail(Errc::InvalidArgument, "requester needs at least one version");
        if (cfg.algorithm_menu.empty())
            fail(Errc::InvalidArgument, "requester algorithm menu is empty");
        if (cfg.cert_chunk_size == 0)
            fail(Errc::InvalidArgument, "certificate chunk size must be positive");
    }

    RequesterConfig cfg;
    std::shared_ptr<crypto::CryptoProvider> provider;
    std::shared_ptr<transport::Channel> channel;
    BackoffHook backoff;
    ExchangeHook exchange_hook;

    ConnectionPhase phase = ConnectionPhase::Reset;
    std::uint8_t version = protocol::kVersionDiscovery;
    std::uint32_t caps = 0;
    CryptoSuite suite;
    session::TranscriptLog vca;
    session::TranscriptLog auth_log;
    session::TranscriptLog meas_log;
    session::TranscriptLog encap_log;

    std::optional<DigestResult> digests;
    std::array<std::optional<VerifiedChain>, w::kMaxSlots> chains;
    std::map<Bytes, crypto::CertificateChain> cache;
    crypto::PublicKey responder_key;
    std::uint8_t auth_slot = 0;

    std::map<std::uint32_t, SessionEntry> sessions;
    std::uint16_t next_req_id = 1;
    std::uint8_t next_tag = 1;
    std::vector<w::Code> trace;

    // -- helpers ----------------------------------------------------------

    template <class T>
    w::Message msg(T body) const
    {
        return w::make(std::move(body), version);
    }

    Bytes hash(ByteView data) const
    {
        return provider->hash(suite.hash, data);
    }

    w::Nonce random_nonce()
    {
        w::Nonce n{};
        auto b = provider->random_bytes(n.size());
        std::copy(b.begin(), b.end(), n.begin());
        return n;
    }

    void require_phase(ConnectionPhase min, const char* op) const
    {
        if (phase < min)
            fail(Errc::InvalidPhase, std::string(op) + " requires phase " +
                                         protocol::phase_name(min) + ", current " +
                                         protocol::phase_name(phase));
    }

    [[noreturn]] static void raise_error(const w::Message& rsp)
    {
        const auto& e = rsp.as<w::ErrorMsg>();
        fail(protocol::errc_from_wire(e.code), "responder error " + detail_of(e));
    }

    static void expect(const w::Message& rsp, w::Code expected)
    {
        if (rsp.code() != expected)
            fail(Errc::MalformedMessage, std::string("expected ") + w::code_name(expected) +
                                             ", got " + w::code_name(rsp.code()));
    }

    w::Frame receive_frame()
    {
        return w::decode_frame(channel->recv_msg(cfg.timeout));
    }

    // One plain request/response, retrying on ERROR(Busy).
    w::Message transact(const w::Message& req, w::Code expected)
    {
        const auto start = std::chrono::steady_clock::now();
        const Bytes frame = w::encode_frame(w::FrameKind::Spdm, w::encode_message(req));
        for (unsigned attempt = 0;; ++attempt)
        {
            channel->send_msg(frame);
            trace.push_back(req.code());
            auto f = receive_frame();
            if (f.kind != w::FrameKind::Spdm)
                fail(Errc::MalformedMessage, "expected a plain protocol frame");
            auto rsp = w::decode_message(f.payload);
            trace.push_back(rsp.code());
            if (rsp.is<w::ErrorMsg>())
            {
                if (rsp.as<w::ErrorMsg>().code == w::ErrorCode::Busy &&
                    attempt < cfg.busy_retries)
                {
                    if (backoff)
                        backoff(attempt + 1, req.code());
                    continue;
                }
                raise_error(rsp);
            }
            expect(rsp, expected);
            if (rsp.version != req.version)
                fail(Errc::VersionMismatch, "response version differs from request");
            if (exchange_hook)
                exchange_hook(req.code(), std::chrono::steady_clock::now() - start);
            return rsp;
        }
    }

    SessionEntry& entry(std::uint32_t id)
    {
        auto it = sessions.find(id);
        if (it == sessions.end())
            fail(Errc::SessionNotFound, "no session " + std::to_string(id));
        return it->second;
    }

    void require_established(const SessionEntry& e, const char* op) const
    {
        if (e.state.phase != session::Phase::Established)
            fail(Errc::InvalidPhase, std::string(op) + " requires an established session, "
                                                      "session is " +
                                         session::phase_name(e.state.phase));
    }

    // Gives up on a session after a record-layer failure. The outbound keys
    // are still sound, so one sealed END_SESSION tells the responder to drop
    // its side too; the reply is read and discarded.
    void abandon(SessionEntry& e) noexcept
    {
        if (e.state.phase == session::Phase::Terminated)
            return;
        try
        {
            auto rec = session::seal_record(*provider, e.state, Direction::RequesterToResponder,
                                            w::encode_message(msg(w::EndSession{})));
            e.state.terminate();
            channel->send_msg(
                w::encode_frame(w::FrameKind::Secured, w::encode_secured_record(rec)));
            trace.push_back(w::Code::EndSession);
            channel->recv_msg(cfg.timeout);
        }
        catch (const std::exception&)
        {}
        e.state.terminate();
    }

    // One in-session request/response. `after_send` runs between sealing the
    // request and opening the response.
    w::Message transact_session(SessionEntry& e, const w::Message& req,
                                std::optional<w::Code> expected,
                                const std::function<void()>& after_send = {})
    {
        if (e.state.phase == session::Phase::Terminated)
            fail(Errc::InvalidPhase, "session is terminated");
        auto rec = session::seal_record(*provider, e.state, Direction::RequesterToResponder,
                                        w::encode_message(req));
        channel->send_msg(w::encode_frame(w::FrameKind::Secured, w::encode_secured_record(rec)));
        trace.push_back(req.code());
        if (after_send)
            after_send();

        auto f = receive_frame();
        if (f.kind == w::FrameKind::Spdm)
        {
            auto rsp = w::decode_message(f.payload);
            trace.push_back(rsp.code());
            if (!rsp.is<w::ErrorMsg>())
                fail(Errc::MalformedMessage, "plain response inside a session");
            if (rsp.as<w::ErrorMsg>().code == w::ErrorCode::DecryptError)
                abandon(e);
            raise_error(rsp);
        }
        if (f.kind != w::FrameKind::Secured)
            fail(Errc::MalformedMessage, "expected a secured frame");
        Bytes plain;
        try
        {
            w::SecuredRecord in;
            try
            {
                in = w::decode_secured_record(f.payload);
            }
            catch (const Error& err)
            {
                fail(Errc::DecryptError, std::string("unreadable record: ") + err.what());
            }
            plain = session::open_record(*provider, e.state, Direction::ResponderToRequester, in);
        }
        catch (const Error&)
        {
            abandon(e);
            throw;
        }
        auto rsp = w::decode_message(plain);
        trace.push_back(rsp.code());
        if (rsp.is<w::ErrorMsg>())
        {
            if (rsp.as<w::ErrorMsg>().code == w::ErrorCode::DecryptError)
                e.state.terminate();
            raise_error(rsp);
        }
        if (expected)
            expect(rsp, *expected);
        return rsp;
    }

    // -- connection setup -------------------------------------------------

    CryptoSuite init_connection()
    {
        if (phase != ConnectionPhase::Reset)
            fail(Errc::InvalidPhase, std::string("init_connection requires phase Reset, current ") +
                                         protocol::phase_name(phase));
        version = protocol::kVersionDiscovery;
        vca.clear();

        auto get_version = msg(w::GetVersion{});
        auto vrsp = transact(get_version, w::Code::Version);
        std::uint8_t best = 0;
        for (auto v : vrsp.as<w::Version>().versions)
            if (std::find(cfg.supported_versions.begin(), cfg.supported_versions.end(), v) !=
                    cfg.supported_versions.end() &&
                w::is_supported_version(v))
                best = std::max(best, v);
        if (best == 0)
            fail(Errc::VersionMismatch, "no common protocol version");
        vca.append(get_version);
        vca.append(vrsp);
        phase = ConnectionPhase::VersionAgreed;
        version = best;

        std::uint32_t own_caps = cfg.capability_flags;
        if (!cfg.credential)
            own_caps &= ~w::cap::MutAuth;
        w::GetCapabilities gc;
        gc.ct_exponent = cfg.ct_exponent;
        gc.flags = own_caps;
        auto get_caps = msg(gc);
        auto crsp = transact(get_caps, w::Code::Capabilities);
        caps = own_caps & crsp.as<w::Capabilities>().flags;
        vca.append(get_caps);
        vca.append(crsp);
        phase = ConnectionPhase::CapsKnown;

        auto neg = msg(w::NegotiateAlgorithms{cfg.algorithm_menu});
        auto arsp = transact(neg, w::Code::Algorithms);
        const auto& s = arsp.as<w::Algorithms>().selected;
        const auto& m = cfg.algorithm_menu;
        auto check = [](std::uint16_t id, const std::vector<std::uint16_t>& menu,
                        const char* field) {
            if (id == 0)
                fail(Errc::AlgorithmMismatch, std::string("no common ") + field + " algorithm");
            if (!in_menu(menu, id))
                fail(Errc::AlgorithmMismatch,
                     std::string("responder selected an unoffered ") + field + " algorithm");
        };
        check(static_cast<std::uint16_t>(s.hash), m.hash, "hash");
        check(static_cast<std::uint16_t>(s.responder_sig), m.responder_sig, "responder signature");
        check(static_cast<std::uint16_t>(s.requester_sig), m.requester_sig, "requester signature");
        check(static_cast<std::uint16_t>(s.dhe_group), m.dhe, "DHE");
        check(static_cast<std::uint16_t>(s.aead), m.aead, "AEAD");
        check(static_cast<std::uint16_t>(s.key_schedule), m.key_schedule, "key schedule");
        suite = s;
        vca.append(neg);
        vca.append(arsp);
        vca.mark(Checkpoint::Vca);
        auth_log = vca.fork(Checkpoint::Vca);
        meas_log = vca.fork(Checkpoint::Vca);
        digests.reset();
        for (auto& c : chains)
            c.reset();
        responder_key = {};
        phase = ConnectionPhase::AlgsAgreed;
        return suite;
    }

    // -- authentication ---------------------------------------------------

    DigestResult fetch_digests()
    {
        require_phase(ConnectionPhase::AlgsAgreed, "fetch_digests");
        auto req = msg(w::GetDigests{});
        auto rsp = transact(req, w::Code::Digests);
        const auto& d = rsp.as<w::Digests>();
        DigestResult out;
        out.slot_mask = d.slot_mask;
        out.digests = d.digests;
        if (static_cast<std::size_t>(__builtin_popcount(d.slot_mask)) != d.digests.size())
            fail(Errc::MalformedMessage, "digest count does not match slot mask");
        for (std::size_t s = 0, i = 0; s < w::kMaxSlots; ++s)
        {
            if ((d.slot_mask & (1u << s)) == 0)
                continue;
            if (d.digests[i].size() != digest_size(suite.hash))
                fail(Errc::MalformedMessage, "digest has the wrong length");
            if (cache.count(d.digests[i]))
                out.cached_mask = static_cast<std::uint8_t>(out.cached_mask | (1u << s));
            ++i;
        }
        auth_log.append(req);
        auth_log.append(rsp);
        digests = out;
        return out;
    }

    const Bytes& digest_for(std::uint8_t slot) const
    {
        std::size_t i = 0;
        for (std::size_t s = 0; s < slot; ++s)
            if (digests->slot_mask & (1u << s))
                ++i;
        return digests->digests[i];
    }

    crypto::PublicKey verify_chain(const crypto::CertificateChain& chain) const
    {
        if (cfg.trusted_responder_roots.empty())
            fail(Errc::UntrustedRoot, "no trusted responder roots configured");
        std::optional<Error> last;
        for (const auto& root : cfg.trusted_responder_roots)
        {
            try
            {
                return provider->verify_certificate_chain(chain, root);
            }
            catch (const Error& e)
            {
                if (!last || e.code() != Errc::UntrustedRoot)
                    last = e;
            }
        }
        throw *last;
    }

    crypto::CertificateChain fetch_certificate(std::uint8_t slot)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "fetch_certificate");
        if (!digests)
            fail(Errc::InvalidPhase, "fetch_certificate requires fetch_digests first");
        if (slot >= w::kMaxSlots || (digests->slot_mask & (1u << slot)) == 0)
            fail(Errc::InvalidSlot, "slot " + std::to_string(slot) + " not in digest mask");
        const Bytes expected = digest_for(slot);

        crypto::CertificateChain chain;
        auto hit = cfg.use_cache ? cache.find(expected) : cache.end();
        if (hit != cache.end())
        {
            chain = hit->second;
        }
        else
        {
            Bytes image;
            std::vector<w::Message> exchanged;
            for (;;)
            {
                w::GetCertificate g;
                g.slot = slot;
                g.offset = static_cast<std::uint32_t>(image.size());
                g.length = static_cast<std::uint32_t>(cfg.cert_chunk_size);
                auto req = msg(g);
                auto rsp = transact(req, w::Code::Certificate);
                const auto& c = rsp.as<w::Certificate>();
                if (c.slot != slot)
                    fail(Errc::MalformedMessage, "certificate portion for another slot");
                if (c.portion.empty() && c.remainder_length != 0)
                    fail(Errc::MalformedMessage, "empty certificate portion");
                append(image, c.portion);
                auth_log.append(req);
                auth_log.append(rsp);
                if (c.remainder_length == 0)
                    break;
                if (image.size() + c.remainder_length > (1u << 24))
                    fail(Errc::MalformedMessage, "certificate chain too large");
            }
            if (hash(image) != expected)
                fail(Errc::DigestMismatch, "certificate chain digest mismatch");
            chain = crypto::CertificateChain::parse(image, slot);
        }
        auto key = verify_chain(chain);
        if (key.algorithm() != suite.responder_sig)
            fail(Errc::KeyAlgorithmMismatch, "responder leaf key does not match the negotiated "
                                             "signature algorithm");
        chain.slot = slot;
        chains[slot] = VerifiedChain{chain, key};
        cache[expected] = chain;
        return chain;
    }

    crypto::PublicKey challenge_authenticate(std::uint8_t slot)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "challenge_authenticate");
        if (slot >= w::kMaxSlots || !chains[slot])
            fail(Errc::InvalidPhase, "challenge requires a verified chain for slot " +
                                         std::to_string(slot));
        w::Challenge c;
        c.slot = slot;
        c.measurement_summary_selector = cfg.measurement_summary_selector;
        c.nonce = random_nonce();
        auto req = msg(c);
        auto rsp = transact(req, w::Code::ChallengeAuth);
        const auto& a = rsp.as<w::ChallengeAuth>();

        session::TranscriptLog log = std::move(auth_log);
        auth_log = vca.fork(Checkpoint::Vca);
        if (a.nonce == c.nonce)
            fail(Errc::NonceMismatch, "responder reflected the challenge nonce");
        if (a.slot != slot)
            fail(Errc::MalformedMessage, "CHALLENGE_AUTH for another slot");
        if (a.cert_chain_digest != hash(chains[slot]->chain.serialize()))
            fail(Errc::DigestMismatch, "CHALLENGE_AUTH chain digest mismatch");
        log.append(req);
        log.append(protocol::encode_stripped(rsp));
        auto th = hash(log.bytes());
        if (!provider->verify(chains[slot]->key,
                              protocol::signing_input(protocol::kChallengeAuthContext, th),
                              a.signature, suite.responder_sig))
            fail(Errc::SignatureInvalid, "CHALLENGE_AUTH signature invalid");

        responder_key = chains[slot]->key;
        auth_slot = slot;
        phase = ConnectionPhase::Authenticated;
        if (a.mutual_auth_requested)
            process_encapsulated(std::nullopt);
        return responder_key;
    }

    // -- measurements -----------------------------------------------------

    struct MeasExchange
    {
        w::Measurements body;
        bool verified = false;
    };

    MeasExchange measure(std::uint8_t operand, bool sign, std::uint8_t slot)
    {
        if (sign && (slot >= w::kMaxSlots || !chains[slot]))
            fail(Errc::InvalidPhase, "signed measurements require a verified chain");
        w::GetMeasurements g;
        g.operand = operand;
        g.signature_requested = sign;
        g.nonce = random_nonce();
        g.slot = slot;
        auto req = msg(g);
        w::Message rsp;
        try
        {
            rsp = transact(req, w::Code::Measurements);
        }
        catch (const Error& e)
        {
            if (e.code() == Errc::InvalidRequest && operand != w::kMeasurementCount &&
                operand != w::kMeasurementAll)
                fail(Errc::IndexOutOfRange, "measurement index " + std::to_string(operand) +
                                                " rejected: " + e.what());
            throw;
        }
        const auto& m = rsp.as<w::Measurements>();
        if (sign != m.signature.has_value())
            fail(Errc::MalformedMessage, "measurement signature presence mismatch");
        for (const auto& b : m.blocks)
        {
            if (b.digest != hash(b.payload))
                fail(Errc::DigestMismatch, "measurement block digest mismatch");
            if (operand != w::kMeasurementAll && b.index != operand)
                fail(Errc::MalformedMessage, "measurement block index mismatch");
        }
        meas_log.append(req);
        MeasExchange out{m, false};
        if (!sign)
        {
            meas_log.append(rsp);
            return out;
        }
        session::TranscriptLog log = std::move(meas_log);
        meas_log = vca.fork(Checkpoint::Vca);
        if (m.nonce == g.nonce)
            fail(Errc::NonceMismatch, "responder reflected the measurement nonce");
        log.append(protocol::encode_stripped(rsp));
        auto th = hash(log.bytes());
        if (!provider->verify(chains[slot]->key,
                              protocol::signing_input(protocol::kMeasurementsContext, th),
                              *m.signature, suite.responder_sig))
            fail(Errc::SignatureInvalid, "MEASUREMENTS signature invalid");
        out.verified = true;
        return out;
    }

    bool can_sign_measurements(std::uint8_t slot) const
    {
        return (caps & w::cap::MeasSig) && slot < w::kMaxSlots && chains[slot];
    }

    MeasurementResult fetch_measurements(MeasurementMode mode, std::uint8_t slot)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "fetch_measurements");
        const bool sign = can_sign_measurements(slot);
        MeasurementResult out;
        if (mode == MeasurementMode::AllAtOnce)
        {
            auto ex = measure(w::kMeasurementAll, sign, slot);
            out.count = ex.body.block_count;
            out.blocks = std::move(ex.body.blocks);
            out.signature_verified = ex.verified;
            return out;
        }
        auto count = measure(w::kMeasurementCount, false, slot);
        out.count = count.body.block_count;
        for (std::size_t i = 1; i <= out.count; ++i)
        {
            auto ex = measure(static_cast<std::uint8_t>(i), sign && i == out.count, slot);
            if (ex.body.blocks.size() != 1)
                fail(Errc::MalformedMessage, "expected exactly one measurement block");
            out.blocks.push_back(std::move(ex.body.blocks.front()));
            out.signature_verified = ex.verified;
        }
        return out;
    }

    MeasurementResult fetch_measurement_block(std::uint8_t index, bool sign, std::uint8_t slot)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "fetch_measurement_block");
        if (index == w::kMeasurementCount || index == w::kMeasurementAll)
            fail(Errc::InvalidArgument, "block index must be 1..254");
        auto ex = measure(index, sign, slot);
        MeasurementResult out;
        out.count = ex.body.block_count;
        out.blocks = std::move(ex.body.blocks);
        out.signature_verified = ex.verified;
        return out;
    }

    // -- sessions ---------------------------------------------------------

    std::uint16_t allocate_req_id()
    {
        for (int attempt = 0; attempt < 0x10000; ++attempt)
        {
            std::uint16_t id = next_req_id++;
            if (id == 0)
                continue;
            bool used = std::any_of(sessions.begin(), sessions.end(), [&](const auto& kv) {
                return (kv.first >> 16) == id;
            });
            if (!used)
                return id;
        }
        fail(Errc::Internal, "no free session id");
    }

    const crypto::Credential& own_credential() const
    {
        if (!cfg.credential)
            fail(Errc::InvalidArgument, "mutual authentication needs a requester credential");
        return *cfg.credential;
    }

    std::uint32_t register_session(std::uint16_t req_id, std::uint16_t rsp_id,
                                   session::TranscriptLog log, session::SessionSecrets secrets)
    {
        SessionEntry e;
        e.state.session_id = protocol::make_session_id(req_id, rsp_id);
        if (sessions.count(e.state.session_id))
            fail(Errc::MalformedMessage, "responder reused a session id");
        e.state.suite = suite;
        e.state.secrets = std::move(secrets);
        e.log = std::move(log);
        auto id = e.state.session_id;
        sessions[id] = std::move(e);
        return id;
    }

    void finish_handshake(SessionEntry& e, session::TranscriptLog finish_log,
                          const w::Message& rsp)
    {
        session::TranscriptLog log = std::move(finish_log);
        log.append(protocol::encode_stripped(rsp));
        log.mark(Checkpoint::Th2);
        auto expected = session::compute_verify_data(
            *provider, e.state.secrets, Direction::ResponderToRequester, log, Checkpoint::Th2);
        const Bytes& got = rsp.is<w::FinishRsp>() ? rsp.as<w::FinishRsp>().verify_data : Bytes{};
        if (rsp.is<w::FinishRsp>() && got != expected)
        {
            e.state.terminate();
            fail(Errc::VerifyDataMismatch, "FINISH_RSP verify_data mismatch");
        }
        auto th2 = session::transcript_hash(*provider, suite.hash, log, Checkpoint::Th2);
        session::derive_data_secrets(*provider, e.state.secrets, th2);
        e.log = std::move(log);
        e.state.activate();
    }

    std::uint32_t establish_cert_session()
    {
        if (phase != ConnectionPhase::Authenticated)
            fail(Errc::InvalidPhase, std::string("certificate session requires phase "
                                                 "Authenticated, current ") +
                                         protocol::phase_name(phase));
        const auto& peer = *chains[auth_slot];
        auto dhe = provider->generate_dhe_keypair(suite.dhe_group);
        w::KeyExchange k;
        k.measurement_summary_selector = cfg.measurement_summary_selector;
        k.slot = auth_slot;
        k.req_session_id = allocate_req_id();
        k.requester_random = random_nonce();
        k.dhe_public = dhe.public_key;
        auto req = msg(k);
        auto rsp = transact(req, w::Code::KeyExchangeRsp);
        const auto& r = rsp.as<w::KeyExchangeRsp>();

        session::TranscriptLog log = vca.fork(Checkpoint::Vca);
        log.append(hash(peer.chain.serialize()));
        log.append(req);
        log.append(protocol::encode_stripped(rsp));
        log.mark(Checkpoint::Th1);
        auto th1 = session::transcript_hash(*provider, suite.hash, log, Checkpoint::Th1);
        if (!provider->verify(peer.key, protocol::signing_input(protocol::kKeyExchangeContext, th1),
                              r.signature, suite.responder_sig))
            fail(Errc::SignatureInvalid, "KEY_EXCHANGE_RSP signature invalid");
        Bytes shared = provider->dhe_shared_secret(dhe, r.dhe_public);
        auto secrets = session::derive_handshake_secrets(*provider, shared, th1, suite);
        secure_wipe(shared);
        auto expected = session::compute_verify_data(
            *provider, secrets, Direction::ResponderToRequester, log, Checkpoint::Th1);
        if (expected != r.verify_data)
            fail(Errc::VerifyDataMismatch, "KEY_EXCHANGE_RSP verify_data mismatch");

        auto id = register_session(k.req_session_id, r.rsp_session_id, log, std::move(secrets));
        SessionEntry& e = sessions.at(id);
        try
        {
            const bool mutual = r.mutual_auth != w::MutualAuthMode::None;
            if (r.mutual_auth == w::MutualAuthMode::EncapsulatedCert)
                process_encapsulated(id);

            w::Finish f;
            session::TranscriptLog flog = e.log;
            if (mutual)
            {
                flog.append(hash(own_credential().chain.serialize()));
                f.requester_signature = Bytes{};
            }
            flog.append(protocol::encode_stripped(msg(f)));
            flog.mark(Checkpoint::Finish);
            auto th = session::transcript_hash(*provider, suite.hash, flog, Checkpoint::Finish);
            if (mutual)
                f.requester_signature = provider->sign(
                    own_credential().leaf_key,
                    protocol::signing_input(protocol::kFinishContext, th), suite.requester_sig);
            f.verify_data = session::compute_verify_data(
                *provider, e.state.secrets, Direction::RequesterToResponder, flog,
                Checkpoint::Finish);
            auto frsp = transact_session(e, msg(f), w::Code::FinishRsp);
            finish_handshake(e, std::move(flog), frsp);
        }
        catch (...)
        {
            e.state.terminate();
            throw;
        }
        return id;
    }

    std::uint32_t establish_psk_session(const Bytes& hint)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "PSK session");
        auto it = cfg.psk_table.find(hint);
        if (it == cfg.psk_table.end())
            fail(Errc::UnknownPskHint, "PSK hint not in the local table");
        w::PskExchange p;
        p.measurement_summary_selector = cfg.measurement_summary_selector;
        p.req_session_id = allocate_req_id();
        p.psk_hint = hint;
        p.requester_context = provider->random_bytes(w::kNonceSize);
        auto req = msg(p);
        w::Message rsp;
        try
        {
            rsp = transact(req, w::Code::PskExchangeRsp);
        }
        catch (const Error& e)
        {
            if (e.code() == Errc::InvalidRequest)
                fail(Errc::UnknownPskHint, std::string("responder rejected the PSK hint: ") +
                                               e.what());
            throw;
        }
        const auto& r = rsp.as<w::PskExchangeRsp>();
        session::TranscriptLog log = vca.fork(Checkpoint::Vca);
        log.append(req);
        log.append(protocol::encode_stripped(rsp));
        log.mark(Checkpoint::Th1);
        auto th1 = session::transcript_hash(*provider, suite.hash, log, Checkpoint::Th1);
        auto secrets = session::derive_handshake_secrets(*provider, it->second, th1, suite);
        auto expected = session::compute_verify_data(
            *provider, secrets, Direction::ResponderToRequester, log, Checkpoint::Th1);
        if (expected != r.verify_data)
            fail(Errc::VerifyDataMismatch, "PSK_EXCHANGE_RSP verify_data mismatch");

        auto id = register_session(p.req_session_id, r.rsp_session_id, log, std::move(secrets));
        SessionEntry& e = sessions.at(id);
        try
        {
            w::PskFinish f;
            session::TranscriptLog flog = e.log;
            flog.append(protocol::encode_stripped(msg(f)));
            flog.mark(Checkpoint::Finish);
            f.verify_data = session::compute_verify_data(
                *provider, e.state.secrets, Direction::RequesterToResponder, flog,
                Checkpoint::Finish);
            auto frsp = transact_session(e, msg(f), w::Code::PskFinishRsp);
            finish_handshake(e, std::move(flog), frsp);
        }
        catch (...)
        {
            e.state.terminate();
            throw;
        }
        return id;
    }

    // -- encapsulated requests (requester acting as the answering side) ----

    // Answer to one inner request plus an action to run once the answer has
    // been sealed and sent.
    struct EncapAnswer
    {
        w::Message msg;
        std::function<void()> after_send;
    };

    EncapAnswer serve_encap(const w::Message& inner, SessionEntry* e)
    {
        auto err = [&](w::ErrorCode code, std::string_view detail) {
            return EncapAnswer{w::make_error(code, version, detail), {}};
        };
        switch (inner.code())
        {
            case w::Code::GetDigests:
            {
                if (!cfg.credential)
                    return err(w::ErrorCode::UnsupportedRequest, "no requester certificate");
                w::Digests d;
                d.slot_mask = 1;
                d.digests.push_back(hash(cfg.credential->chain.serialize()));
                auto rsp = msg(d);
                encap_log = vca.fork(Checkpoint::Vca);
                encap_log.append(inner);
                encap_log.append(rsp);
                return {rsp, {}};
            }
            case w::Code::GetCertificate:
            {
                const auto& g = inner.as<w::GetCertificate>();
                if (!cfg.credential || g.slot != 0)
                    return err(w::ErrorCode::InvalidRequest, "slot not provisioned");
                Bytes image = cfg.credential->chain.serialize();
                if (g.offset > image.size() || g.length == 0)
                    return err(w::ErrorCode::InvalidRequest, "offset out of range");
                std::size_t len = std::min<std::size_t>(g.length, image.size() - g.offset);
                w::Certificate c;
                c.portion.assign(image.begin() + g.offset,
                                 image.begin() + static_cast<long>(g.offset + len));
                c.remainder_length = static_cast<std::uint32_t>(image.size() - g.offset - len);
                auto rsp = msg(c);
                encap_log.append(inner);
                encap_log.append(rsp);
                return {rsp, {}};
            }
            case w::Code::Challenge:
            {
                const auto& c = inner.as<w::Challenge>();
                if (!cfg.credential || c.slot != 0)
                    return err(w::ErrorCode::InvalidRequest, "slot not provisioned");
                w::ChallengeAuth a;
                a.cert_chain_digest = hash(cfg.credential->chain.serialize());
                a.nonce = random_nonce();
                auto stripped = msg(a);
                encap_log.append(inner);
                encap_log.append(protocol::encode_stripped(stripped));
                auto th = hash(encap_log.bytes());
                try
                {
                    a.signature = provider->sign(
                        cfg.credential->leaf_key,
                        protocol::signing_input(protocol::kChallengeAuthContext, th),
                        suite.requester_sig);
                }
                catch (const Error& ex)
                {
                    fail(Errc::SignatureInvalid,
                         std::string("requester could not sign CHALLENGE_AUTH: ") + ex.what());
                }
                return {msg(a), {}};
            }
            case w::Code::KeyUpdate:
            {
                if (!e)
                    return err(w::ErrorCode::UnexpectedRequest, "key update outside a session");
                const auto& k = inner.as<w::KeyUpdate>();
                auto ack = msg(w::KeyUpdateAck{k.op, k.tag});
                if (k.op == w::KeyUpdateOp::VerifyNewKey)
                    return {ack, {}};
                return {ack, [this, e, op = k.op] {
                            session::update_keys(*provider, e->state, op,
                                                 Direction::ResponderToRequester);
                        }};
            }
            default: break;
        }
        return err(w::ErrorCode::UnsupportedRequest,
                   std::string(w::code_name(inner.code())) + " not served");
    }

    w::Message exchange(SessionEntry* e, const w::Message& req,
                        const std::function<void()>& after_send = {})
    {
        if (e)
            return transact_session(*e, req, std::nullopt, after_send);
        auto expected = req.is<w::GetEncapsulatedRequest>() ? w::Code::EncapsulatedRequest
                                                           : w::Code::EncapsulatedResponseAck;
        return transact(req, expected);
    }

    void process_encapsulated(std::optional<std::uint32_t> session_id)
    {
        require_phase(ConnectionPhase::AlgsAgreed, "process_encapsulated_requests");
        SessionEntry* e = session_id ? &entry(*session_id) : nullptr;
        auto first = exchange(e, msg(w::GetEncapsulatedRequest{}));
        if (first.is<w::EncapsulatedResponseAck>())
        {
            if (first.as<w::EncapsulatedResponseAck>().inner)
                fail(Errc::MalformedMessage, "unexpected request in an empty acknowledgement");
            return;
        }
        expect(first, w::Code::EncapsulatedRequest);
        std::uint8_t request_id = first.as<w::EncapsulatedRequest>().request_id;
        w::Message inner = *first.as<w::EncapsulatedRequest>().inner;
        for (;;)
        {
            auto answer = serve_encap(inner, e);
            w::DeliverEncapsulatedResponse d;
            d.request_id = request_id;
            d.inner = w::Boxed(answer.msg);
            auto ack = exchange(e, msg(std::move(d)), answer.after_send);
            expect(ack, w::Code::EncapsulatedResponseAck);
            const auto& a = ack.as<w::EncapsulatedResponseAck>();
            if (!a.inner)
                return;
            request_id = a.request_id;
            inner = **a.inner;
        }
    }

    void heartbeat(std::uint32_t id)
    {
        auto& e = entry(id);
        require_established(e, "heartbeat");
        transact_session(e, msg(w::Heartbeat{}), w::Code::HeartbeatAck);
    }

    void request_key_update(std::uint32_t id, w::KeyUpdateOp op)
    {
        auto& e = entry(id);
        require_established(e, "request_key_update");
        if (op == w::KeyUpdateOp::VerifyNewKey)
            fail(Errc::InvalidArgument, "request UpdateKey or UpdateAllKeys");
        const std::uint8_t tag = next_tag++;
        auto rsp = transact_session(e, msg(w::KeyUpdate{op, tag}), w::Code::KeyUpdateAck);
        const auto& ack = rsp.as<w::KeyUpdateAck>();
        if (ack.op != op || ack.tag != tag)
            fail(Errc::MalformedMessage, "KEY_UPDATE_ACK does not match the request");
        session::update_keys(*provider, e.state, op, Direction::RequesterToResponder);
        try
        {
            auto vrsp = transact_session(e, msg(w::KeyUpdate{w::KeyUpdateOp::VerifyNewKey, tag}),
                                         w::Code::KeyUpdateAck);
            const auto& va = vrsp.as<w::KeyUpdateAck>();
            if (va.op != w::KeyUpdateOp::VerifyNewKey || va.tag != tag)
                fail(Errc::MalformedMessage, "verify acknowledgement mismatch");
        }
        catch (const Error& ex)
        {
            fail(Errc::VerifyNewKeyFailed, std::string("new key not confirmed: ") + ex.what());
        }
    }

    void end_session(std::uint32_t id)
    {
        auto& e = entry(id);
        if (e.state.phase == session::Phase::Terminated)
            return;
        if (e.state.phase == session::Phase::Handshaking)
        {
            e.state.terminate();
            return;
        }
        try
        {
            transact_session(e, msg(w::EndSession{}), w::Code::EndSessionAck);
        }
        catch (...)
        {
            e.state.terminate();
            throw;
        }
        e.state.terminate();
    }

    Bytes send_app_request(std::uint32_t id, ByteView payload)
    {
        auto& e = entry(id);
        require_established(e, "send_app_request");
        auto rsp = transact_session(e, msg(w::AppData{Bytes(payload.begin(), payload.end())}),
                                    w::Code::AppData);
        return rsp.as<w::AppData>().payload;
    }

    Bytes send_plain_app_request(ByteView payload)
    {
        channel->send_msg(w::encode_frame(w::FrameKind::RawApp, payload));
        auto f = receive_frame();
        if (f.kind == w::FrameKind::Spdm)
        {
            auto rsp = w::decode_message(f.payload);
            if (rsp.is<w::ErrorMsg>())
                raise_error(rsp);
            fail(Errc::MalformedMessage, "unexpected protocol message for a plain request");
        }
        if (f.kind != w::FrameKind::RawApp)
            fail(Errc::MalformedMessage, "expected a plain application frame");
        return std::move(f.payload);
    }

    void reset()
    {
        phase = ConnectionPhase::Reset;
        version = protocol::kVersionDiscovery;
        caps = 0;
        suite = {};
        vca.clear();
        auth_log.clear();
        meas_log.clear();
        encap_log.clear();
        digests.reset();
        for (auto& c : chains)
            c.reset();
        responder_key = {};
    }
};

Requester::Requester(RequesterConfig config, std::shared_ptr<crypto::CryptoProvider> provider,
                     std::shared_ptr<transport::Channel> channel) :
    impl_(std::make_unique<Impl>(std::move(config), std::move(provider), std::move(channel)))
{}

Requester::~Requester() = default;

CryptoSuite Requester::init_connection()
{
    return impl_->init_connection();
}

DigestResult Requester::fetch_digests()
{
    return impl_->fetch_digests();
}

crypto::CertificateChain Requester::fetch_certificate(std::uint8_t slot)
{
    return impl_->fetch_certificate(slot);
}

crypto::PublicKey Requester::challenge_authenticate(std::uint8_t slot)
{
    return impl_->challenge_authenticate(slot);
}

MeasurementResult Requester::fetch_measurements(std::optional<MeasurementMode> mode,
                                                std::uint8_t slot)
{
    return impl_->fetch_measurements(mode.value_or(impl_->cfg.measurement_mode), slot);
}

MeasurementResult Requester::fetch_measurement_block(std::uint8_t index, bool sign,
                                                     std::uint8_t slot)
{
    return impl_->fetch_measurement_block(index, sign, slot);
}

std::uint32_t Requester::establish_session(SessionMode mode, const Bytes& psk_hint)
{
    if (mode == SessionMode::Psk)
        return impl_->establish_psk_session(psk_hint);
    return impl_->establish_cert_session();
}

void Requester::process_encapsulated_requests(std::optional<std::uint32_t> session_id)
{
    impl_->process_encapsulated(session_id);
}

void Requester::heartbeat(std::uint32_t session_id)
{
    impl_->heartbeat(session_id);
}

void Requester::request_key_update(std::uint32_t session_id, w::KeyUpdateOp op)
{
    impl_->request_key_update(session_id, op);
}

void Requester::end_session(std::uint32_t session_id)
{
    impl_->end_session(session_id);
}

Bytes Requester::send_app_request(std::uint32_t session_id, ByteView payload)
{
    return impl_->send_app_request(session_id, payload);
}

Bytes Requester::send_plain_app_request(ByteView payload)
{
    return impl_->send_plain_app_request(payload);
}

void Requester::cache_chain(const crypto::CertificateChain& chain)
{
    if (impl_->suite.hash == HashAlgo::None)
        fail(Errc::InvalidPhase, "cache_chain requires a negotiated hash");
    impl_->cache[impl_->hash(chain.serialize())] = chain;
}

void Requester::reset()
{
    impl_->reset();
}

void Requester::set_exchange_hook(ExchangeHook hook)
{
    impl_->exchange_hook = std::move(hook);
}

void Requester::set_backoff_hook(BackoffHook hook)
{
    impl_->backoff = std::move(hook);
}

protocol::ConnectionPhase Requester::phase() const noexcept
{
    return impl_->phase;
}

const CryptoSuite& Requester::suite() const noexcept
{
    return impl_->suite;
}

std::uint8_t Requester::version() const noexcept
{
    return impl_->version;
}

std::uint32_t Requester::negotiated_capabilities() const noexcept
{
    return impl_->caps;
}

const session::TranscriptLog& Requester::connection_transcript() const noexcept
{
    return impl_->vca;
}

std::optional<session::TranscriptLog>
    Requester::session_transcript(std::uint32_t session_id) const
{
    auto it = impl_->sessions.find(session_id);
    if (it == impl_->sessions.end())
        return std::nullopt;
    return it->second.log;
}

const session::SessionState* Requester::session_state(std::uint32_t session_id) const
{
    auto it = impl_->sessions.find(session_id);
    return it == impl_->sessions.end() ? nullptr : &it->second.state;
}

std::vector<std::uint32_t> Requester::session_ids() const
{
    std::vector<std::uint32_t> ids;
    for (const auto& kv : impl_->sessions)
        ids.push_back(kv.first);
    return ids;
}

const crypto::PublicKey& Requester::responder_key() const noexcept
{
    return impl_->responder_key;
}

const std::vector<w::Code>& Requester::code_trace() const noexcept
{
    return impl_->trace;
}

void Requester::clear_code_trace() noexcept
{
    impl_->trace.clear();
}

transport::Channel& Requester::channel() noexcept
{
    return *impl_->channel;
}

#ifdef SPDMSIM_TEST_HOOKS
std::optional<session::SessionSecrets>
    Requester::export_session_secrets(std::uint32_t session_id) const
{
    auto it = impl_->sessions.find(session_id);
    if (it == impl_->sessions.end())
        return std::nullopt;
    return it->second.state.secrets;
}
#endif

} // namespace spdmsim
