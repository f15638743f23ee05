// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/crypto.hpp>
#include <spdmsim/errors.hpp>
#include <spdmsim/session.hpp>

#include <doctest.h>

#include <functional>
#include <limits>
#include <random>
#include <set>

using namespace spdmsim;
using namespace spdmsim::session;
namespace w = spdmsim::wire;

namespace
{

Errc errc_of(const std::function<void()>& f)
{
    try
    {
        f();
    }
    catch (const Error& e)
    {
        return e.code();
    }
    return Errc::Ok;
}

const crypto::OpenSslProvider& provider()
{
    static crypto::OpenSslProvider p;
    return p;
}

constexpr auto kReq = Direction::RequesterToResponder;
constexpr auto kRsp = Direction::ResponderToRequester;

SessionSecrets full_secrets(ByteView input, ByteView th1, ByteView th2)
{
    auto s = derive_handshake_secrets(provider(), input, th1, default_suite());
    derive_data_secrets(provider(), s, th2);
    return s;
}

SessionState established(std::uint32_t id = 0x00010002)
{
    SessionState st;
    st.session_id = id;
    st.suite = default_suite();
    st.secrets = full_secrets(Bytes(48, 0x11), Bytes(48, 0x22), Bytes(48, 0x33));
    st.activate();
    return st;
}

std::vector<Bytes> all_keys(const SessionSecrets& s)
{
    std::vector<Bytes> v;
    for (std::size_t d = 0; d < 2; ++d)
    {
        v.push_back(s.handshake_keys[d].key);
        v.push_back(s.handshake_keys[d].iv);
        v.push_back(s.finished_key[d]);
        if (s.has_data())
        {
            v.push_back(s.data_keys[d].key);
            v.push_back(s.data_keys[d].iv);
        }
    }
    return v;
}

} // namespace

TEST_CASE("transcript hashing")
{
    const auto& p = provider();
    TranscriptLog empty;
    empty.mark(Checkpoint::Vca);
    CHECK(transcript_hash(p, HashAlgo::Sha384, empty, Checkpoint::Vca) ==
          p.hash(HashAlgo::Sha384, {}));

    const auto a = w::make(w::GetVersion{});
    const auto b = w::make(w::Version{{0x10, 0x11}});
    TranscriptLog x, y, reordered;
    x.append(a);
    x.append(b);
    y.append(a);
    y.append(b);
    reordered.append(b);
    reordered.append(a);
    for (auto* log : {&x, &y, &reordered})
        log->mark(Checkpoint::Vca);
    CHECK(transcript_hash(p, HashAlgo::Sha384, x, Checkpoint::Vca) ==
          transcript_hash(p, HashAlgo::Sha384, y, Checkpoint::Vca));
    CHECK(transcript_hash(p, HashAlgo::Sha384, x, Checkpoint::Vca) !=
          transcript_hash(p, HashAlgo::Sha384, reordered, Checkpoint::Vca));

    Bytes concat = w::encode_message(a);
    append(concat, w::encode_message(b));
    CHECK(transcript_hash(p, HashAlgo::Sha384, x, Checkpoint::Vca) ==
          p.hash(HashAlgo::Sha384, concat));

    CHECK(errc_of([&] { transcript_hash(p, HashAlgo::Sha384, x, Checkpoint::Th1); }) ==
          Errc::UnknownCheckpoint);
}

TEST_CASE("transcript checkpoints are monotone and prefixes stay fixed")
{
    TranscriptLog log;
    log.append(Bytes{1, 2, 3});
    log.mark(Checkpoint::Vca);
    log.append(Bytes{4, 5});
    log.mark(Checkpoint::Th1);
    CHECK(errc_of([&] { log.mark_at(Checkpoint::Finish, 2); }) == Errc::InvalidArgument);
    CHECK(errc_of([&] { log.mark_at(Checkpoint::Th2, 99); }) == Errc::InvalidArgument);
    log.append(Bytes{6});
    CHECK(errc_of([&] { log.mark_at(Checkpoint::Vca, 6); }) == Errc::InvalidArgument);
    CHECK(log.prefix(Checkpoint::Vca).size() == 3);
    CHECK(log.prefix(Checkpoint::Th1).size() == 5);

    const auto branch = log.fork(Checkpoint::Vca);
    CHECK(branch.size() == 3);
    CHECK(branch.has(Checkpoint::Vca));
    CHECK_FALSE(branch.has(Checkpoint::Th1));
}

// Expected bytes come from a separate Python implementation of the HKDF
// ladder in docs/key-schedule.md, with input secret 0x01*48, TH1 0x02*48 and
// TH2 0x03*48.
TEST_CASE("key schedule matches the reference ladder")
{
    auto s = full_secrets(Bytes(48, 0x01), Bytes(48, 0x02), Bytes(48, 0x03));
    CHECK(to_hex(s.handshake_keys[0].key) ==
          "888addcd83b04a1daf924952f183e7f006a5bf8cf36981d7aba8de02d37ed6b9");
    CHECK(to_hex(s.handshake_keys[0].iv) == "d61a2f7c3e8c3c74061738ee");
    CHECK(to_hex(s.handshake_keys[1].key) ==
          "7c5cdd05d41176dd2b311a9c86be5175824925bcdbbb244ce90c6574ff6aeb4b");
    CHECK(to_hex(s.handshake_keys[1].iv) == "7f29e16a06e55af2c2f6b626");
    CHECK(to_hex(s.finished_key[0]) ==
          "5fb913abefe8740dc9a3d257defb0ec8d31e3ca988acffc1a2555b78a5a2dcb1"
          "560053fc709c419122484f349492b9b8");
    CHECK(to_hex(s.finished_key[1]) ==
          "959f077588d49090ddaf36b98f5112602efcc5897191ad187df6730d0e061d51"
          "800ec6edb85ab10c17865c183d342eed");
    CHECK(to_hex(s.data_keys[0].key) ==
          "f88d079d813e82551aaa76c4ece49bde50683e4a85fa13b742bdd8232a047703");
    CHECK(to_hex(s.data_keys[0].iv) == "1f8e78dab1d3ef776e4ea549");
    CHECK(to_hex(s.data_keys[1].key) ==
          "3f42c86b6d936a56126884cf5ae16842f3b3c86da146f8a429fb87a8db66a8db");
    CHECK(to_hex(s.data_keys[1].iv) == "fc57c197c8f1ec980329bff0");

    SessionState st;
    st.suite = default_suite();
    st.secrets = s;
    st.activate();
    update_keys(provider(), st, w::KeyUpdateOp::UpdateKey, kReq);
    CHECK(to_hex(st.secrets.data_keys[0].key) ==
          "c72e554aecced08136b1b60eb03e66f2327df05291e8abf21bca11a2dab6a083");
    update_keys(provider(), st, w::KeyUpdateOp::UpdateKey, kReq);
    CHECK(to_hex(st.secrets.data_keys[0].key) ==
          "84b1081b7fa699b260398f0bfb4a76853636bf28a02fe3c4b0a5da020fbb4017");
    CHECK(st.secrets.update_generation[0] == 2);
    CHECK(st.secrets.update_generation[1] == 0);
    CHECK(st.secrets.data_keys[1] == s.data_keys[1]);
    CHECK(st.secrets.data_keys[0].iv == s.data_keys[0].iv);

    TranscriptLog log;
    log.append(as_view("transcript"));
    log.mark(Checkpoint::Finish);
    CHECK(to_hex(compute_verify_data(provider(), s, kReq, log, Checkpoint::Finish)) ==
          "4db9eec75527acc864140ff2503ae2fc8ad6a0c890927cb43f8f544c7c3ba5f9"
          "a436e121c48dd4116652073054908175");
}

TEST_CASE("derivation is deterministic, direction-separated and input-sensitive")
{
    const Bytes input(48, 0x44), th1(48, 0x55), th2(48, 0x66);
    const auto a = full_secrets(input, th1, th2);
    const auto b = full_secrets(input, th1, th2);
    CHECK(a == b);
    CHECK(a.handshake_keys[0].key != a.handshake_keys[1].key);
    CHECK(a.data_keys[0].key != a.data_keys[1].key);
    CHECK(a.finished_key[0] != a.finished_key[1]);

    for (std::size_t bit = 0; bit < 48 * 8; bit += 37)
    {
        auto th1x = th1;
        th1x[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        const auto c = full_secrets(input, th1x, th2);
        const auto ka = all_keys(a);
        const auto kc = all_keys(c);
        // TH1 feeds the handshake keys; the data keys depend on it only
        // through the shared handshake secret, which TH1 does not touch.
        for (std::size_t i = 0; i < ka.size(); ++i)
        {
            if (i % 5 < 3)
                CHECK(ka[i] != kc[i]);
        }
        auto th2x = th2;
        th2x[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        const auto d = full_secrets(input, th1, th2x);
        CHECK(d.data_keys[0].key != a.data_keys[0].key);
        CHECK(d.data_keys[1].key != a.data_keys[1].key);
        CHECK(d.data_keys[0].iv != a.data_keys[0].iv);
        CHECK(d.handshake_keys == a.handshake_keys);
    }

    CHECK(errc_of([&] { derive_handshake_secrets(provider(), {}, th1, default_suite()); }) ==
          Errc::InvalidArgument);
    SessionSecrets none;
    CHECK(errc_of([&] { derive_data_secrets(provider(), none, th2); }) ==
          Errc::MissingHandshakeSecret);
    TranscriptLog log;
    log.mark(Checkpoint::Finish);
    CHECK(errc_of([&] { compute_verify_data(provider(), none, kReq, log, Checkpoint::Finish); }) ==
          Errc::MissingHandshakeSecret);
}

TEST_CASE("verify_data binds the whole transcript")
{
    const auto s = full_secrets(Bytes(48, 7), Bytes(48, 8), Bytes(48, 9));
    TranscriptLog a, b, missing;
    const auto m1 = w::make(w::GetVersion{});
    const auto m2 = w::make(w::Version{{0x11}});
    a.append(m1);
    a.append(m2);
    b.append(m1);
    b.append(m2);
    missing.append(m1);
    for (auto* log : {&a, &b, &missing})
        log->mark(Checkpoint::Finish);
    const auto va = compute_verify_data(provider(), s, kReq, a, Checkpoint::Finish);
    CHECK(va == compute_verify_data(provider(), s, kReq, b, Checkpoint::Finish));
    CHECK(va == compute_verify_data(provider(), s, kReq, a, Checkpoint::Finish));
    CHECK(va != compute_verify_data(provider(), s, kReq, missing, Checkpoint::Finish));
    CHECK(va != compute_verify_data(provider(), s, kRsp, a, Checkpoint::Finish));
}

TEST_CASE("key updates")
{
    auto st = established();
    const auto before = st.secrets.data_keys;
    CHECK(errc_of([&] { update_keys(provider(), st, w::KeyUpdateOp::VerifyNewKey, kReq); }) ==
          Errc::InvalidArgument);
    update_keys(provider(), st, w::KeyUpdateOp::UpdateAllKeys, kReq);
    CHECK(st.secrets.data_keys[0].key != before[0].key);
    CHECK(st.secrets.data_keys[1].key != before[1].key);
    CHECK(st.secrets.update_generation == std::array<std::uint32_t, 2>{1, 1});

    auto one = established();
    auto two = established();
    update_keys(provider(), one, w::KeyUpdateOp::UpdateKey, kRsp);
    update_keys(provider(), two, w::KeyUpdateOp::UpdateKey, kRsp);
    update_keys(provider(), two, w::KeyUpdateOp::UpdateKey, kRsp);
    CHECK(one.secrets.data_keys[1].key != two.secrets.data_keys[1].key);

    SessionState hs;
    hs.secrets = derive_handshake_secrets(provider(), Bytes(48, 1), Bytes(48, 2), default_suite());
    CHECK(errc_of([&] { update_keys(provider(), hs, w::KeyUpdateOp::UpdateKey, kReq); }) ==
          Errc::InvalidPhase);
}

TEST_CASE("a record sealed before an update does not open after it")
{
    auto sender = established();
    auto receiver = established();
    const auto rec = seal_record(provider(), sender, kReq, as_view("old"));
    update_keys(provider(), receiver, w::KeyUpdateOp::UpdateKey, kReq);
    CHECK(errc_of([&] { open_record(provider(), receiver, kReq, rec); }) == Errc::DecryptError);
    CHECK(receiver.seq_in_expected[0] == 0);

    update_keys(provider(), sender, w::KeyUpdateOp::UpdateKey, kReq);
    const auto fresh = seal_record(provider(), sender, kReq, as_view("new"));
    CHECK(fresh.seq_num == 1);
    // The sender's counter moved past 0, so the receiver sees a gap only
    // after authenticating the record.
    CHECK(errc_of([&] { open_record(provider(), receiver, kReq, fresh); }) == Errc::SequenceGap);
}

TEST_CASE("record sequence contract")
{
    auto tx = established();
    auto rx = established();
    std::vector<w::SecuredRecord> sent;
    for (int i = 0; i < 1000; ++i)
    {
        const Bytes msg{static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(i >> 8)};
        auto rec = seal_record(provider(), tx, kRsp, msg);
        REQUIRE(rec.seq_num == static_cast<std::uint64_t>(i));
        REQUIRE(open_record(provider(), rx, kRsp, rec) == msg);
        sent.push_back(std::move(rec));
    }
    CHECK(tx.seq_out[1] == 1000);
    CHECK(rx.seq_in_expected[1] == 1000);

    for (std::size_t i : {std::size_t{0}, std::size_t{500}, std::size_t{999}})
        CHECK(errc_of([&] { open_record(provider(), rx, kRsp, sent[i]); }) == Errc::ReplayDetected);

    const auto skipped = seal_record(provider(), tx, kRsp, as_view("a"));
    const auto next = seal_record(provider(), tx, kRsp, as_view("b"));
    CHECK(errc_of([&] { open_record(provider(), rx, kRsp, next); }) == Errc::SequenceGap);
    CHECK(open_record(provider(), rx, kRsp, skipped) == to_bytes("a"));
    CHECK(open_record(provider(), rx, kRsp, next) == to_bytes("b"));
}

TEST_CASE("records are bound to header, direction and key")
{
    auto tx = established();
    auto rx = established();
    const auto rec = seal_record(provider(), tx, kReq, as_view("payload"));

    auto other_id = rec;
    other_id.session_id ^= 1;
    CHECK(errc_of([&] { open_record(provider(), rx, kReq, other_id); }) == Errc::DecryptError);

    auto other_seq = rec;
    other_seq.seq_num = 7;
    CHECK(errc_of([&] { open_record(provider(), rx, kReq, other_seq); }) == Errc::DecryptError);

    CHECK(errc_of([&] { open_record(provider(), rx, kRsp, rec); }) == Errc::DecryptError);

    auto truncated = rec;
    truncated.ciphertext_and_tag.resize(kAeadTagSize - 1);
    CHECK(errc_of([&] { open_record(provider(), rx, kReq, truncated); }) == Errc::DecryptError);

    auto other_session = established(0x00030004);
    CHECK(errc_of([&] { open_record(provider(), other_session, kReq, rec); }) ==
          Errc::DecryptError);
    CHECK(rx.seq_in_expected[0] == 0);
    CHECK(open_record(provider(), rx, kReq, rec) == to_bytes("payload"));
}

TEST_CASE("phase rules for records")
{
    SessionState hs;
    hs.session_id = 5;
    hs.suite = default_suite();
    CHECK(errc_of([&] { seal_record(provider(), hs, kReq, {}); }) == Errc::MissingHandshakeSecret);
    hs.secrets = derive_handshake_secrets(provider(), Bytes(48, 3), Bytes(48, 4), default_suite());
    auto hs_peer = hs;
    const auto rec = seal_record(provider(), hs, kReq, as_view("finish"));
    CHECK(open_record(provider(), hs_peer, kReq, rec) == to_bytes("finish"));
    CHECK(errc_of([&] { hs.activate(); }) == Errc::MissingHandshakeSecret);

    derive_data_secrets(provider(), hs.secrets, Bytes(48, 5));
    hs.activate();
    CHECK(hs.seq_out == std::array<std::uint64_t, 2>{0, 0});
    CHECK(errc_of([&] { hs.activate(); }) == Errc::InvalidPhase);
    // Handshake-key records do not open under the data keys.
    CHECK(errc_of([&] { open_record(provider(), hs, kReq, rec); }) == Errc::DecryptError);

    hs.terminate();
    CHECK(hs.phase == Phase::Terminated);
    CHECK(hs.secrets.data_keys[0].key.empty());
    CHECK(errc_of([&] { seal_record(provider(), hs, kReq, {}); }) == Errc::InvalidPhase);
    CHECK(errc_of([&] { open_record(provider(), hs, kReq, rec); }) == Errc::InvalidPhase);
    CHECK(errc_of([&] { update_keys(provider(), hs, w::KeyUpdateOp::UpdateKey, kReq); }) ==
          Errc::InvalidPhase);
    hs.terminate();
}

TEST_CASE("sequence numbers never wrap")
{
    auto st = established();
    st.seq_out[0] = std::numeric_limits<std::uint64_t>::max() - 1;
    const auto last = seal_record(provider(), st, kReq, {});
    CHECK(last.seq_num == std::numeric_limits<std::uint64_t>::max() - 1);
    CHECK(errc_of([&] { seal_record(provider(), st, kReq, {}); }) == Errc::SequenceExhausted);
}

TEST_CASE("record nonces never repeat within a key generation")
{
    auto st = established();
    std::set<std::pair<std::uint32_t, Bytes>> seen[2];
    std::mt19937_64 rng(31);
    for (int i = 0; i < 2000; ++i)
    {
        const auto d = (rng() & 1) ? kReq : kRsp;
        if (rng() % 100 == 0)
            update_keys(provider(), st, w::KeyUpdateOp::UpdateKey, d);
        const auto& keys = active_keys(st, d);
        const auto nonce = record_nonce(keys.iv, st.seq_out[index(d)]);
        const auto gen = st.secrets.update_generation[index(d)];
        seal_record(provider(), st, d, as_view("x"));
        CHECK(seen[index(d)].emplace(gen, nonce).second);
    }
}

TEST_CASE("record nonce layout")
{
    const Bytes iv(12, 0xF0);
    const auto n = record_nonce(iv, 0x0102030405060708);
    CHECK(n == Bytes{0xF8, 0xF7, 0xF6, 0xF5, 0xF4, 0xF3, 0xF2, 0xF1, 0xF0, 0xF0, 0xF0, 0xF0});
    CHECK(record_nonce(iv, 0) == iv);
    CHECK(errc_of([&] { record_nonce(Bytes(11), 1); }) == Errc::InvalidArgument);

    const Bytes label = hkdf_label(32, "key", Bytes{0xAA});
    CHECK(label == to_bytes(std::string("\x20\x00spdmsim1.1 key\xAA", 17)));
}
