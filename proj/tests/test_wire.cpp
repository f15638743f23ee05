// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include "message_gen.hpp"

#include <spdmsim/errors.hpp>
#include <spdmsim/wire.hpp>

#include <doctest.h>

#include <functional>
#include <random>
#include <set>

using namespace spdmsim;
using namespace spdmsim::testing;
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

Errc decode_errc(ByteView data)
{
    return errc_of([&] { w::decode_message(data); });
}

} // namespace

TEST_CASE("generated messages of every variant round trip")
{
    std::mt19937_64 rng(0x5eed);
    std::set<w::Code> codes;
    for (std::size_t i = 0; i < 12000; ++i)
    {
        const auto variant = i % kVariantCount;
        const auto m = random_message(rng, variant);
        REQUIRE(m.body.index() == variant);
        const auto enc = w::encode_message(m);
        CHECK(enc[1] == static_cast<std::uint8_t>(m.code()));
        const auto dec = w::decode_message(enc);
        REQUIRE(dec == m);
        CHECK(w::encode_message(dec) == enc);
        codes.insert(m.code());
    }
    CHECK(codes.size() == kVariantCount);
}

TEST_CASE("every proper prefix of a valid encoding is rejected")
{
    std::mt19937_64 rng(7);
    for (std::size_t i = 0; i < 40 * kVariantCount; ++i)
    {
        const auto enc = w::encode_message(random_message(rng, i % kVariantCount));
        for (std::size_t n = 0; n < enc.size(); ++n)
            REQUIRE(decode_errc(ByteView(enc).first(n)) == Errc::MalformedMessage);
    }
}

TEST_CASE("trailing bytes are rejected")
{
    std::mt19937_64 rng(8);
    for (std::size_t v = 0; v < kVariantCount; ++v)
    {
        auto enc = w::encode_message(random_message(rng, v));
        enc.push_back(0);
        CHECK(decode_errc(enc) == Errc::MalformedMessage);
    }
}

TEST_CASE("encoding is deterministic")
{
    std::mt19937_64 rng(9);
    for (std::size_t v = 0; v < kVariantCount; ++v)
    {
        const auto m = random_message(rng, v);
        CHECK(w::encode_message(m) == w::encode_message(m));
    }
}

TEST_CASE("random corruption never escapes the error contract")
{
    std::mt19937_64 rng(10);
    std::uniform_int_distribution<int> byte(0, 255);
    for (std::size_t i = 0; i < 3000; ++i)
    {
        auto enc = w::encode_message(random_message(rng, i % kVariantCount));
        const auto pos = std::uniform_int_distribution<std::size_t>(0, enc.size() - 1)(rng);
        enc[pos] = static_cast<std::uint8_t>(byte(rng));
        try
        {
            const auto m = w::decode_message(enc);
            CHECK(w::encode_message(m) == enc);
        }
        catch (const Error& e)
        {
            CHECK(e.code() != Errc::Ok);
        }
    }
}

TEST_CASE("heartbeat bytes")
{
    const auto enc = w::encode_message(w::make(w::Heartbeat{}));
    CHECK(enc == Bytes{w::kVersion11, 0xE8, 0, 0});
    CHECK(w::decode_message(enc).is<w::Heartbeat>());
}

TEST_CASE("GET_CERTIFICATE layout and two-byte truncation")
{
    const auto enc = w::encode_message(w::make(w::GetCertificate{3, 0x01020304, 0x400}));
    CHECK(enc == Bytes{0x11, 0x82, 3, 0, 4, 3, 2, 1, 0, 4, 0, 0});
    CHECK(decode_errc(ByteView(enc).first(2)) == Errc::MalformedMessage);
}

TEST_CASE("header violations map to their errors")
{
    auto enc = w::encode_message(w::make(w::GetVersion{}));
    SUBCASE("unknown code byte")
    {
        enc[1] = 0x99;
        CHECK(decode_errc(enc) == Errc::UnsupportedRequest);
    }
    SUBCASE("unknown version byte")
    {
        enc[0] = 0x13;
        CHECK(decode_errc(enc) == Errc::VersionMismatch);
    }
    SUBCASE("nonzero reserved param")
    {
        enc[2] = 1;
        CHECK(decode_errc(enc) == Errc::MalformedMessage);
    }
    SUBCASE("slot index beyond the slot table")
    {
        auto gc = w::encode_message(w::make(w::GetCertificate{0, 0, 16}));
        gc[2] = w::kMaxSlots;
        CHECK(decode_errc(gc) == Errc::MalformedMessage);
    }
    SUBCASE("unknown key update operation")
    {
        auto ku = w::encode_message(w::make(w::KeyUpdate{}));
        ku[2] = 7;
        CHECK(decode_errc(ku) == Errc::MalformedMessage);
    }
    SUBCASE("flag params accept only 0 or 1")
    {
        auto gm = w::encode_message(w::make(w::GetMeasurements{}));
        gm[2] = 2;
        CHECK(decode_errc(gm) == Errc::MalformedMessage);
    }
}

TEST_CASE("every error code survives a round trip")
{
    for (auto code : {w::ErrorCode::InvalidRequest, w::ErrorCode::Busy,
                      w::ErrorCode::UnexpectedRequest, w::ErrorCode::DecryptError,
                      w::ErrorCode::UnsupportedRequest, w::ErrorCode::VersionMismatch,
                      w::ErrorCode::MalformedMessage})
    {
        const auto m = w::make_error(code, w::kVersion11, "detail");
        const auto back = w::decode_message(w::encode_message(m));
        CHECK(back.as<w::ErrorMsg>().code == code);
        CHECK(back == m);
    }
    auto enc = w::encode_message(w::make_error(w::ErrorCode::Busy));
    enc[2] = 0x02;
    CHECK(decode_errc(enc) == Errc::MalformedMessage);
}

TEST_CASE("encoder refuses inconsistent or oversized fields")
{
    w::Digests d;
    d.slot_mask = 0b11;
    d.digests = {Bytes(48)};
    CHECK(errc_of([&] { w::encode_message(w::make(d)); }) == Errc::EncodingOverflow);

    w::FinishRsp f;
    f.verify_data.resize(0x10000);
    CHECK(errc_of([&] { w::encode_message(w::make(f)); }) == Errc::EncodingOverflow);
    f.verify_data.resize(0xFFFF);
    CHECK(w::decode_message(w::encode_message(w::make(f))) == w::make(f));

    w::GetCertificate gc;
    gc.slot = w::kMaxSlots;
    CHECK(errc_of([&] { w::encode_message(w::make(gc)); }) == Errc::MalformedMessage);
}

TEST_CASE("encapsulation nesting is bounded")
{
    w::Message m = w::make(w::Heartbeat{});
    for (int i = 0; i < 4; ++i)
        m = w::make(w::EncapsulatedRequest{1, w::Boxed(m)});
    CHECK(w::decode_message(w::encode_message(m)) == m);
    m = w::make(w::EncapsulatedRequest{1, w::Boxed(m)});
    CHECK(decode_errc(w::encode_message(m)) == Errc::MalformedMessage);
}

TEST_CASE("secured record codec")
{
    std::mt19937_64 rng(11);
    for (int i = 0; i < 500; ++i)
    {
        w::SecuredRecord r;
        r.session_id = static_cast<std::uint32_t>(rng());
        r.seq_num = rng();
        r.ciphertext_and_tag.resize(16 + rng() % 2048);
        for (auto& b : r.ciphertext_and_tag)
            b = static_cast<std::uint8_t>(rng());
        const auto enc = w::encode_secured_record(r);
        REQUIRE(enc.size() == w::kRecordHeaderSize + r.ciphertext_and_tag.size());
        CHECK(w::decode_secured_record(enc) == r);
        for (std::size_t n : {std::size_t{0}, std::size_t{1}, w::kRecordHeaderSize, enc.size() - 1})
            CHECK(errc_of([&] { w::decode_secured_record(ByteView(enc).first(n)); }) ==
                  Errc::MalformedMessage);
    }

    w::SecuredRecord kib{0x01020304, 0x1122334455667788, Bytes(1024, 0xAB)};
    const auto enc = w::encode_secured_record(kib);
    CHECK(Bytes(enc.begin(), enc.begin() + 16) ==
          Bytes{4, 3, 2, 1, 0x88, 0x77, 0x66, 0x55, 0x44, 0x33, 0x22, 0x11, 0, 4, 0, 0});
    CHECK(w::decode_secured_record(enc) == kib);

    auto extra = enc;
    extra.push_back(0);
    CHECK(errc_of([&] { w::decode_secured_record(extra); }) == Errc::MalformedMessage);

    auto header = w::record_header(1, 0, 32);
    CHECK(errc_of([&] { w::decode_secured_record(header); }) == Errc::MalformedMessage);

    w::SecuredRecord short_tag{1, 0, Bytes(15)};
    CHECK(errc_of([&] { w::encode_secured_record(short_tag); }) == Errc::MalformedMessage);
}

TEST_CASE("transport frames")
{
    const Bytes payload{1, 2, 3};
    for (auto kind : {w::FrameKind::RawApp, w::FrameKind::Spdm, w::FrameKind::Secured})
    {
        const auto f = w::decode_frame(w::encode_frame(kind, payload));
        CHECK(f.kind == kind);
        CHECK(f.payload == payload);
    }
    CHECK(errc_of([] { w::decode_frame(Bytes{}); }) == Errc::MalformedMessage);
    CHECK(errc_of([] { w::decode_frame(Bytes{0x09, 1}); }) == Errc::MalformedMessage);
}

TEST_CASE("code names and known codes")
{
    std::mt19937_64 rng(12);
    for (std::size_t v = 0; v < kVariantCount; ++v)
    {
        const auto c = random_message(rng, v).code();
        CHECK(w::is_known_code(static_cast<std::uint8_t>(c)));
        CHECK(std::string(w::code_name(c)) != "UNKNOWN");
    }
    CHECK_FALSE(w::is_known_code(0x00));
    CHECK(w::is_supported_version(w::kVersion10));
    CHECK_FALSE(w::is_supported_version(0x12));
}
