// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/config.hpp>
#include <spdmsim/errors.hpp>
#include <spdmsim/protocol.hpp>
#include <spdmsim/transport.hpp>

#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <functional>

using namespace spdmsim;
namespace fs = std::filesystem;

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

struct TempDir
{
    fs::path path;
    TempDir(const char* tag)
    {
        path = fs::temp_directory_path() /
               (std::string("spdmsim-test-") + tag + "-" + std::to_string(::getpid()));
        fs::remove_all(path);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream(p) << text;
}

// Generated once: RSA key generation is slow.
const fs::path& fixtures()
{
    static TempDir dir("config");
    static const bool done = (config::generate_fixtures(dir.path), true);
    (void)done;
    return dir.path;
}

} // namespace

TEST_CASE("generated fixtures load back")
{
    const auto p = config::fixture_paths(fixtures());
    for (const auto& f : {p.responder_chain, p.responder_key, p.requester_chain, p.requester_key,
                          p.responder_config, p.requester_config})
    {
        CAPTURE(f);
        CHECK(fs::exists(f));
    }

    const auto setup = config::load_responder_setup(p.responder_config);
    REQUIRE(setup.slots.count(0) == 1);
    CHECK(setup.slots.at(0).chain.serialize().size() == protocol::kDefaultChainBytes);
    CHECK(setup.config.mutual_auth);
    CHECK(setup.config.supported_versions ==
          std::vector<std::uint8_t>{wire::kVersion10, wire::kVersion11});
    REQUIRE(setup.psk_table.size() == 1);
    CHECK(setup.psk_table.begin()->first == to_bytes("spdmsim-psk-0"));
    CHECK(setup.psk_table.begin()->second.size() == 48);
    CHECK(setup.trusted_requester_roots.size() == 1);
    CHECK_FALSE(setup.config.session_timeout.has_value());

    const auto rc = config::load_requester_config(p.requester_config);
    REQUIRE(rc.credential.has_value());
    CHECK(rc.credential->leaf_key.algorithm() == SigAlgo::RsaPss3072);
    CHECK(rc.psk_table == setup.psk_table);
    CHECK(rc.trusted_responder_roots.size() == 1);
    CHECK(rc.trusted_responder_roots[0] == setup.slots.at(0).chain.root());
    CHECK(rc.measurement_mode == MeasurementMode::AllAtOnce);
    CHECK(rc.cert_chunk_size == protocol::kDefaultCertChunk);
}

TEST_CASE("a responder built from fixtures serves a full exchange")
{
    const auto p = config::fixture_paths(fixtures());
    auto provider = std::make_shared<crypto::OpenSslProvider>();
    auto responder = config::build_responder(config::load_responder_setup(p.responder_config),
                                             provider);
    auto channel = std::make_shared<transport::LoopbackChannel>(
        [responder](ByteView f) { return responder->handle_frame(f); });
    Requester req(config::load_requester_config(p.requester_config), provider, channel);
    req.init_connection();
    req.fetch_digests();
    req.fetch_certificate(0);
    req.challenge_authenticate(0);
    const auto m = req.fetch_measurements();
    CHECK(m.count == 5);
    CHECK(m.signature_verified);
    const auto sid = req.establish_session(SessionMode::CertDhe);
    req.heartbeat(sid);
    req.end_session(sid);
    const auto psid = req.establish_session(SessionMode::Psk, to_bytes("spdmsim-psk-0"));
    req.end_session(psid);
}

TEST_CASE("config files override defaults and resolve relative paths")
{
    TempDir dir("override");
    fs::create_directories(dir.path / "sub");
    const auto p = config::fixture_paths(fixtures());
    fs::copy_file(p.responder_chain, dir.path / "sub" / "chain.pem");
    fs::copy_file(p.responder_key, dir.path / "sub" / "key.pem");
    write_file(dir.path / "sub" / "meas.json",
               R"([{"index":1,"type":1,"payload_hex":"00112233"},)"
               R"({"index":2,"payload_hex":"ff"}])");
    write_file(dir.path / "sub" / "rsp.json", R"({
        "versions": ["1.1"],
        "capabilities": ["Cert", "Chal", "MeasSig"],
        "algorithms": {"hash": ["SHA-384"], "aead": [49]},
        "mutual_auth": false,
        "max_sessions": 2,
        "allow_plain_app": false,
        "session_timeout_ms": 1500,
        "slots": [{"slot": 3, "chain": "chain.pem", "key": "key.pem"}],
        "measurements": "meas.json"
    })");
    const auto s = config::load_responder_setup(dir.path / "sub" / "rsp.json");
    CHECK(s.config.supported_versions == std::vector<std::uint8_t>{wire::kVersion11});
    CHECK(s.config.capability_flags == (wire::cap::Cert | wire::cap::Chal | wire::cap::MeasSig));
    CHECK(s.config.algorithm_menu.hash ==
          std::vector<std::uint16_t>{static_cast<std::uint16_t>(HashAlgo::Sha384)});
    CHECK(s.config.algorithm_menu.aead == std::vector<std::uint16_t>{0x31});
    CHECK_FALSE(s.config.mutual_auth);
    CHECK(s.config.max_sessions == 2);
    CHECK_FALSE(s.config.allow_plain_app);
    CHECK(s.config.session_timeout == std::chrono::milliseconds(1500));
    REQUIRE(s.slots.count(3) == 1);
    CHECK(s.slots.at(3).chain.slot == 3);
    REQUIRE(s.measurements.size() == 2);
    CHECK(s.measurements[0].payload == Bytes{0x00, 0x11, 0x22, 0x33});
    CHECK(s.measurements[1].block_type == 0x01);
    crypto::OpenSslProvider h;
    CHECK(s.measurements[1].digest == h.hash(HashAlgo::Sha384, Bytes{0xff}));
}

TEST_CASE("bad config files are reported")
{
    TempDir dir("bad");
    fs::create_directories(dir.path);
    CHECK(errc_of([&] { config::load_responder_setup(dir.path / "missing.json"); }) ==
          Errc::IoError);
    write_file(dir.path / "syntax.json", "{ not json");
    CHECK(errc_of([&] { config::load_requester_config(dir.path / "syntax.json"); }) ==
          Errc::InvalidArgument);
    write_file(dir.path / "caps.json", R"({"capabilities": ["Teleport"]})");
    CHECK(errc_of([&] { config::load_responder_setup(dir.path / "caps.json"); }) ==
          Errc::InvalidArgument);
    write_file(dir.path / "mode.json", R"({"measurement_mode": "sometimes"})");
    CHECK(errc_of([&] { config::load_requester_config(dir.path / "mode.json"); }) ==
          Errc::InvalidArgument);
    write_file(dir.path / "type.json", R"({"max_sessions": "many"})");
    CHECK(errc_of([&] { config::load_responder_setup(dir.path / "type.json"); }) ==
          Errc::InvalidArgument);
    write_file(dir.path / "alg.json", R"({"algorithms": {"hash": ["MD5"]}})");
    CHECK(errc_of([&] { config::load_responder_setup(dir.path / "alg.json"); }) ==
          Errc::InvalidArgument);
}

TEST_CASE("algorithm and capability names")
{
    CHECK(config::parse_algorithm("hash", algo_name(HashAlgo::Sha256)) == 0x0001);
    CHECK(config::parse_algorithm("responder_sig", algo_name(SigAlgo::EcdsaP384)) == 0x0012);
    CHECK(config::parse_algorithm("requester_sig", algo_name(SigAlgo::RsaPss3072)) == 0x0011);
    CHECK(config::parse_algorithm("dhe", algo_name(DheGroup::Secp384r1)) == 0x0021);
    CHECK(config::parse_algorithm("aead", algo_name(AeadAlgo::Aes256Gcm)) == 0x0031);
    CHECK(config::parse_algorithm("key_schedule", algo_name(KeySchedule::HkdfLadder)) == 0x0041);
    CHECK(errc_of([] { config::parse_algorithm("hash", algo_name(SigAlgo::EcdsaP384)); }) ==
          Errc::InvalidArgument);
    CHECK(errc_of([] { config::parse_algorithm("colour", "red"); }) == Errc::InvalidArgument);

    CHECK(config::parse_capabilities({}) == 0);
    CHECK(config::parse_capabilities({"Heartbeat", "KeyUpdate", "Heartbeat"}) ==
          (wire::cap::Heartbeat | wire::cap::KeyUpdate));
    CHECK(config::parse_capabilities({"Cert", "Chal", "MeasSig", "KeyEx", "Psk", "MutAuth",
                                      "Encap", "Heartbeat", "KeyUpdate", "Encrypt", "Mac"}) ==
          wire::cap::All);
    CHECK(errc_of([] { config::parse_capabilities({"cert"}); }) == Errc::InvalidArgument);
}

TEST_CASE("fixture generation into an unwritable place fails cleanly")
{
    TempDir dir("blocked");
    write_file(dir.path, "a file, not a directory");
    CHECK(errc_of([&] { config::generate_fixtures(dir.path / "inner"); }) == Errc::IoError);
    fs::remove(dir.path);
}
