// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/config.hpp>
#include <spdmsim/errors.hpp>
#include <spdmsim/protocol.hpp>

#include <json.hpp>

#include <algorithm>
#include <fstream>

namespace spdmsim::config
{

namespace fs = std::filesystem;
using nlohmann::json;

namespace
{

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        fail(Errc::IoError, "cannot open " + path.string());
    try
    {
        return json::parse(in);
    }
    catch (const json::exception& e)
    {
        fail(Errc::InvalidArgument, path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& doc)
{
    std::ofstream out(path);
    out << doc.dump(2) << '\n';
    if (!out)
        fail(Errc::IoError, "cannot write " + path.string());
}

fs::path resolve(const fs::path& base, const std::string& p)
{
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

template <typename T>
T get_or(const json& doc, const char* key, T fallback)
{
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null())
        return fallback;
    try
    {
        return it->get<T>();
    }
    catch (const json::exception& e)
    {
        fail(Errc::InvalidArgument, std::string("config key '") + key + "': " + e.what());
    }
}

const std::vector<std::pair<const char*, std::uint32_t>> kCapNames = {
    {"Cert", wire::cap::Cert},         {"Chal", wire::cap::Chal},
    {"MeasSig", wire::cap::MeasSig},   {"KeyEx", wire::cap::KeyEx},
    {"Psk", wire::cap::Psk},           {"MutAuth", wire::cap::MutAuth},
    {"Encap", wire::cap::Encap},       {"Heartbeat", wire::cap::Heartbeat},
    {"KeyUpdate", wire::cap::KeyUpdate}, {"Encrypt", wire::cap::Encrypt},
    {"Mac", wire::cap::Mac},
};

std::vector<std::uint16_t> parse_list(const json& algs, const char* field,
                                      const std::vector<std::uint16_t>& fallback)
{
    auto it = algs.find(field);
    if (it == algs.end())
        return fallback;
    std::vector<std::uint16_t> out;
    for (const auto& v : *it)
    {
        if (v.is_number_unsigned())
            out.push_back(v.get<std::uint16_t>());
        else
            out.push_back(parse_algorithm(field, v.get<std::string>()));
    }
    return out;
}

AlgorithmMenu parse_menu(const json& doc)
{
    AlgorithmMenu menu = default_menu();
    auto it = doc.find("algorithms");
    if (it == doc.end())
        return menu;
    menu.hash = parse_list(*it, "hash", menu.hash);
    menu.responder_sig = parse_list(*it, "responder_sig", menu.responder_sig);
    menu.requester_sig = parse_list(*it, "requester_sig", menu.requester_sig);
    menu.dhe = parse_list(*it, "dhe", menu.dhe);
    menu.aead = parse_list(*it, "aead", menu.aead);
    menu.key_schedule = parse_list(*it, "key_schedule", menu.key_schedule);
    return menu;
}

std::vector<std::uint8_t> parse_versions(const json& doc, std::vector<std::uint8_t> fallback)
{
    auto it = doc.find("versions");
    if (it == doc.end())
        return fallback;
    std::vector<std::uint8_t> out;
    for (const auto& v : *it)
    {
        // "1.1" or 0x11.
        if (v.is_string())
        {
            const auto s = v.get<std::string>();
            if (s.size() != 3 || s[1] != '.' || !isdigit(s[0]) || !isdigit(s[2]))
                fail(Errc::InvalidArgument, "version '" + s + "' is not of the form M.m");
            out.push_back(static_cast<std::uint8_t>((s[0] - '0') << 4 | (s[2] - '0')));
        }
        else
        {
            out.push_back(v.get<std::uint8_t>());
        }
    }
    if (out.empty())
        fail(Errc::InvalidArgument, "at least one version is required");
    return out;
}

std::uint32_t caps_of(const json& doc, std::uint32_t fallback)
{
    auto it = doc.find("capabilities");
    if (it == doc.end())
        return fallback;
    if (it->is_number_unsigned())
        return it->get<std::uint32_t>();
    return parse_capabilities(it->get<std::vector<std::string>>());
}

std::map<Bytes, Bytes> parse_psk(const json& doc)
{
    std::map<Bytes, Bytes> out;
    auto it = doc.find("psk");
    if (it == doc.end())
        return out;
    for (const auto& e : *it)
        out[to_bytes(e.at("hint").get<std::string>())] = from_hex(e.at("secret_hex").get<std::string>());
    return out;
}

std::vector<Bytes> parse_roots(const json& doc, const char* key, const fs::path& base)
{
    std::vector<Bytes> out;
    auto it = doc.find(key);
    if (it == doc.end())
        return out;
    // Each entry is a chain PEM; its first certificate is the root.
    for (const auto& p : *it)
        out.push_back(crypto::read_chain_pem(resolve(base, p.get<std::string>())).root());
    return out;
}

} // namespace

std::uint16_t parse_algorithm(const std::string& field, const std::string& name)
{
    auto match = [&](auto algo) { return algo_name(algo) == name; };
    if (field == "hash")
    {
        for (auto a : {HashAlgo::Sha256, HashAlgo::Sha384})
            if (match(a))
                return static_cast<std::uint16_t>(a);
    }
    else if (field == "responder_sig" || field == "requester_sig")
    {
        for (auto a : {SigAlgo::RsaPss3072, SigAlgo::EcdsaP384})
            if (match(a))
                return static_cast<std::uint16_t>(a);
    }
    else if (field == "dhe")
    {
        if (match(DheGroup::Secp384r1))
            return static_cast<std::uint16_t>(DheGroup::Secp384r1);
    }
    else if (field == "aead")
    {
        if (match(AeadAlgo::Aes256Gcm))
            return static_cast<std::uint16_t>(AeadAlgo::Aes256Gcm);
    }
    else if (field == "key_schedule")
    {
        if (match(KeySchedule::HkdfLadder))
            return static_cast<std::uint16_t>(KeySchedule::HkdfLadder);
    }
    fail(Errc::InvalidArgument, "unknown " + field + " algorithm '" + name + "'");
}

std::uint32_t parse_capabilities(const std::vector<std::string>& names)
{
    std::uint32_t bits = 0;
    for (const auto& n : names)
    {
        auto it = std::find_if(kCapNames.begin(), kCapNames.end(),
                               [&](const auto& p) { return n == p.first; });
        if (it == kCapNames.end())
            fail(Errc::InvalidArgument, "unknown capability '" + n + "'");
        bits |= it->second;
    }
    return bits;
}

crypto::Credential load_credential(const fs::path& chain_pem, const fs::path& key_pem)
{
    crypto::Credential c;
    c.chain = crypto::read_chain_pem(chain_pem);
    c.leaf_key = crypto::read_private_key_pem(key_pem);
    return c;
}

std::vector<wire::MeasurementBlock> load_measurements(const fs::path& path,
                                                      const crypto::CryptoProvider& provider)
{
    std::vector<wire::MeasurementBlock> out;
    for (const auto& e : read_json(path))
    {
        wire::MeasurementBlock b;
        b.index = e.at("index").get<std::uint8_t>();
        b.block_type = get_or<std::uint8_t>(e, "type", 0x01);
        b.payload = from_hex(e.at("payload_hex").get<std::string>());
        out.push_back(protocol::with_digest(b, provider, HashAlgo::Sha384));
    }
    return out;
}

ResponderSetup load_responder_setup(const fs::path& path)
{
    const auto doc = read_json(path);
    const auto base = path.parent_path();
    ResponderSetup s;
    auto& c = s.config;
    c.supported_versions = parse_versions(doc, c.supported_versions);
    c.capability_flags = caps_of(doc, c.capability_flags);
    c.algorithm_menu = parse_menu(doc);
    c.mutual_auth = get_or(doc, "mutual_auth", c.mutual_auth);
    c.challenge_mutual_auth = get_or(doc, "challenge_mutual_auth", c.challenge_mutual_auth);
    c.max_sessions = get_or(doc, "max_sessions", c.max_sessions);
    c.allow_plain_app = get_or(doc, "allow_plain_app", c.allow_plain_app);
    if (auto ms = get_or<std::int64_t>(doc, "session_timeout_ms", -1); ms >= 0)
        c.session_timeout = std::chrono::milliseconds(ms);
    if (auto it = doc.find("slots"); it != doc.end())
    {
        for (const auto& e : *it)
        {
            const auto slot = get_or<std::uint8_t>(e, "slot", 0);
            auto cred = load_credential(resolve(base, e.at("chain").get<std::string>()),
                                        resolve(base, e.at("key").get<std::string>()));
            cred.chain.slot = slot;
            s.slots[slot] = std::move(cred);
        }
    }
    s.psk_table = parse_psk(doc);
    s.trusted_requester_roots = parse_roots(doc, "trusted_requester_roots", base);
    if (auto m = get_or<std::string>(doc, "measurements", ""); !m.empty())
    {
        crypto::OpenSslProvider hasher;
        s.measurements = load_measurements(resolve(base, m), hasher);
    }
    return s;
}

RequesterConfig load_requester_config(const fs::path& path)
{
    const auto doc = read_json(path);
    const auto base = path.parent_path();
    RequesterConfig c;
    c.supported_versions = parse_versions(doc, c.supported_versions);
    c.capability_flags = caps_of(doc, c.capability_flags);
    c.algorithm_menu = parse_menu(doc);
    c.trusted_responder_roots = parse_roots(doc, "trusted_responder_roots", base);
    if (auto it = doc.find("credential"); it != doc.end() && !it->is_null())
        c.credential = load_credential(resolve(base, it->at("chain").get<std::string>()),
                                       resolve(base, it->at("key").get<std::string>()));
    c.psk_table = parse_psk(doc);
    const auto mode = get_or<std::string>(doc, "measurement_mode", "all-at-once");
    if (mode == "one-by-one")
        c.measurement_mode = MeasurementMode::OneByOne;
    else if (mode != "all-at-once")
        fail(Errc::InvalidArgument, "measurement_mode must be all-at-once or one-by-one");
    c.cert_chunk_size = get_or(doc, "cert_chunk_size", c.cert_chunk_size);
    c.timeout = transport::Millis(get_or<std::int64_t>(doc, "timeout_ms", c.timeout.count()));
    c.busy_retries = get_or(doc, "busy_retries", c.busy_retries);
    c.use_cache = get_or(doc, "use_cache", c.use_cache);
    return c;
}

std::shared_ptr<Responder> build_responder(const ResponderSetup& setup,
                                           std::shared_ptr<crypto::CryptoProvider> provider)
{
    auto r = std::make_shared<Responder>(setup.config, provider);
    for (const auto& [slot, cred] : setup.slots)
        r->provision_slot(slot, cred);
    r->provision_measurements(setup.measurements.empty()
                                  ? protocol::default_measurements(*provider)
                                  : setup.measurements);
    for (const auto& [hint, secret] : setup.psk_table)
        r->provision_psk(hint, secret);
    for (const auto& root : setup.trusted_requester_roots)
        r->trust_requester_root(root);
    return r;
}

FixturePaths fixture_paths(const fs::path& dir)
{
    return {dir / "responder_chain.pem", dir / "responder_key.pem",
            dir / "requester_chain.pem", dir / "requester_key.pem",
            dir / "responder.json",      dir / "requester.json"};
}

FixturePaths generate_fixtures(const fs::path& dir, const std::string& psk_hint)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        fail(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
    const auto p = fixture_paths(dir);

    crypto::ChainOptions rsp_opts;
    rsp_opts.pad_to_bytes = protocol::kDefaultChainBytes;
    const auto rsp = crypto::generate_test_chain(crypto::Role::Responder, rsp_opts);
    const auto req = crypto::generate_test_chain(crypto::Role::Requester);
    crypto::write_chain_pem(rsp.chain, p.responder_chain);
    crypto::write_private_key_pem(rsp.leaf_key, p.responder_key);
    crypto::write_chain_pem(req.chain, p.requester_chain);
    crypto::write_private_key_pem(req.leaf_key, p.requester_key);

    crypto::OpenSslProvider rng;
    const json psk = json::array(
        {{{"hint", psk_hint}, {"secret_hex", to_hex(rng.random_bytes(48))}}});
    const auto name = [](const fs::path& f) { return f.filename().string(); };

    json responder;
    responder["versions"] = {"1.0", "1.1"};
    responder["mutual_auth"] = true;
    responder["slots"] = json::array(
        {{{"slot", 0}, {"chain", name(p.responder_chain)}, {"key", name(p.responder_key)}}});
    responder["trusted_requester_roots"] = {name(p.requester_chain)};
    responder["psk"] = psk;
    write_json(p.responder_config, responder);

    json requester;
    requester["versions"] = {"1.0", "1.1"};
    requester["trusted_responder_roots"] = {name(p.responder_chain)};
    requester["credential"] = {{"chain", name(p.requester_chain)}, {"key", name(p.requester_key)}};
    requester["psk"] = psk;
    requester["measurement_mode"] = "all-at-once";
    requester["cert_chunk_size"] = protocol::kDefaultCertChunk;
    write_json(p.requester_config, requester);
    return p;
}

} // namespace spdmsim::config
