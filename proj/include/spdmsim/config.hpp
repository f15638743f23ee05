// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <spdmsim/crypto.hpp>
#include <spdmsim/requester.hpp>
#include <spdmsim/responder.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

/// JSON configuration files and on-disk fixtures shared by the CLI's
/// `serve` and `connect` processes. Relative paths inside a config file
/// resolve against the file's directory.
namespace spdmsim::config
{

// Everything needed to build a serving responder.
struct ResponderSetup
{
    ResponderConfig config;
    std::map<std::uint8_t, crypto::Credential> slots;
    // Empty means the default fixture (5 blocks of 128 bytes).
    std::vector<wire::MeasurementBlock> measurements;
    std::map<Bytes, Bytes> psk_table;
    std::vector<Bytes> trusted_requester_roots;
};

ResponderSetup load_responder_setup(const std::filesystem::path& path);
RequesterConfig load_requester_config(const std::filesystem::path& path);

std::shared_ptr<Responder> build_responder(const ResponderSetup& setup,
                                           std::shared_ptr<crypto::CryptoProvider> provider);

// Measurement fixture file: [{"index", "type", "payload_hex"}].
std::vector<wire::MeasurementBlock>
load_measurements(const std::filesystem::path& path, const crypto::CryptoProvider& provider);

// Algorithm names as printed by algo_name(), or numeric ids.
std::uint16_t parse_algorithm(const std::string& field, const std::string& name);
// Capability names (Cert, Chal, ...) to bits.
std::uint32_t parse_capabilities(const std::vector<std::string>& names);

// Written by gencerts.
struct FixturePaths
{
    std::filesystem::path responder_chain;
    std::filesystem::path responder_key;
    std::filesystem::path requester_chain;
    std::filesystem::path requester_key;
    std::filesystem::path responder_config;
    std::filesystem::path requester_config;
};

FixturePaths fixture_paths(const std::filesystem::path& dir);

// Generates both credential chains (responder chain padded to 4096 bytes),
// a PSK, and matching responder.json / requester.json in `dir`.
FixturePaths generate_fixtures(const std::filesystem::path& dir,
                               const std::string& psk_hint = "spdmsim-psk-0");

// Reads a chain PEM and its key PEM into a credential.
crypto::Credential load_credential(const std::filesystem::path& chain_pem,
                                   const std::filesystem::path& key_pem);

} // namespace spdmsim::config
