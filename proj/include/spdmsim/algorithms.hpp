// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace spdmsim
{

// Algorithm identifiers as carried on the wire (16-bit). Values outside the
// named enumerators are representable so that a peer may advertise ids this
// build does not implement; negotiation simply never selects them.
enum class HashAlgo : std::uint16_t
{
    None = 0,
    Sha256 = 0x0001,
    Sha384 = 0x0002,
};

enum class SigAlgo : std::uint16_t
{
    None = 0,
    RsaPss3072 = 0x0011,
    EcdsaP384 = 0x0012,
};

enum class DheGroup : std::uint16_t
{
    None = 0,
    Secp384r1 = 0x0021,
};

enum class AeadAlgo : std::uint16_t
{
    None = 0,
    Aes256Gcm = 0x0031,
};

enum class KeySchedule : std::uint16_t
{
    None = 0,
    HkdfLadder = 0x0041,
};

inline constexpr std::size_t kAeadKeySize = 32;
inline constexpr std::size_t kAeadNonceSize = 12;
inline constexpr std::size_t kAeadTagSize = 16;

// 0 for an unimplemented id.
std::size_t digest_size(HashAlgo algo) noexcept;

bool is_implemented(HashAlgo algo) noexcept;
bool is_implemented(SigAlgo algo) noexcept;
bool is_implemented(DheGroup group) noexcept;
bool is_implemented(AeadAlgo algo) noexcept;
bool is_implemented(KeySchedule ks) noexcept;

std::string algo_name(HashAlgo algo);
std::string algo_name(SigAlgo algo);
std::string algo_name(DheGroup group);
std::string algo_name(AeadAlgo algo);
std::string algo_name(KeySchedule ks);

// The fixed suite a session runs with after NEGOTIATE_ALGORITHMS.
struct CryptoSuite
{
    SigAlgo requester_sig = SigAlgo::None;
    SigAlgo responder_sig = SigAlgo::None;
    HashAlgo hash = HashAlgo::None;
    DheGroup dhe_group = DheGroup::None;
    AeadAlgo aead = AeadAlgo::None;
    KeySchedule key_schedule = KeySchedule::None;

    bool complete() const noexcept;
    friend bool operator==(const CryptoSuite&, const CryptoSuite&) = default;
};

// Priority-ordered lists of algorithm ids, one list per suite field.
struct AlgorithmMenu
{
    std::vector<std::uint16_t> hash;
    std::vector<std::uint16_t> responder_sig;
    std::vector<std::uint16_t> requester_sig;
    std::vector<std::uint16_t> dhe;
    std::vector<std::uint16_t> aead;
    std::vector<std::uint16_t> key_schedule;

    bool empty() const noexcept;
    friend bool operator==(const AlgorithmMenu&, const AlgorithmMenu&) = default;
};

// RSA-PSS-3072 requester, ECDSA P-384 responder, SHA-384, SECP384R1,
// AES-256-GCM, HKDF ladder.
CryptoSuite default_suite();

// The default suite's ids, with SHA-256 offered as a lower-priority
// alternate hash.
AlgorithmMenu default_menu();

// First entry of `preferred` (in order) that also appears in `supported`;
// 0 when the lists do not intersect.
std::uint16_t select_common(const std::vector<std::uint16_t>& preferred,
                            const std::vector<std::uint16_t>& supported);

} // namespace spdmsim
