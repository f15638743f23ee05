// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/algorithms.hpp>

#include <algorithm>
#include <cstdio>

namespace spdmsim
{

std::size_t digest_size(HashAlgo algo) noexcept
{
    switch (algo)
    {
        case HashAlgo::Sha256: return 32;
        case HashAlgo::Sha384: return 48;
        default: return 0;
    }
}

bool is_implemented(HashAlgo algo) noexcept
{
    return algo == HashAlgo::Sha256 || algo == HashAlgo::Sha384;
}

bool is_implemented(SigAlgo algo) noexcept
{
    return algo == SigAlgo::RsaPss3072 || algo == SigAlgo::EcdsaP384;
}

bool is_implemented(DheGroup group) noexcept
{
    return group == DheGroup::Secp384r1;
}

bool is_implemented(AeadAlgo algo) noexcept
{
    return algo == AeadAlgo::Aes256Gcm;
}

bool is_implemented(KeySchedule ks) noexcept
{
    return ks == KeySchedule::HkdfLadder;
}

namespace
{
std::string unknown_id(std::uint16_t id)
{
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%04x", id);
    return buf;
}
} // namespace

std::string algo_name(HashAlgo algo)
{
    switch (algo)
    {
        case HashAlgo::Sha256: return "SHA-256";
        case HashAlgo::Sha384: return "SHA-384";
        default: return unknown_id(static_cast<std::uint16_t>(algo));
    }
}

std::string algo_name(SigAlgo algo)
{
    switch (algo)
    {
        case SigAlgo::RsaPss3072: return "RSA-PSS-3072";
        case SigAlgo::EcdsaP384: return "ECDSA-P384";
        default: return unknown_id(static_cast<std::uint16_t>(algo));
    }
}

std::string algo_name(DheGroup group)
{
    if (group == DheGroup::Secp384r1)
        return "SECP384R1";
    return unknown_id(static_cast<std::uint16_t>(group));
}

std::string algo_name(AeadAlgo algo)
{
    if (algo == AeadAlgo::Aes256Gcm)
        return "AES-256-GCM";
    return unknown_id(static_cast<std::uint16_t>(algo));
}

std::string algo_name(KeySchedule ks)
{
    if (ks == KeySchedule::HkdfLadder)
        return "HKDF-ladder";
    return unknown_id(static_cast<std::uint16_t>(ks));
}

bool CryptoSuite::complete() const noexcept
{
    return is_implemented(requester_sig) && is_implemented(responder_sig) &&
           is_implemented(hash) && is_implemented(dhe_group) &&
           is_implemented(aead) && is_implemented(key_schedule);
}

bool AlgorithmMenu::empty() const noexcept
{
    return hash.empty() || responder_sig.empty() || requester_sig.empty() ||
           dhe.empty() || aead.empty() || key_schedule.empty();
}

CryptoSuite default_suite()
{
    return CryptoSuite{SigAlgo::RsaPss3072, SigAlgo::EcdsaP384,
                       HashAlgo::Sha384,    DheGroup::Secp384r1,
                       AeadAlgo::Aes256Gcm, KeySchedule::HkdfLadder};
}

AlgorithmMenu default_menu()
{
    auto id = [](auto v) { return static_cast<std::uint16_t>(v); };
    AlgorithmMenu menu;
    menu.hash = {id(HashAlgo::Sha384), id(HashAlgo::Sha256)};
    menu.responder_sig = {id(SigAlgo::EcdsaP384)};
    menu.requester_sig = {id(SigAlgo::RsaPss3072)};
    menu.dhe = {id(DheGroup::Secp384r1)};
    menu.aead = {id(AeadAlgo::Aes256Gcm)};
    menu.key_schedule = {id(KeySchedule::HkdfLadder)};
    return menu;
}

std::uint16_t select_common(const std::vector<std::uint16_t>& preferred,
                            const std::vector<std::uint16_t>& supported)
{
    for (auto id : preferred)
    {
        if (std::find(supported.begin(), supported.end(), id) != supported.end())
            return id;
    }
    return 0;
}

} // namespace spdmsim
