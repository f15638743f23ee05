// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/bytes.hpp>
#include <spdmsim/errors.hpp>

#include <openssl/crypto.h>

namespace spdmsim
{

const char* errc_name(Errc code) noexcept
{
    switch (code)
    {
        case Errc::Ok: return "Ok";
        case Errc::EncodingOverflow: return "EncodingOverflow";
        case Errc::MalformedMessage: return "MalformedMessage";
        case Errc::UnsupportedRequest: return "UnsupportedRequest";
        case Errc::VersionMismatch: return "VersionMismatch";
        case Errc::InvalidRequest: return "InvalidRequest";
        case Errc::Busy: return "Busy";
        case Errc::UnexpectedRequest: return "UnexpectedRequest";
        case Errc::DecryptError: return "DecryptError";
        case Errc::KeyAlgorithmMismatch: return "KeyAlgorithmMismatch";
        case Errc::InvalidPoint: return "InvalidPoint";
        case Errc::LengthExceeded: return "LengthExceeded";
        case Errc::UntrustedRoot: return "UntrustedRoot";
        case Errc::BrokenLink: return "BrokenLink";
        case Errc::CryptoFailure: return "CryptoFailure";
        case Errc::UnknownCheckpoint: return "UnknownCheckpoint";
        case Errc::MissingHandshakeSecret: return "MissingHandshakeSecret";
        case Errc::InvalidPhase: return "InvalidPhase";
        case Errc::SequenceExhausted: return "SequenceExhausted";
        case Errc::ReplayDetected: return "ReplayDetected";
        case Errc::SequenceGap: return "SequenceGap";
        case Errc::SessionNotFound: return "SessionNotFound";
        case Errc::AlgorithmMismatch: return "AlgorithmMismatch";
        case Errc::Timeout: return "Timeout";
        case Errc::DigestMismatch: return "DigestMismatch";
        case Errc::SignatureInvalid: return "SignatureInvalid";
        case Errc::NonceMismatch: return "NonceMismatch";
        case Errc::IndexOutOfRange: return "IndexOutOfRange";
        case Errc::VerifyDataMismatch: return "VerifyDataMismatch";
        case Errc::UnknownPskHint: return "UnknownPskHint";
        case Errc::VerifyNewKeyFailed: return "VerifyNewKeyFailed";
        case Errc::DuplicateOpcode: return "DuplicateOpcode";
        case Errc::InvalidSlot: return "InvalidSlot";
        case Errc::NonContiguousMeasurementIndex:
            return "NonContiguousMeasurementIndex";
        case Errc::CapacityExceeded: return "CapacityExceeded";
        case Errc::ChannelClosed: return "ChannelClosed";
        case Errc::RangeError: return "RangeError";
        case Errc::InsufficientSamples: return "InsufficientSamples";
        case Errc::IoError: return "IoError";
        case Errc::InvalidArgument: return "InvalidArgument";
        case Errc::Internal: return "Internal";
    }
    return "Unknown";
}

void fail(Errc code, std::string_view what)
{
    throw Error(code, std::string(errc_name(code)) + ": " + std::string(what));
}

std::string to_hex(ByteView data)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (auto b : data)
    {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0f]);
    }
    return out;
}

namespace
{
int hex_value(char c)
{
    if (c >= '0' && c <= '9')
        return c - '0';
    if (c >= 'a' && c <= 'f')
        return c - 'a' + 10;
    if (c >= 'A' && c <= 'F')
        return c - 'A' + 10;
    return -1;
}
} // namespace

Bytes from_hex(std::string_view hex)
{
    if (hex.size() % 2 != 0)
        fail(Errc::InvalidArgument, "hex string has odd length");
    Bytes out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
    {
        int hi = hex_value(hex[2 * i]);
        int lo = hex_value(hex[2 * i + 1]);
        if (hi < 0 || lo < 0)
            fail(Errc::InvalidArgument, "invalid hex digit");
        out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
    }
    return out;
}

void secure_wipe(Bytes& data) noexcept
{
    if (!data.empty())
        OPENSSL_cleanse(data.data(), data.size());
    data.clear();
}

} // namespace spdmsim
