// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spdmsim
{

// Values are stable: the C API exposes them one-to-one as spdmsim_status.
enum class Errc : int
{
    Ok = 0,
    // codec
    EncodingOverflow = 1,
    MalformedMessage = 2,
    UnsupportedRequest = 3,
    VersionMismatch = 4,
    // peer-reported protocol errors
    InvalidRequest = 5,
    Busy = 6,
    UnexpectedRequest = 7,
    DecryptError = 8,
    // crypto
    KeyAlgorithmMismatch = 9,
    InvalidPoint = 10,
    LengthExceeded = 11,
    UntrustedRoot = 12,
    BrokenLink = 13,
    CryptoFailure = 14,
    // session
    UnknownCheckpoint = 15,
    MissingHandshakeSecret = 16,
    InvalidPhase = 17,
    SequenceExhausted = 18,
    ReplayDetected = 19,
    SequenceGap = 20,
    SessionNotFound = 21,
    // requester / responder
    AlgorithmMismatch = 22,
    Timeout = 23,
    DigestMismatch = 24,
    SignatureInvalid = 25,
    NonceMismatch = 26,
    IndexOutOfRange = 27,
    VerifyDataMismatch = 28,
    UnknownPskHint = 29,
    VerifyNewKeyFailed = 30,
    DuplicateOpcode = 31,
    InvalidSlot = 32,
    NonContiguousMeasurementIndex = 33,
    // transport / devices
    CapacityExceeded = 34,
    ChannelClosed = 35,
    RangeError = 36,
    // bench / misc
    InsufficientSamples = 37,
    IoError = 38,
    InvalidArgument = 39,
    Internal = 40,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error
{
  public:
    Error(Errc code, const std::string& what) :
        std::runtime_error(what), code_(code)
    {}

    Errc code() const noexcept
    {
        return code_;
    }

  private:
    Errc code_;
};

[[noreturn]] void fail(Errc code, std::string_view what);

} // namespace spdmsim
