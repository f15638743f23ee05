// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <spdmsim/algorithms.hpp>
#include <spdmsim/bytes.hpp>

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

/// Protocol messages, secured records, and transport frames.
///
/// Every multi-byte integer is little-endian. Variable-length fields carry a
/// 2-byte length prefix, except certificate portions, application payloads
/// and encapsulated inner messages which carry a 4-byte prefix. The layout of
/// each message is tabulated in docs/wire-format.md.
namespace spdmsim::wire
{

inline constexpr std::uint8_t kVersion10 = 0x10;
inline constexpr std::uint8_t kVersion11 = 0x11;
inline constexpr std::size_t kHeaderSize = 4;
inline constexpr std::size_t kNonceSize = 32;
inline constexpr std::size_t kMaxSlots = 8;
inline constexpr std::size_t kRecordHeaderSize = 16;

bool is_supported_version(std::uint8_t version) noexcept;

enum class Code : std::uint8_t
{
    GetDigests = 0x81,
    Digests = 0x01,
    GetCertificate = 0x82,
    Certificate = 0x02,
    Challenge = 0x83,
    ChallengeAuth = 0x03,
    GetVersion = 0x84,
    Version = 0x04,
    GetMeasurements = 0xE0,
    Measurements = 0x60,
    GetCapabilities = 0xE1,
    Capabilities = 0x61,
    NegotiateAlgorithms = 0xE3,
    Algorithms = 0x63,
    KeyExchange = 0xE4,
    KeyExchangeRsp = 0x64,
    Finish = 0xE5,
    FinishRsp = 0x65,
    PskExchange = 0xE6,
    PskExchangeRsp = 0x66,
    PskFinish = 0xE7,
    PskFinishRsp = 0x67,
    Heartbeat = 0xE8,
    HeartbeatAck = 0x68,
    KeyUpdate = 0xE9,
    KeyUpdateAck = 0x69,
    GetEncapsulatedRequest = 0xEA,
    EncapsulatedRequest = 0x6A,
    DeliverEncapsulatedResponse = 0xEB,
    EncapsulatedResponseAck = 0x6B,
    EndSession = 0xEC,
    EndSessionAck = 0x6C,
    AppData = 0xF0,
    Error = 0x7F,
};

const char* code_name(Code code) noexcept;
bool is_known_code(std::uint8_t code) noexcept;

enum class ErrorCode : std::uint8_t
{
    InvalidRequest = 0x01,
    Busy = 0x03,
    UnexpectedRequest = 0x04,
    DecryptError = 0x06,
    UnsupportedRequest = 0x07,
    VersionMismatch = 0x41,
    MalformedMessage = 0x50,
};

const char* error_code_name(ErrorCode code) noexcept;

// Capability flag bits exchanged in GET_CAPABILITIES / CAPABILITIES.
namespace cap
{
inline constexpr std::uint32_t Cert = 1u << 0;
inline constexpr std::uint32_t Chal = 1u << 1;
inline constexpr std::uint32_t MeasSig = 1u << 2;
inline constexpr std::uint32_t KeyEx = 1u << 3;
inline constexpr std::uint32_t Psk = 1u << 4;
inline constexpr std::uint32_t MutAuth = 1u << 5;
inline constexpr std::uint32_t Encap = 1u << 6;
inline constexpr std::uint32_t Heartbeat = 1u << 7;
inline constexpr std::uint32_t KeyUpdate = 1u << 8;
inline constexpr std::uint32_t Encrypt = 1u << 9;
inline constexpr std::uint32_t Mac = 1u << 10;
inline constexpr std::uint32_t All = (1u << 11) - 1;
} // namespace cap

using Nonce = std::array<std::uint8_t, kNonceSize>;

// GET_MEASUREMENTS operands.
inline constexpr std::uint8_t kMeasurementCount = 0x00;
inline constexpr std::uint8_t kMeasurementAll = 0xFF;

// Measurement-summary selectors for CHALLENGE / KEY_EXCHANGE.
inline constexpr std::uint8_t kSummaryNone = 0x00;
inline constexpr std::uint8_t kSummaryAll = 0xFF;

struct MeasurementBlock
{
    std::uint8_t index = 0;
    std::uint8_t block_type = 0;
    Bytes payload;
    Bytes digest;
    friend bool operator==(const MeasurementBlock&,
                           const MeasurementBlock&) = default;
};

struct Message;

// Deep-copying owner for the recursive encapsulation variants.
class Boxed
{
  public:
    Boxed();
    Boxed(Message msg);
    Boxed(const Boxed& other);
    Boxed(Boxed&&) noexcept;
    Boxed& operator=(const Boxed& other);
    Boxed& operator=(Boxed&&) noexcept;
    ~Boxed();

    const Message& operator*() const noexcept
    {
        return *ptr_;
    }
    const Message* operator->() const noexcept
    {
        return ptr_.get();
    }

    friend bool operator==(const Boxed& a, const Boxed& b);

  private:
    std::unique_ptr<Message> ptr_;
};

struct GetVersion
{
    friend bool operator==(const GetVersion&, const GetVersion&) = default;
};
struct Version
{
    std::vector<std::uint8_t> versions;
    friend bool operator==(const Version&, const Version&) = default;
};
struct GetCapabilities
{
    std::uint8_t ct_exponent = 0;
    std::uint32_t flags = 0;
    friend bool operator==(const GetCapabilities&,
                           const GetCapabilities&) = default;
};
struct Capabilities
{
    std::uint8_t ct_exponent = 0;
    std::uint32_t flags = 0;
    friend bool operator==(const Capabilities&, const Capabilities&) = default;
};
struct NegotiateAlgorithms
{
    AlgorithmMenu offered;
    friend bool operator==(const NegotiateAlgorithms&,
                           const NegotiateAlgorithms&) = default;
};
struct Algorithms
{
    CryptoSuite selected;
    friend bool operator==(const Algorithms&, const Algorithms&) = default;
};
struct GetDigests
{
    friend bool operator==(const GetDigests&, const GetDigests&) = default;
};
struct Digests
{
    std::uint8_t slot_mask = 0;
    // One digest per set bit of slot_mask, lowest slot first.
    std::vector<Bytes> digests;
    friend bool operator==(const Digests&, const Digests&) = default;
};
struct GetCertificate
{
    std::uint8_t slot = 0;
    std::uint32_t offset = 0;
    std::uint32_t length = 0;
    friend bool operator==(const GetCertificate&,
                           const GetCertificate&) = default;
};
struct Certificate
{
    std::uint8_t slot = 0;
    Bytes portion;
    std::uint32_t remainder_length = 0;
    friend bool operator==(const Certificate&, const Certificate&) = default;
};
struct Challenge
{
    std::uint8_t slot = 0;
    std::uint8_t measurement_summary_selector = kSummaryNone;
    Nonce nonce{};
    friend bool operator==(const Challenge&, const Challenge&) = default;
};
struct ChallengeAuth
{
    std::uint8_t slot = 0;
    bool mutual_auth_requested = false;
    Bytes cert_chain_digest;
    Nonce nonce{};
    Bytes measurement_summary_digest;
    Bytes opaque;
    Bytes signature;
    friend bool operator==(const ChallengeAuth&, const ChallengeAuth&) = default;
};
struct GetMeasurements
{
    std::uint8_t operand = kMeasurementAll;
    bool signature_requested = false;
    // Present on the wire only when signature_requested.
    Nonce nonce{};
    std::uint8_t slot = 0;
    friend bool operator==(const GetMeasurements&,
                           const GetMeasurements&) = default;
};
struct Measurements
{
    // Total number of blocks the responder holds (meaningful for operand 0).
    std::uint8_t block_count = 0;
    std::vector<MeasurementBlock> blocks;
    Nonce nonce{};
    std::optional<Bytes> signature;
    friend bool operator==(const Measurements&, const Measurements&) = default;
};

enum class MutualAuthMode : std::uint8_t
{
    None = 0,
    // Requester key already verified; FINISH must carry a signature.
    Signature = 1,
    // Run the encapsulated certificate retrieval first, then sign FINISH.
    EncapsulatedCert = 2,
};

struct KeyExchange
{
    std::uint8_t measurement_summary_selector = kSummaryNone;
    std::uint8_t slot = 0;
    std::uint16_t req_session_id = 0;
    Nonce requester_random{};
    Bytes dhe_public;
    friend bool operator==(const KeyExchange&, const KeyExchange&) = default;
};
struct KeyExchangeRsp
{
    MutualAuthMode mutual_auth = MutualAuthMode::None;
    std::uint16_t rsp_session_id = 0;
    Nonce responder_random{};
    Bytes dhe_public;
    Bytes measurement_summary_digest;
    Bytes signature;
    Bytes verify_data;
    friend bool operator==(const KeyExchangeRsp&,
                           const KeyExchangeRsp&) = default;
};
struct Finish
{
    std::uint8_t req_slot = 0;
    std::optional<Bytes> requester_signature;
    Bytes verify_data;
    friend bool operator==(const Finish&, const Finish&) = default;
};
struct FinishRsp
{
    Bytes verify_data;
    friend bool operator==(const FinishRsp&, const FinishRsp&) = default;
};
struct PskExchange
{
    std::uint8_t measurement_summary_selector = kSummaryNone;
    std::uint16_t req_session_id = 0;
    Bytes psk_hint;
    Bytes requester_context;
    friend bool operator==(const PskExchange&, const PskExchange&) = default;
};
struct PskExchangeRsp
{
    std::uint16_t rsp_session_id = 0;
    Bytes measurement_summary_digest;
    Bytes responder_context;
    Bytes verify_data;
    friend bool operator==(const PskExchangeRsp&,
                           const PskExchangeRsp&) = default;
};
struct PskFinish
{
    Bytes verify_data;
    friend bool operator==(const PskFinish&, const PskFinish&) = default;
};
struct PskFinishRsp
{
    friend bool operator==(const PskFinishRsp&, const PskFinishRsp&) = default;
};
struct Heartbeat
{
    friend bool operator==(const Heartbeat&, const Heartbeat&) = default;
};
struct HeartbeatAck
{
    friend bool operator==(const HeartbeatAck&, const HeartbeatAck&) = default;
};

enum class KeyUpdateOp : std::uint8_t
{
    UpdateKey = 1,
    UpdateAllKeys = 2,
    VerifyNewKey = 3,
};

struct KeyUpdate
{
    KeyUpdateOp op = KeyUpdateOp::UpdateKey;
    std::uint8_t tag = 0;
    friend bool operator==(const KeyUpdate&, const KeyUpdate&) = default;
};
struct KeyUpdateAck
{
    KeyUpdateOp op = KeyUpdateOp::UpdateKey;
    std::uint8_t tag = 0;
    friend bool operator==(const KeyUpdateAck&, const KeyUpdateAck&) = default;
};
struct EndSession
{
    friend bool operator==(const EndSession&, const EndSession&) = default;
};
struct EndSessionAck
{
    friend bool operator==(const EndSessionAck&, const EndSessionAck&) = default;
};
struct GetEncapsulatedRequest
{
    friend bool operator==(const GetEncapsulatedRequest&,
                           const GetEncapsulatedRequest&) = default;
};
struct EncapsulatedRequest
{
    std::uint8_t request_id = 0;
    Boxed inner;
    friend bool operator==(const EncapsulatedRequest&,
                           const EncapsulatedRequest&) = default;
};
struct DeliverEncapsulatedResponse
{
    std::uint8_t request_id = 0;
    Boxed inner;
    friend bool operator==(const DeliverEncapsulatedResponse&,
                           const DeliverEncapsulatedResponse&) = default;
};
struct EncapsulatedResponseAck
{
    std::uint8_t request_id = 0;
    std::optional<Boxed> inner;
    friend bool operator==(const EncapsulatedResponseAck&,
                           const EncapsulatedResponseAck&) = default;
};
struct ErrorMsg
{
    ErrorCode code = ErrorCode::InvalidRequest;
    std::uint8_t data = 0;
    Bytes detail;
    friend bool operator==(const ErrorMsg&, const ErrorMsg&) = default;
};
struct AppData
{
    Bytes payload;
    friend bool operator==(const AppData&, const AppData&) = default;
};

using Body =
    std::variant<GetVersion, Version, GetCapabilities, Capabilities,
                 NegotiateAlgorithms, Algorithms, GetDigests, Digests,
                 GetCertificate, Certificate, Challenge, ChallengeAuth,
                 GetMeasurements, Measurements, KeyExchange, KeyExchangeRsp,
                 Finish, FinishRsp, PskExchange, PskExchangeRsp, PskFinish,
                 PskFinishRsp, Heartbeat, HeartbeatAck, KeyUpdate, KeyUpdateAck,
                 EndSession, EndSessionAck, GetEncapsulatedRequest,
                 EncapsulatedRequest, DeliverEncapsulatedResponse,
                 EncapsulatedResponseAck, ErrorMsg, AppData>;

struct Message
{
    std::uint8_t version = kVersion11;
    Body body;

    Code code() const noexcept;

    template <class T>
    bool is() const noexcept
    {
        return std::holds_alternative<T>(body);
    }
    template <class T>
    const T& as() const
    {
        return std::get<T>(body);
    }

    friend bool operator==(const Message&, const Message&) = default;
};

template <class T>
Message make(T body, std::uint8_t version = kVersion11)
{
    return Message{version, Body{std::move(body)}};
}

Message make_error(ErrorCode code, std::uint8_t version = kVersion11,
                   std::string_view detail = {});

Code code_of(const Body& body) noexcept;

Bytes encode_message(const Message& msg);
// Rejects truncated input, trailing bytes, nonzero reserved params, unknown
// codes (UnsupportedRequest) and unknown version bytes (VersionMismatch).
Message decode_message(ByteView data);

struct SecuredRecord
{
    std::uint32_t session_id = 0;
    std::uint64_t seq_num = 0;
    // Ciphertext followed by the 16-byte tag; its size is the on-wire
    // ciphertext_length field.
    Bytes ciphertext_and_tag;

    friend bool operator==(const SecuredRecord&, const SecuredRecord&) = default;
};

// The 16-byte header as laid out on the wire; this is the AEAD associated data.
std::array<std::uint8_t, kRecordHeaderSize>
    record_header(std::uint32_t session_id, std::uint64_t seq_num,
                  std::uint32_t ciphertext_length) noexcept;

Bytes encode_secured_record(const SecuredRecord& rec);
SecuredRecord decode_secured_record(ByteView data);

// Transport-level framing shared by every channel: one kind byte, then the
// payload. Kind tells a device whether it got a plain or a secured protocol
// message, or a baseline application request that bypasses the protocol.
enum class FrameKind : std::uint8_t
{
    RawApp = 0x01,
    Spdm = 0x05,
    Secured = 0x06,
};

struct Frame
{
    FrameKind kind = FrameKind::Spdm;
    Bytes payload;
};

Bytes encode_frame(FrameKind kind, ByteView payload);
Frame decode_frame(ByteView data);

} // namespace spdmsim::wire
