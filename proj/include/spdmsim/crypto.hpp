// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <spdmsim/algorithms.hpp>
#include <spdmsim/bytes.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

struct evp_pkey_st;

namespace spdmsim::crypto
{

// Shared handle to an OpenSSL key object; the protocol layers treat it as
// opaque.
using KeyHandle = std::shared_ptr<evp_pkey_st>;

class PublicKey
{
  public:
    PublicKey() = default;
    explicit PublicKey(KeyHandle key) : key_(std::move(key)) {}

    bool valid() const noexcept
    {
        return key_ != nullptr;
    }
    // Signature algorithm this key can serve, or None.
    SigAlgo algorithm() const noexcept;
    // SubjectPublicKeyInfo DER.
    Bytes der() const;
    const KeyHandle& handle() const noexcept
    {
        return key_;
    }

    friend bool operator==(const PublicKey& a, const PublicKey& b);

  private:
    KeyHandle key_;
};

class PrivateKey
{
  public:
    PrivateKey() = default;
    explicit PrivateKey(KeyHandle key) : key_(std::move(key)) {}

    bool valid() const noexcept
    {
        return key_ != nullptr;
    }
    SigAlgo algorithm() const noexcept;
    PublicKey public_key() const;
    const KeyHandle& handle() const noexcept
    {
        return key_;
    }

  private:
    KeyHandle key_;
};

struct DheKeyPair
{
    DheGroup group = DheGroup::None;
    KeyHandle private_key;
    // Uncompressed point without the 0x04 prefix: X || Y, big-endian.
    Bytes public_key;
};

// Ordered root -> leaf list of DER certificates for one slot.
struct CertificateChain
{
    std::uint8_t slot = 0;
    std::vector<Bytes> certificates;

    bool empty() const noexcept
    {
        return certificates.empty();
    }
    const Bytes& root() const
    {
        return certificates.front();
    }
    const Bytes& leaf() const
    {
        return certificates.back();
    }
    // Concatenated DER certificates; the image served by GET_CERTIFICATE.
    Bytes serialize() const;
    // Splits a concatenated DER image back into certificates.
    static CertificateChain parse(ByteView image, std::uint8_t slot = 0);

    friend bool operator==(const CertificateChain&,
                           const CertificateChain&) = default;
};

struct Credential
{
    CertificateChain chain;
    PrivateKey leaf_key;
};

enum class Role
{
    Requester,
    Responder,
};

struct ChainOptions
{
    std::size_t depth = 3;
    // Pad the leaf certificate with a comment extension until the serialized
    // chain is exactly this many bytes; 0 disables padding.
    std::size_t pad_to_bytes = 0;
    std::string common_name_prefix = "spdmsim";
};

// Seedable byte source; the deterministic mode is for tests and reproducible
// benchmark payloads, never for key material.
class RandomSource
{
  public:
    RandomSource() = default;
    explicit RandomSource(std::uint64_t seed) : seeded_(seed) {}

    Bytes bytes(std::size_t n);
    void fill(std::span<std::uint8_t> out);
    bool deterministic() const noexcept
    {
        return seeded_.has_value();
    }

  private:
    std::optional<std::mt19937_64> seeded_;
};

/// Abstract provider for every primitive the protocol layers use. Stateless
/// apart from the random source, so one instance must not be shared across
/// threads unless it is unseeded.
class CryptoProvider
{
  public:
    virtual ~CryptoProvider() = default;

    virtual Bytes hash(HashAlgo algo, ByteView data) const = 0;
    virtual Bytes hmac(HashAlgo algo, ByteView key, ByteView data) const = 0;
    virtual Bytes hkdf_extract(HashAlgo algo, ByteView salt,
                               ByteView ikm) const = 0;
    // LengthExceeded when length > 255 * digest size.
    virtual Bytes hkdf_expand(HashAlgo algo, ByteView prk, ByteView info,
                              std::size_t length) const = 0;

    // The data is hashed internally with the algorithm's fixed digest
    // (SHA-384 for both suite algorithms). ECDSA signatures are raw r || s.
    virtual Bytes sign(const PrivateKey& key, ByteView data,
                       SigAlgo algo) const = 0;
    virtual bool verify(const PublicKey& key, ByteView data, ByteView signature,
                        SigAlgo algo) const = 0;

    virtual DheKeyPair generate_dhe_keypair(DheGroup group) const = 0;
    // x-coordinate of the agreed point, big-endian, zero-padded.
    virtual Bytes dhe_shared_secret(const DheKeyPair& own,
                                    ByteView peer_public) const = 0;

    virtual Bytes aead_seal(AeadAlgo algo, ByteView key, ByteView nonce,
                            ByteView aad, ByteView plaintext) const = 0;
    // DecryptError on tag mismatch.
    virtual Bytes aead_open(AeadAlgo algo, ByteView key, ByteView nonce,
                            ByteView aad, ByteView ciphertext) const = 0;

    // Returns the leaf public key iff the chain's root equals trusted_root
    // (DER) and every certificate is signed by its predecessor.
    virtual PublicKey verify_certificate_chain(const CertificateChain& chain,
                                               ByteView trusted_root) const = 0;

    virtual Bytes random_bytes(std::size_t n) = 0;
};

class OpenSslProvider final : public CryptoProvider
{
  public:
    OpenSslProvider() = default;
    explicit OpenSslProvider(std::uint64_t seed) : rng_(seed) {}

    Bytes hash(HashAlgo algo, ByteView data) const override;
    Bytes hmac(HashAlgo algo, ByteView key, ByteView data) const override;
    Bytes hkdf_extract(HashAlgo algo, ByteView salt,
                       ByteView ikm) const override;
    Bytes hkdf_expand(HashAlgo algo, ByteView prk, ByteView info,
                      std::size_t length) const override;
    Bytes sign(const PrivateKey& key, ByteView data,
               SigAlgo algo) const override;
    bool verify(const PublicKey& key, ByteView data, ByteView signature,
                SigAlgo algo) const override;
    DheKeyPair generate_dhe_keypair(DheGroup group) const override;
    Bytes dhe_shared_secret(const DheKeyPair& own,
                            ByteView peer_public) const override;
    Bytes aead_seal(AeadAlgo algo, ByteView key, ByteView nonce, ByteView aad,
                    ByteView plaintext) const override;
    Bytes aead_open(AeadAlgo algo, ByteView key, ByteView nonce, ByteView aad,
                    ByteView ciphertext) const override;
    PublicKey verify_certificate_chain(const CertificateChain& chain,
                                       ByteView trusted_root) const override;
    Bytes random_bytes(std::size_t n) override;

  private:
    RandomSource rng_;
};

// Decorator that counts signature operations; used to check that signing
// happens exactly where the message flow demands it.
class CountingProvider final : public CryptoProvider
{
  public:
    explicit CountingProvider(std::shared_ptr<CryptoProvider> inner) :
        inner_(std::move(inner))
    {}

    std::uint64_t sign_count() const noexcept
    {
        return signs_.load();
    }
    std::uint64_t verify_count() const noexcept
    {
        return verifies_.load();
    }
    void reset_counts() noexcept
    {
        signs_ = 0;
        verifies_ = 0;
    }

    Bytes hash(HashAlgo algo, ByteView data) const override
    {
        return inner_->hash(algo, data);
    }
    Bytes hmac(HashAlgo algo, ByteView key, ByteView data) const override
    {
        return inner_->hmac(algo, key, data);
    }
    Bytes hkdf_extract(HashAlgo algo, ByteView salt,
                       ByteView ikm) const override
    {
        return inner_->hkdf_extract(algo, salt, ikm);
    }
    Bytes hkdf_expand(HashAlgo algo, ByteView prk, ByteView info,
                      std::size_t length) const override
    {
        return inner_->hkdf_expand(algo, prk, info, length);
    }
    Bytes sign(const PrivateKey& key, ByteView data,
               SigAlgo algo) const override
    {
        ++signs_;
        return inner_->sign(key, data, algo);
    }
    bool verify(const PublicKey& key, ByteView data, ByteView signature,
                SigAlgo algo) const override
    {
        ++verifies_;
        return inner_->verify(key, data, signature, algo);
    }
    DheKeyPair generate_dhe_keypair(DheGroup group) const override
    {
        return inner_->generate_dhe_keypair(group);
    }
    Bytes dhe_shared_secret(const DheKeyPair& own,
                            ByteView peer_public) const override
    {
        return inner_->dhe_shared_secret(own, peer_public);
    }
    Bytes aead_seal(AeadAlgo algo, ByteView key, ByteView nonce, ByteView aad,
                    ByteView plaintext) const override
    {
        return inner_->aead_seal(algo, key, nonce, aad, plaintext);
    }
    Bytes aead_open(AeadAlgo algo, ByteView key, ByteView nonce, ByteView aad,
                    ByteView ciphertext) const override
    {
        return inner_->aead_open(algo, key, nonce, aad, ciphertext);
    }
    PublicKey verify_certificate_chain(const CertificateChain& chain,
                                       ByteView trusted_root) const override
    {
        return inner_->verify_certificate_chain(chain, trusted_root);
    }
    Bytes random_bytes(std::size_t n) override
    {
        return inner_->random_bytes(n);
    }

  private:
    std::shared_ptr<CryptoProvider> inner_;
    mutable std::atomic<std::uint64_t> signs_{0};
    mutable std::atomic<std::uint64_t> verifies_{0};
};

// RSA-3072 for the requester role, ECDSA P-384 for the responder role.
PrivateKey generate_signing_key(SigAlgo algo);

// Root and intermediates are ECDSA P-384; the leaf key follows the role's
// suite algorithm. A depth-1 chain is a single self-signed leaf.
Credential generate_test_chain(Role role, const ChainOptions& options = {});

// PEM helpers for sharing fixtures between processes.
void write_chain_pem(const CertificateChain& chain,
                     const std::filesystem::path& path);
CertificateChain read_chain_pem(const std::filesystem::path& path,
                                std::uint8_t slot = 0);
void write_private_key_pem(const PrivateKey& key,
                           const std::filesystem::path& path);
PrivateKey read_private_key_pem(const std::filesystem::path& path);

// Certificate DER -> subject public key.
PublicKey certificate_public_key(ByteView der);

} // namespace spdmsim::crypto
