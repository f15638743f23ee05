// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include <spdmsim/crypto.hpp>
#include <spdmsim/errors.hpp>

#include <openssl/bio.h>
#include <openssl/core_names.h>
#include <openssl/ec.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/kdf.h>
#include <openssl/param_build.h>
#include <openssl/pem.h>
#include <openssl/rand.h>
#include <openssl/rsa.h>
#include <openssl/x509.h>
#include <openssl/x509v3.h>

#include <cstring>

namespace spdmsim::crypto
{

namespace
{

template <class T, void (*Free)(T*)>
struct Deleter
{
    void operator()(T* p) const noexcept
    {
        Free(p);
    }
};

using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, Deleter<EVP_MD_CTX, EVP_MD_CTX_free>>;
using PkeyCtxPtr =
    std::unique_ptr<EVP_PKEY_CTX, Deleter<EVP_PKEY_CTX, EVP_PKEY_CTX_free>>;
using CipherCtxPtr =
    std::unique_ptr<EVP_CIPHER_CTX, Deleter<EVP_CIPHER_CTX, EVP_CIPHER_CTX_free>>;
using X509Ptr = std::unique_ptr<X509, Deleter<X509, X509_free>>;
using BioPtr = std::unique_ptr<BIO, Deleter<BIO, BIO_free_all>>;
using EcdsaSigPtr =
    std::unique_ptr<ECDSA_SIG, Deleter<ECDSA_SIG, ECDSA_SIG_free>>;
using ParamBldPtr =
    std::unique_ptr<OSSL_PARAM_BLD, Deleter<OSSL_PARAM_BLD, OSSL_PARAM_BLD_free>>;
using ParamPtr = std::unique_ptr<OSSL_PARAM, Deleter<OSSL_PARAM, OSSL_PARAM_free>>;

constexpr std::size_t kP384FieldBytes = 48;

KeyHandle wrap(EVP_PKEY* key)
{
    if (key == nullptr)
        fail(Errc::CryptoFailure, "null key");
    return KeyHandle(key, EVP_PKEY_free);
}

[[noreturn]] void openssl_fail(const char* what)
{
    unsigned long err = ERR_get_error();
    char buf[256] = {0};
    if (err != 0)
        ERR_error_string_n(err, buf, sizeof(buf));
    ERR_clear_error();
    fail(Errc::CryptoFailure, std::string(what) + (err ? ": " : "") + buf);
}

const EVP_MD* md_for(HashAlgo algo)
{
    switch (algo)
    {
        case HashAlgo::Sha256: return EVP_sha256();
        case HashAlgo::Sha384: return EVP_sha384();
        default: fail(Errc::InvalidArgument, "unsupported hash algorithm");
    }
}

bool is_p384(EVP_PKEY* key)
{
    if (EVP_PKEY_get_base_id(key) != EVP_PKEY_EC)
        return false;
    char group[64] = {0};
    std::size_t len = 0;
    if (EVP_PKEY_get_utf8_string_param(key, OSSL_PKEY_PARAM_GROUP_NAME, group,
                                       sizeof(group), &len) != 1)
        return false;
    return std::string_view(group, len) == "secp384r1" ||
           std::string_view(group, len) == "P-384";
}

SigAlgo algorithm_of(EVP_PKEY* key) noexcept
{
    if (key == nullptr)
        return SigAlgo::None;
    if (EVP_PKEY_get_base_id(key) == EVP_PKEY_RSA && EVP_PKEY_get_bits(key) == 3072)
        return SigAlgo::RsaPss3072;
    if (is_p384(key))
        return SigAlgo::EcdsaP384;
    return SigAlgo::None;
}

void require_algorithm(EVP_PKEY* key, SigAlgo algo)
{
    if (!is_implemented(algo))
        fail(Errc::InvalidArgument, "unsupported signature algorithm");
    if (algorithm_of(key) != algo)
        fail(Errc::KeyAlgorithmMismatch,
             "key does not match " + algo_name(algo));
}

void configure_pss(EVP_PKEY_CTX* pctx)
{
    if (EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PSS_PADDING) != 1 ||
        EVP_PKEY_CTX_set_rsa_pss_saltlen(pctx, RSA_PSS_SALTLEN_DIGEST) != 1)
        openssl_fail("configuring RSA-PSS");
}

Bytes ecdsa_der_to_raw(ByteView der)
{
    const unsigned char* p = der.data();
    EcdsaSigPtr sig(d2i_ECDSA_SIG(nullptr, &p, static_cast<long>(der.size())));
    if (!sig)
        openssl_fail("decoding ECDSA signature");
    const BIGNUM* r = nullptr;
    const BIGNUM* s = nullptr;
    ECDSA_SIG_get0(sig.get(), &r, &s);
    Bytes out(2 * kP384FieldBytes);
    if (BN_bn2binpad(r, out.data(), kP384FieldBytes) < 0 ||
        BN_bn2binpad(s, out.data() + kP384FieldBytes, kP384FieldBytes) < 0)
        openssl_fail("encoding ECDSA signature");
    return out;
}

std::optional<Bytes> ecdsa_raw_to_der(ByteView raw)
{
    if (raw.size() != 2 * kP384FieldBytes)
        return std::nullopt;
    EcdsaSigPtr sig(ECDSA_SIG_new());
    BIGNUM* r = BN_bin2bn(raw.data(), kP384FieldBytes, nullptr);
    BIGNUM* s = BN_bin2bn(raw.data() + kP384FieldBytes, kP384FieldBytes, nullptr);
    if (!sig || !r || !s || ECDSA_SIG_set0(sig.get(), r, s) != 1)
    {
        BN_free(r);
        BN_free(s);
        openssl_fail("building ECDSA signature");
    }
    int len = i2d_ECDSA_SIG(sig.get(), nullptr);
    if (len <= 0)
        openssl_fail("encoding ECDSA signature");
    Bytes der(static_cast<std::size_t>(len));
    unsigned char* p = der.data();
    i2d_ECDSA_SIG(sig.get(), &p);
    return der;
}

X509Ptr parse_x509(ByteView der)
{
    const unsigned char* p = der.data();
    X509Ptr cert(d2i_X509(nullptr, &p, static_cast<long>(der.size())));
    if (!cert || p != der.data() + der.size())
        fail(Errc::BrokenLink, "certificate is not valid DER");
    return cert;
}

Bytes x509_der(X509* cert)
{
    int len = i2d_X509(cert, nullptr);
    if (len <= 0)
        openssl_fail("encoding certificate");
    Bytes out(static_cast<std::size_t>(len));
    unsigned char* p = out.data();
    i2d_X509(cert, &p);
    return out;
}

} // namespace

SigAlgo PublicKey::algorithm() const noexcept
{
    return algorithm_of(key_.get());
}

Bytes PublicKey::der() const
{
    if (!key_)
        return {};
    int len = i2d_PUBKEY(key_.get(), nullptr);
    if (len <= 0)
        openssl_fail("encoding public key");
    Bytes out(static_cast<std::size_t>(len));
    unsigned char* p = out.data();
    i2d_PUBKEY(key_.get(), &p);
    return out;
}

bool operator==(const PublicKey& a, const PublicKey& b)
{
    if (!a.key_ || !b.key_)
        return a.key_ == b.key_;
    return EVP_PKEY_eq(a.key_.get(), b.key_.get()) == 1;
}

SigAlgo PrivateKey::algorithm() const noexcept
{
    return algorithm_of(key_.get());
}

PublicKey PrivateKey::public_key() const
{
    if (!key_)
        return {};
    unsigned char* der = nullptr;
    int len = i2d_PUBKEY(key_.get(), &der);
    if (len <= 0)
        openssl_fail("extracting public key");
    const unsigned char* p = der;
    EVP_PKEY* pub = d2i_PUBKEY(nullptr, &p, len);
    OPENSSL_free(der);
    return PublicKey(wrap(pub));
}

Bytes CertificateChain::serialize() const
{
    Bytes out;
    for (const auto& c : certificates)
        append(out, c);
    return out;
}

CertificateChain CertificateChain::parse(ByteView image, std::uint8_t slot)
{
    CertificateChain chain;
    chain.slot = slot;
    const unsigned char* p = image.data();
    const unsigned char* end = image.data() + image.size();
    while (p < end)
    {
        const unsigned char* start = p;
        X509Ptr cert(d2i_X509(nullptr, &p, static_cast<long>(end - p)));
        if (!cert)
        {
            ERR_clear_error();
            fail(Errc::MalformedMessage, "certificate chain image is not DER");
        }
        chain.certificates.emplace_back(start, p);
    }
    if (chain.certificates.empty())
        fail(Errc::MalformedMessage, "empty certificate chain image");
    return chain;
}

void RandomSource::fill(std::span<std::uint8_t> out)
{
    if (seeded_)
    {
        std::size_t i = 0;
        while (i < out.size())
        {
            auto v = (*seeded_)();
            for (int b = 0; b < 8 && i < out.size(); ++b, ++i)
                out[i] = static_cast<std::uint8_t>(v >> (8 * b));
        }
        return;
    }
    if (!out.empty() && RAND_bytes(out.data(), static_cast<int>(out.size())) != 1)
        openssl_fail("RAND_bytes");
}

Bytes RandomSource::bytes(std::size_t n)
{
    Bytes out(n);
    fill(out);
    return out;
}

Bytes OpenSslProvider::hash(HashAlgo algo, ByteView data) const
{
    Bytes out(EVP_MAX_MD_SIZE);
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, md_for(algo),
                   nullptr) != 1)
        openssl_fail("EVP_Digest");
    out.resize(len);
    return out;
}

Bytes OpenSslProvider::hmac(HashAlgo algo, ByteView key, ByteView data) const
{
    if (key.empty())
        fail(Errc::InvalidArgument, "HMAC key must not be empty");
    Bytes out(EVP_MAX_MD_SIZE);
    unsigned int len = 0;
    if (HMAC(md_for(algo), key.data(), static_cast<int>(key.size()), data.data(),
             data.size(), out.data(), &len) == nullptr)
        openssl_fail("HMAC");
    out.resize(len);
    return out;
}

Bytes OpenSslProvider::hkdf_extract(HashAlgo algo, ByteView salt,
                                    ByteView ikm) const
{
    // An absent salt means a string of zeros of digest length.
    Bytes zero_salt;
    if (salt.empty())
    {
        zero_salt.assign(digest_size(algo), 0);
        salt = zero_salt;
    }
    PkeyCtxPtr ctx(EVP_PKEY_CTX_new_id(EVP_PKEY_HKDF, nullptr));
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
        EVP_PKEY_CTX_set_hkdf_mode(ctx.get(),
                                   EVP_PKEY_HKDEF_MODE_EXTRACT_ONLY) != 1 ||
        EVP_PKEY_CTX_set_hkdf_md(ctx.get(), md_for(algo)) != 1 ||
        EVP_PKEY_CTX_set1_hkdf_salt(ctx.get(), salt.data(),
                                    static_cast<int>(salt.size())) != 1 ||
        EVP_PKEY_CTX_set1_hkdf_key(ctx.get(), ikm.data(),
                                   static_cast<int>(ikm.size())) != 1)
        openssl_fail("HKDF-Extract setup");
    std::size_t len = digest_size(algo);
    Bytes out(len);
    if (EVP_PKEY_derive(ctx.get(), out.data(), &len) != 1)
        openssl_fail("HKDF-Extract");
    out.resize(len);
    return out;
}

Bytes OpenSslProvider::hkdf_expand(HashAlgo algo, ByteView prk, ByteView info,
                                   std::size_t length) const
{
    if (length > 255 * digest_size(algo))
        fail(Errc::LengthExceeded, "HKDF-Expand output longer than 255 * HashLen");
    if (length == 0)
        return {};
    PkeyCtxPtr ctx(EVP_PKEY_CTX_new_id(EVP_PKEY_HKDF, nullptr));
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
        EVP_PKEY_CTX_set_hkdf_mode(ctx.get(), EVP_PKEY_HKDEF_MODE_EXPAND_ONLY) !=
            1 ||
        EVP_PKEY_CTX_set_hkdf_md(ctx.get(), md_for(algo)) != 1 ||
        EVP_PKEY_CTX_set1_hkdf_key(ctx.get(), prk.data(),
                                   static_cast<int>(prk.size())) != 1 ||
        EVP_PKEY_CTX_add1_hkdf_info(ctx.get(), info.data(),
                                    static_cast<int>(info.size())) != 1)
        openssl_fail("HKDF-Expand setup");
    Bytes out(length);
    if (EVP_PKEY_derive(ctx.get(), out.data(), &length) != 1)
        openssl_fail("HKDF-Expand");
    return out;
}

Bytes OpenSslProvider::sign(const PrivateKey& key, ByteView data,
                            SigAlgo algo) const
{
    require_algorithm(key.handle().get(), algo);
    MdCtxPtr ctx(EVP_MD_CTX_new());
    EVP_PKEY_CTX* pctx = nullptr;
    if (!ctx || EVP_DigestSignInit(ctx.get(), &pctx, EVP_sha384(), nullptr,
                                   key.handle().get()) != 1)
        openssl_fail("EVP_DigestSignInit");
    if (algo == SigAlgo::RsaPss3072)
        configure_pss(pctx);
    std::size_t len = 0;
    if (EVP_DigestSign(ctx.get(), nullptr, &len, data.data(), data.size()) != 1)
        openssl_fail("EVP_DigestSign (size)");
    Bytes sig(len);
    if (EVP_DigestSign(ctx.get(), sig.data(), &len, data.data(), data.size()) != 1)
        openssl_fail("EVP_DigestSign");
    sig.resize(len);
    if (algo == SigAlgo::EcdsaP384)
        return ecdsa_der_to_raw(sig);
    return sig;
}

bool OpenSslProvider::verify(const PublicKey& key, ByteView data,
                             ByteView signature, SigAlgo algo) const
{
    require_algorithm(key.handle().get(), algo);
    Bytes der;
    if (algo == SigAlgo::EcdsaP384)
    {
        auto converted = ecdsa_raw_to_der(signature);
        if (!converted)
            return false;
        der = std::move(*converted);
        signature = der;
    }
    MdCtxPtr ctx(EVP_MD_CTX_new());
    EVP_PKEY_CTX* pctx = nullptr;
    if (!ctx || EVP_DigestVerifyInit(ctx.get(), &pctx, EVP_sha384(), nullptr,
                                     key.handle().get()) != 1)
        openssl_fail("EVP_DigestVerifyInit");
    if (algo == SigAlgo::RsaPss3072)
        configure_pss(pctx);
    int rc = EVP_DigestVerify(ctx.get(), signature.data(), signature.size(),
                              data.data(), data.size());
    ERR_clear_error();
    return rc == 1;
}

DheKeyPair OpenSslProvider::generate_dhe_keypair(DheGroup group) const
{
    if (group != DheGroup::Secp384r1)
        fail(Errc::InvalidArgument, "unsupported DHE group");
    EVP_PKEY* raw = EVP_PKEY_Q_keygen(nullptr, nullptr, "EC", "P-384");
    if (raw == nullptr)
        openssl_fail("generating DHE key");
    DheKeyPair kp;
    kp.group = group;
    kp.private_key = wrap(raw);
    std::size_t len = 0;
    if (EVP_PKEY_get_octet_string_param(raw, OSSL_PKEY_PARAM_ENCODED_PUBLIC_KEY,
                                        nullptr, 0, &len) != 1)
        openssl_fail("reading DHE public key");
    Bytes encoded(len);
    if (EVP_PKEY_get_octet_string_param(raw, OSSL_PKEY_PARAM_ENCODED_PUBLIC_KEY,
                                        encoded.data(), encoded.size(),
                                        &len) != 1 ||
        len != 1 + 2 * kP384FieldBytes || encoded[0] != 0x04)
        openssl_fail("reading DHE public key");
    kp.public_key.assign(encoded.begin() + 1, encoded.end());
    return kp;
}

Bytes OpenSslProvider::dhe_shared_secret(const DheKeyPair& own,
                                         ByteView peer_public) const
{
    if (own.group != DheGroup::Secp384r1 || !own.private_key)
        fail(Errc::InvalidArgument, "DHE key pair not initialised");
    if (peer_public.size() != 2 * kP384FieldBytes)
        fail(Errc::InvalidPoint, "peer DHE public key has wrong length");

    Bytes encoded;
    encoded.reserve(1 + peer_public.size());
    encoded.push_back(0x04);
    append(encoded, peer_public);

    ParamBldPtr bld(OSSL_PARAM_BLD_new());
    if (!bld ||
        OSSL_PARAM_BLD_push_utf8_string(bld.get(), OSSL_PKEY_PARAM_GROUP_NAME,
                                        "P-384", 0) != 1 ||
        OSSL_PARAM_BLD_push_octet_string(bld.get(), OSSL_PKEY_PARAM_PUB_KEY,
                                         encoded.data(), encoded.size()) != 1)
        openssl_fail("building peer key params");
    ParamPtr params(OSSL_PARAM_BLD_to_param(bld.get()));
    PkeyCtxPtr fctx(EVP_PKEY_CTX_new_from_name(nullptr, "EC", nullptr));
    EVP_PKEY* peer_raw = nullptr;
    if (!params || !fctx || EVP_PKEY_fromdata_init(fctx.get()) != 1 ||
        EVP_PKEY_fromdata(fctx.get(), &peer_raw, EVP_PKEY_PUBLIC_KEY,
                          params.get()) != 1)
    {
        ERR_clear_error();
        fail(Errc::InvalidPoint, "peer DHE public key is not on the curve");
    }
    KeyHandle peer = wrap(peer_raw);
    PkeyCtxPtr check(EVP_PKEY_CTX_new(peer.get(), nullptr));
    if (!check || EVP_PKEY_public_check(check.get()) != 1)
    {
        ERR_clear_error();
        fail(Errc::InvalidPoint, "peer DHE public key failed validation");
    }

    PkeyCtxPtr ctx(EVP_PKEY_CTX_new(own.private_key.get(), nullptr));
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
        EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) != 1)
        openssl_fail("ECDH setup");
    std::size_t len = 0;
    if (EVP_PKEY_derive(ctx.get(), nullptr, &len) != 1)
        openssl_fail("ECDH (size)");
    Bytes secret(len);
    if (EVP_PKEY_derive(ctx.get(), secret.data(), &len) != 1)
        openssl_fail("ECDH");
    secret.resize(len);
    if (secret.size() < kP384FieldBytes)
        secret.insert(secret.begin(), kP384FieldBytes - secret.size(), 0);
    return secret;
}

Bytes OpenSslProvider::aead_seal(AeadAlgo algo, ByteView key, ByteView nonce,
                                 ByteView aad, ByteView plaintext) const
{
    if (algo != AeadAlgo::Aes256Gcm)
        fail(Errc::InvalidArgument, "unsupported AEAD");
    if (key.size() != kAeadKeySize || nonce.size() != kAeadNonceSize)
        fail(Errc::InvalidArgument, "AEAD key or nonce has wrong length");
    CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    int len = 0;
    Bytes out(plaintext.size() + kAeadTagSize);
    if (!ctx ||
        EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr,
                           nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN,
                            static_cast<int>(nonce.size()), nullptr) != 1 ||
        EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key.data(),
                           nonce.data()) != 1)
        openssl_fail("AES-GCM init");
    if (!aad.empty() && EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(),
                                          static_cast<int>(aad.size())) != 1)
        openssl_fail("AES-GCM aad");
    int total = 0;
    if (!plaintext.empty())
    {
        if (EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(),
                              static_cast<int>(plaintext.size())) != 1)
            openssl_fail("AES-GCM encrypt");
        total = len;
    }
    if (EVP_EncryptFinal_ex(ctx.get(), out.data() + total, &len) != 1)
        openssl_fail("AES-GCM final");
    total += len;
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kAeadTagSize,
                            out.data() + total) != 1)
        openssl_fail("AES-GCM tag");
    out.resize(static_cast<std::size_t>(total) + kAeadTagSize);
    return out;
}

Bytes OpenSslProvider::aead_open(AeadAlgo algo, ByteView key, ByteView nonce,
                                 ByteView aad, ByteView ciphertext) const
{
    if (algo != AeadAlgo::Aes256Gcm)
        fail(Errc::InvalidArgument, "unsupported AEAD");
    if (key.size() != kAeadKeySize || nonce.size() != kAeadNonceSize)
        fail(Errc::InvalidArgument, "AEAD key or nonce has wrong length");
    if (ciphertext.size() < kAeadTagSize)
        fail(Errc::DecryptError, "ciphertext shorter than tag");
    auto body = ciphertext.first(ciphertext.size() - kAeadTagSize);
    auto tag = ciphertext.last(kAeadTagSize);

    CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    int len = 0;
    Bytes out(body.size());
    if (!ctx ||
        EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr,
                           nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN,
                            static_cast<int>(nonce.size()), nullptr) != 1 ||
        EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key.data(),
                           nonce.data()) != 1)
        openssl_fail("AES-GCM init");
    if (!aad.empty() && EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(),
                                          static_cast<int>(aad.size())) != 1)
        openssl_fail("AES-GCM aad");
    int total = 0;
    if (!body.empty())
    {
        if (EVP_DecryptUpdate(ctx.get(), out.data(), &len, body.data(),
                              static_cast<int>(body.size())) != 1)
            openssl_fail("AES-GCM decrypt");
        total = len;
    }
    Bytes tag_copy(tag.begin(), tag.end());
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kAeadTagSize,
                            tag_copy.data()) != 1)
        openssl_fail("AES-GCM set tag");
    if (EVP_DecryptFinal_ex(ctx.get(), out.data() + total, &len) != 1)
    {
        ERR_clear_error();
        secure_wipe(out);
        fail(Errc::DecryptError, "AEAD tag mismatch");
    }
    out.resize(static_cast<std::size_t>(total + len));
    return out;
}

PublicKey OpenSslProvider::verify_certificate_chain(const CertificateChain& chain,
                                                    ByteView trusted_root) const
{
    if (chain.empty())
        fail(Errc::InvalidArgument, "empty certificate chain");
    const Bytes& root = chain.root();
    if (root.size() != trusted_root.size() ||
        std::memcmp(root.data(), trusted_root.data(), root.size()) != 0)
        fail(Errc::UntrustedRoot, "chain root is not the trusted root");

    std::vector<X509Ptr> certs;
    certs.reserve(chain.certificates.size());
    for (const auto& der : chain.certificates)
        certs.push_back(parse_x509(der));

    for (std::size_t i = 0; i < certs.size(); ++i)
    {
        X509* issuer = certs[i == 0 ? 0 : i - 1].get();
        X509* subject = certs[i].get();
        if (X509_NAME_cmp(X509_get_issuer_name(subject),
                          X509_get_subject_name(issuer)) != 0)
            fail(Errc::BrokenLink, "issuer name does not match predecessor");
        EVP_PKEY* issuer_key = X509_get0_pubkey(issuer);
        if (issuer_key == nullptr || X509_verify(subject, issuer_key) != 1)
        {
            ERR_clear_error();
            fail(Errc::BrokenLink, "certificate " + std::to_string(i) +
                                       " is not signed by its predecessor");
        }
    }
    EVP_PKEY* leaf = X509_get_pubkey(certs.back().get());
    return PublicKey(wrap(leaf));
}

Bytes OpenSslProvider::random_bytes(std::size_t n)
{
    return rng_.bytes(n);
}

PrivateKey generate_signing_key(SigAlgo algo)
{
    EVP_PKEY* raw = nullptr;
    switch (algo)
    {
        case SigAlgo::RsaPss3072:
            raw = EVP_PKEY_Q_keygen(nullptr, nullptr, "RSA", std::size_t{3072});
            break;
        case SigAlgo::EcdsaP384:
            raw = EVP_PKEY_Q_keygen(nullptr, nullptr, "EC", "P-384");
            break;
        default: fail(Errc::InvalidArgument, "unsupported signature algorithm");
    }
    if (raw == nullptr)
        openssl_fail("generating signing key");
    return PrivateKey(wrap(raw));
}

namespace
{

void add_extension(X509* cert, X509* issuer, int nid, const std::string& value)
{
    X509V3_CTX ctx;
    X509V3_set_ctx_nodb(&ctx);
    X509V3_set_ctx(&ctx, issuer, cert, nullptr, nullptr, 0);
    X509_EXTENSION* ext = X509V3_EXT_conf_nid(nullptr, &ctx, nid, value.c_str());
    if (ext == nullptr)
        openssl_fail("building certificate extension");
    X509_add_ext(cert, ext, -1);
    X509_EXTENSION_free(ext);
}

// issuer == nullptr produces a self-signed certificate.
X509Ptr make_certificate(const std::string& cn, const PrivateKey& subject_key,
                         X509* issuer, const PrivateKey& issuer_key, bool ca,
                         long serial, std::size_t pad)
{
    X509Ptr cert(X509_new());
    if (!cert)
        openssl_fail("X509_new");
    X509_set_version(cert.get(), 2);
    ASN1_INTEGER_set(X509_get_serialNumber(cert.get()), serial);
    X509_gmtime_adj(X509_getm_notBefore(cert.get()), 0);
    X509_gmtime_adj(X509_getm_notAfter(cert.get()), 60L * 60 * 24 * 365 * 10);
    X509_set_pubkey(cert.get(), subject_key.handle().get());

    X509_NAME* name = X509_get_subject_name(cert.get());
    X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC,
                               reinterpret_cast<const unsigned char*>(cn.c_str()),
                               -1, -1, 0);
    X509_set_issuer_name(cert.get(),
                         issuer ? X509_get_subject_name(issuer) : name);

    X509* issuer_cert = issuer ? issuer : cert.get();
    add_extension(cert.get(), issuer_cert, NID_basic_constraints,
                  ca ? "critical,CA:TRUE" : "critical,CA:FALSE");
    add_extension(cert.get(), issuer_cert, NID_key_usage,
                  ca ? "critical,keyCertSign,cRLSign" : "critical,digitalSignature");
    if (pad > 0)
        add_extension(cert.get(), issuer_cert, NID_netscape_comment,
                      std::string(pad, 'p'));

    if (X509_sign(cert.get(), issuer_key.handle().get(), EVP_sha384()) <= 0)
        openssl_fail("signing certificate");
    return cert;
}

SigAlgo leaf_algorithm(Role role)
{
    return role == Role::Requester ? SigAlgo::RsaPss3072 : SigAlgo::EcdsaP384;
}

} // namespace

Credential generate_test_chain(Role role, const ChainOptions& options)
{
    if (options.depth < 1)
        fail(Errc::InvalidArgument, "chain depth must be at least 1");
    const std::string prefix =
        options.common_name_prefix +
        (role == Role::Requester ? " requester" : " responder");

    std::vector<PrivateKey> ca_keys;
    std::vector<X509Ptr> cas;
    for (std::size_t i = 0; i + 1 < options.depth; ++i)
    {
        ca_keys.push_back(generate_signing_key(SigAlgo::EcdsaP384));
        X509* issuer = cas.empty() ? nullptr : cas.back().get();
        const PrivateKey& signer = cas.empty() ? ca_keys.back() : ca_keys[i - 1];
        std::string cn = prefix + (i == 0 ? " root CA" : " intermediate CA " +
                                                             std::to_string(i));
        cas.push_back(make_certificate(cn, ca_keys.back(), issuer, signer, true,
                                       static_cast<long>(i + 1), 0));
    }

    PrivateKey leaf_key = generate_signing_key(leaf_algorithm(role));
    X509* leaf_issuer = cas.empty() ? nullptr : cas.back().get();
    const PrivateKey& leaf_signer = cas.empty() ? leaf_key : ca_keys.back();
    auto build_leaf = [&](std::size_t pad) {
        return make_certificate(prefix + " leaf", leaf_key, leaf_issuer,
                                leaf_signer, false,
                                static_cast<long>(options.depth), pad);
    };

    Credential cred;
    cred.leaf_key = leaf_key;
    for (auto& ca : cas)
        cred.chain.certificates.push_back(x509_der(ca.get()));
    const std::size_t ca_bytes = cred.chain.serialize().size();
    X509Ptr leaf = build_leaf(0);
    std::size_t size = ca_bytes + x509_der(leaf.get()).size();
    // Extension framing costs roughly 20 bytes on top of the comment text.
    constexpr std::size_t kExtensionOverhead = 20;
    if (options.pad_to_bytes > size + kExtensionOverhead)
    {
        // ECDSA signatures vary in DER length, so refine until exact.
        long pad = static_cast<long>(options.pad_to_bytes - size - kExtensionOverhead);
        for (int attempt = 0; attempt < 64; ++attempt)
        {
            leaf = build_leaf(static_cast<std::size_t>(pad));
            size = ca_bytes + x509_der(leaf.get()).size();
            if (size == options.pad_to_bytes)
                break;
            pad += static_cast<long>(options.pad_to_bytes) - static_cast<long>(size);
            if (pad < 1)
                pad = 1;
        }
    }
    cred.chain.certificates.push_back(x509_der(leaf.get()));
    return cred;
}

void write_chain_pem(const CertificateChain& chain,
                     const std::filesystem::path& path)
{
    BioPtr bio(BIO_new_file(path.c_str(), "w"));
    if (!bio)
        fail(Errc::IoError, "cannot open " + path.string());
    for (const auto& der : chain.certificates)
    {
        auto cert = parse_x509(der);
        if (PEM_write_bio_X509(bio.get(), cert.get()) != 1)
            fail(Errc::IoError, "writing " + path.string());
    }
}

CertificateChain read_chain_pem(const std::filesystem::path& path,
                                std::uint8_t slot)
{
    BioPtr bio(BIO_new_file(path.c_str(), "r"));
    if (!bio)
        fail(Errc::IoError, "cannot open " + path.string());
    CertificateChain chain;
    chain.slot = slot;
    while (true)
    {
        X509Ptr cert(PEM_read_bio_X509(bio.get(), nullptr, nullptr, nullptr));
        if (!cert)
            break;
        chain.certificates.push_back(x509_der(cert.get()));
    }
    ERR_clear_error();
    if (chain.certificates.empty())
        fail(Errc::IoError, "no certificates in " + path.string());
    return chain;
}

void write_private_key_pem(const PrivateKey& key,
                           const std::filesystem::path& path)
{
    BioPtr bio(BIO_new_file(path.c_str(), "w"));
    if (!bio || PEM_write_bio_PrivateKey(bio.get(), key.handle().get(), nullptr,
                                         nullptr, 0, nullptr, nullptr) != 1)
        fail(Errc::IoError, "writing " + path.string());
}

PrivateKey read_private_key_pem(const std::filesystem::path& path)
{
    BioPtr bio(BIO_new_file(path.c_str(), "r"));
    if (!bio)
        fail(Errc::IoError, "cannot open " + path.string());
    EVP_PKEY* key = PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr);
    if (key == nullptr)
    {
        ERR_clear_error();
        fail(Errc::IoError, "no private key in " + path.string());
    }
    return PrivateKey(wrap(key));
}

PublicKey certificate_public_key(ByteView der)
{
    auto cert = parse_x509(der);
    return PublicKey(wrap(X509_get_pubkey(cert.get())));
}

} // namespace spdmsim::crypto
