// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#pragma once

#include <spdmsim/crypto.hpp>
#include <spdmsim/requester.hpp>
#include <spdmsim/responder.hpp>
#include <spdmsim/transport.hpp>

#include <memory>

namespace spdmsim::testing
{

// Generated once per process: RSA key generation dominates test time.
struct Identities
{
    crypto::Credential responder;
    crypto::Credential requester;
    // Independent responder hierarchy that nobody trusts.
    crypto::Credential rogue;
};

const Identities& identities();

inline const Bytes kPskHint = to_bytes("spdmsim-psk-0");
inline const Bytes kPskSecret = Bytes(48, 0x5a);

ResponderConfig responder_config();
RequesterConfig requester_config(bool with_credential = true);

// Slot 0, default measurements, the PSK above and the requester root.
std::shared_ptr<Responder> make_responder(std::shared_ptr<crypto::CryptoProvider> provider,
                                          ResponderConfig config = responder_config());

struct Link
{
    std::shared_ptr<crypto::CountingProvider> responder_crypto;
    std::shared_ptr<crypto::CountingProvider> requester_crypto;
    std::shared_ptr<Responder> responder;
    std::shared_ptr<transport::InterceptingChannel> channel;
    std::unique_ptr<Requester> requester;
};

// Requester and responder joined by a recording loopback channel.
Link make_link(RequesterConfig rc = requester_config(),
               ResponderConfig sc = responder_config());

// init_connection, digests, certificate slot 0, challenge.
void authenticate(Requester& requester);

} // namespace spdmsim::testing
