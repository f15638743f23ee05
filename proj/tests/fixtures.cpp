// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: Copyright spdmsim authors

#include "fixtures.hpp"

#include <spdmsim/protocol.hpp>

namespace spdmsim::testing
{

const Identities& identities()
{
    static const Identities ids = [] {
        Identities i;
        crypto::ChainOptions rsp;
        rsp.pad_to_bytes = protocol::kDefaultChainBytes;
        i.responder = crypto::generate_test_chain(crypto::Role::Responder, rsp);
        i.requester = crypto::generate_test_chain(crypto::Role::Requester);
        crypto::ChainOptions rogue;
        rogue.common_name_prefix = "rogue";
        i.rogue = crypto::generate_test_chain(crypto::Role::Responder, rogue);
        return i;
    }();
    return ids;
}

ResponderConfig responder_config()
{
    return ResponderConfig{};
}

RequesterConfig requester_config(bool with_credential)
{
    RequesterConfig c;
    c.trusted_responder_roots.push_back(identities().responder.chain.root());
    if (with_credential)
        c.credential = identities().requester;
    c.psk_table[kPskHint] = kPskSecret;
    return c;
}

std::shared_ptr<Responder> make_responder(std::shared_ptr<crypto::CryptoProvider> provider,
                                          ResponderConfig config)
{
    auto r = std::make_shared<Responder>(std::move(config), provider);
    r->provision_slot(0, identities().responder);
    r->provision_measurements(protocol::default_measurements(*provider));
    r->provision_psk(kPskHint, kPskSecret);
    r->trust_requester_root(identities().requester.chain.root());
    return r;
}

Link make_link(RequesterConfig rc, ResponderConfig sc)
{
    Link l;
    l.responder_crypto = std::make_shared<crypto::CountingProvider>(
        std::make_shared<crypto::OpenSslProvider>());
    l.requester_crypto = std::make_shared<crypto::CountingProvider>(
        std::make_shared<crypto::OpenSslProvider>());
    l.responder = make_responder(l.responder_crypto, std::move(sc));
    auto responder = l.responder;
    l.channel = std::make_shared<transport::InterceptingChannel>(
        std::make_unique<transport::LoopbackChannel>(
            [responder](ByteView frame) { return responder->handle_frame(frame); }));
    l.requester = std::make_unique<Requester>(std::move(rc), l.requester_crypto, l.channel);
    return l;
}

void authenticate(Requester& requester)
{
    requester.init_connection();
    requester.fetch_digests();
    requester.fetch_certificate(0);
    requester.challenge_authenticate(0);
}

} // namespace spdmsim::testing
