"""Secure unicast packets: a 64-bit payload encrypted under the session key,
addressed by routing ID, with the sender identified by which session key
verifies the 8-bit MAC."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import bitcodec as bc
from .cipher import RC5_32_255_255, cbc_mac8, cbc_mac8_many, rc5_decrypt_block, rc5_encrypt_block
from .keystore import KeyNotFound, KeyStore

MAC_INPUT_BITS = 128

# Application type reserved for unicast traffic in this implementation.
UNICAST_APP_TYPE = 62


class UnicastError(Exception):
    pass


class NoSessionForDestination(UnicastError):
    pass


class NotAddressed(UnicastError):
    """Routing ID belongs to someone else; a relay candidate."""


class Unidentified(UnicastError):
    pass


class AmbiguousSender(UnicastError):
    def __init__(self, candidates: list[int]):
        super().__init__(f"{len(candidates)} session keys verify the MAC")
        self.candidates = candidates


@dataclass(frozen=True)
class Received:
    sender_mmsi: int
    payload: int


def send_unicast(sender_store: KeyStore, dest_mmsi: int, payload: int,
                 class_user_id: int = 0, application_type: int = UNICAST_APP_TYPE) -> bc.UnicastPacket:
    try:
        sess = sender_store.lookup_session(dest_mmsi)
    except KeyNotFound as exc:
        raise NoSessionForDestination(str(exc)) from None
    if payload < 0 or payload >> 64:
        raise UnicastError("payload must fit 64 bits")
    packet = bc.UnicastPacket(
        routing_id=bc.routing_id_for(dest_mmsi),
        encrypted_payload=rc5_encrypt_block(RC5_32_255_255, sess.key, payload),
        class_user_id=class_user_id,
        application_type=application_type,
    )
    tag = cbc_mac8(sess.key, packet.authenticated_bits(), MAC_INPUT_BITS)
    sess.packets_used += 1
    return replace(packet, hmac=tag)


def is_for_me(packet: bc.UnicastPacket, own_mmsi: int) -> bool:
    return packet.routing_id == bc.routing_id_for(own_mmsi)


def matching_senders(store: KeyStore, packet: bc.UnicastPacket) -> list[int]:
    msg = packet.authenticated_bits()
    return [peer for peer, sess in store.sessions.items()
            if cbc_mac8(sess.key, msg, MAC_INPUT_BITS) == packet.hmac]


def receive_unicast(receiver_store: KeyStore, packet: bc.UnicastPacket, own_mmsi: int) -> Received:
    if not is_for_me(packet, own_mmsi):
        raise NotAddressed(f"routing id {packet.routing_id:06x} is not ours")
    candidates = matching_senders(receiver_store, packet)
    if not candidates:
        raise Unidentified("no session key verifies the MAC")
    if len(candidates) > 1:
        raise AmbiguousSender(candidates)
    sess = receiver_store.sessions[candidates[0]]
    sess.packets_used += 1
    return Received(candidates[0], rc5_decrypt_block(RC5_32_255_255, sess.key, packet.encrypted_payload))


def match_matrix(store: KeyStore, packets: list[bc.UnicastPacket]) -> tuple[list[int], np.ndarray]:
    """Bulk MAC trial: boolean matrix [packet, session] of verifying keys."""
    peers = list(store.sessions)
    msgs = [p.authenticated_bits() for p in packets]
    tags = np.array([p.hmac for p in packets], dtype=np.uint8)
    out = np.zeros((len(packets), len(peers)), dtype=bool)
    for j, peer in enumerate(peers):
        out[:, j] = cbc_mac8_many(store.sessions[peer].key, msgs, MAC_INPUT_BITS) == tags
    return peers, out


def ambiguity_rate(store_size: int) -> float:
    """Expected number of wrong keys verifying an honest packet's tag."""
    return max(0, store_size - 1) / 256
