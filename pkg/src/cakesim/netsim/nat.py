"""Source NAT in front of the uplink qdisc."""

from __future__ import annotations

from typing import Optional

from ..flowtable import NatTable
from ..pktmodel import Packet


def nat_translate(pkt: Packet, nat_table: Optional[NatTable]) -> Packet:
    """Rewrite an outbound packet's internal source to the public address.

    The mapping is recorded in ``nat_table`` so the qdisc can recover the
    internal host later. Identity when NAT is disabled.
    """
    if nat_table is None:
        return pkt
    port = nat_table.translate_out(int(pkt.protocol), pkt.src_ip, pkt.src_port)
    pkt.internal_src_ip = pkt.src_ip
    pkt.src_ip = nat_table.public_ip
    pkt.src_port = port
    return pkt


def nat_reverse(pkt: Packet, nat_table: Optional[NatTable]) -> Packet:
    """Rewrite an inbound packet addressed to the public side to its internal host."""
    if nat_table is None or pkt.dst_ip != nat_table.public_ip:
        return pkt
    m = nat_table.lookup(int(pkt.protocol), pkt.dst_port)
    if m is not None:
        pkt.internal_dst_ip = m[0]
        pkt.dst_ip, pkt.dst_port = m
    return pkt
