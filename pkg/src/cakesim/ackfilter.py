"""Removal of redundant pure ACKs from a flow queue at enqueue time."""

from __future__ import annotations

import enum
from typing import Optional, Sequence

from .pktmodel import Packet, Protocol, TcpFlag, TcpOption, seq_after, seq_geq

_CONTROL = TcpFlag.SYN | TcpFlag.FIN | TcpFlag.RST | TcpFlag.URG
_SEPARATELY_CHECKED = {TcpOption.EOL, TcpOption.NOP, TcpOption.SACK, TcpOption.TIMESTAMP}


class AckFilterMode(enum.Enum):
    OFF = "off"
    CONSERVATIVE = "on"
    AGGRESSIVE = "aggressive"


def is_pure_ack(pkt: Packet) -> bool:
    t = pkt.tcp
    return (
        pkt.protocol == Protocol.TCP
        and t is not None
        and pkt.payload_len == 0
        and bool(t.flags & TcpFlag.ACK)
        and not t.flags & _CONTROL
    )


def same_flow(a: Packet, b: Packet) -> bool:
    return (
        a.src_ip == b.src_ip
        and a.dst_ip == b.dst_ip
        and a.src_port == b.src_port
        and a.dst_port == b.dst_port
        and a.protocol == b.protocol
    )


def _sack_covered(old_blocks: Sequence[tuple[int, int]], ack: int, new_blocks) -> bool:
    for start, end in old_blocks:
        if seq_geq(ack, end):
            continue
        if not any(seq_geq(start, ns) and seq_geq(ne, end) for ns, ne in new_blocks):
            return False
    return True


def makes_redundant(new: Packet, old: Packet) -> bool:
    """True when every piece of sender-relevant information in ``old`` is in ``new``.

    Both must be pure ACKs of the same flow. Window updates are judged
    against ``old.ack_prev`` (the ack/window of the packet enqueued before
    ``old`` in its flow), set by the qdisc at enqueue.
    """
    n, o = new.tcp, old.tcp
    if not seq_after(n.ack, o.ack):
        return False
    if o.has_unknown_option:
        return False
    if (n.flags ^ o.flags) & (TcpFlag.ECE | TcpFlag.CWR):
        return False
    if o.window != n.window:
        prev = old.ack_prev
        if prev is None or prev[1] != o.window:
            return False
    if o.sack_blocks and not _sack_covered(o.sack_blocks, n.ack, n.sack_blocks):
        return False
    if o.tsval is not None:
        if n.tsval is None or not seq_geq(n.tsval, o.tsval):
            return False
        if o.tsecr is not None and (n.tsecr is None or not seq_geq(n.tsecr, o.tsecr)):
            return False
    extra = set(o.options) - _SEPARATELY_CHECKED
    if extra and not extra <= set(n.options):
        return False
    return True


def filter_on_enqueue(queue, new: Packet, mode: AckFilterMode) -> Optional[Packet]:
    """Drop at most one queued ACK made redundant by ``new`` (already appended).

    Only the trailing run of pure ACKs from the same flow is scanned, newest
    first. ACKs that belong to a run of duplicates are never taken, so the
    duplicate-ACK count seen by the sender is preserved. Aggressive mode takes
    the newest eligible ACK; conservative mode takes the oldest one and only
    while at least two redundant ACKs would remain queued.
    """
    if mode is AckFilterMode.OFF or not is_pure_ack(new):
        return None
    redundant = 0
    victim_pos = -1
    next_ack = new.tcp.ack
    # queue[-1] is ``new``
    for pos in range(len(queue) - 2, -1, -1):
        old = queue[pos]
        if not same_flow(old, new):
            continue
        if not is_pure_ack(old):
            break
        ack = old.tcp.ack
        in_dup_run = ack == next_ack or (old.ack_prev is not None and old.ack_prev[0] == ack)
        next_ack = ack
        if not makes_redundant(new, old):
            continue
        redundant += 1
        if in_dup_run:
            continue
        if mode is AckFilterMode.AGGRESSIVE:
            victim_pos = pos
            break
        victim_pos = pos
    if victim_pos < 0:
        return None
    if mode is AckFilterMode.CONSERVATIVE and redundant - 1 < 2:
        return None
    victim = queue[victim_pos]
    del queue[victim_pos]
    return victim
