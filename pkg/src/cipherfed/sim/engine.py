"""Event engine: deterministic scheduler, instrumentation, two transports.

Messages are delivered in (tick, enqueue-order) order; a send at tick t
arrives at t + 1 + delay. Actors are message-driven objects with no shared
state; the engine serializes all actor work, so runs are reproducible from
the configuration seed on both transports.

The socket transport moves every message through real localhost TCP
connections (4-byte length prefix + wire bytes, per the external protocol):
each actor runs in its own thread behind a socket, the engine routes frames
to it and collects its outbound batch before proceeding, preserving the
exact delivery order of the in-memory scheduler.
"""

from __future__ import annotations

import heapq
import socket
import struct
import threading
import time
from collections import Counter
from dataclasses import dataclass, field

from ..errors import CipherFedError, ExperimentAborted
from . import codec

SETUP_PHASE = "setup"
FEDAVG_PHASE = "fedavg"
REWARD_PHASE = "reward"

_PHASE_BY_TAG = {
    codec.KEY_MATERIAL: SETUP_PHASE,
    codec.TASK: SETUP_PHASE,
    codec.BUDGET: SETUP_PHASE,
    codec.SUBMIT: FEDAVG_PHASE,
    codec.DIV_BATCH_REQ: FEDAVG_PHASE,
    codec.DIV_BATCH_RESP: FEDAVG_PHASE,
    codec.AVG_RELEASE: FEDAVG_PHASE,
    codec.FINAL_MODEL: FEDAVG_PHASE,
    codec.DIV_REQ: REWARD_PHASE,
    codec.DIV_RESP: REWARD_PHASE,
    codec.MUL_REQ: REWARD_PHASE,
    codec.MUL_RESP: REWARD_PHASE,
    codec.REWARD_RELEASE: REWARD_PHASE,
}


@dataclass
class Instrumentation:
    """Message ledger plus the decryption log used by the hygiene checks."""

    message_counts: Counter = field(default_factory=Counter)
    decrypt_log: list = field(default_factory=list)
    dropout_events: list = field(default_factory=list)

    def count_message(self, src, dst, msg):
        if src == dst:
            return  # self-timers are local alarms, not communication
        phase = _PHASE_BY_TAG[msg.tag]
        self.message_counts[(msg.round_index, phase, src)] += 1
        self.message_counts[(msg.round_index, phase, dst)] += 1

    def recorder_for(self, role):
        def record(label):
            self.decrypt_log.append((role, label))

        return record

    def round_counts(self, round_index, phase):
        return {
            role: count
            for (rnd, ph, role), count in sorted(self.message_counts.items())
            if rnd == round_index and ph == phase
        }


class OutBatch:
    """Per-delivery send collector handed to actors as their context."""

    def __init__(self, now):
        self.now = now
        self.sends = []

    def send(self, dst, msg, delay=0):
        self.sends.append((dst, msg, delay))


class Engine:
    def __init__(self, actors, instrumentation=None, transport=None):
        self.actors = dict(actors)
        self.instrumentation = instrumentation or Instrumentation()
        self.transport = transport or MemoryTransport()
        self._queue = []
        self._seq = 0
        self.now = 0

    def enqueue(self, src, dst, msg, delay=0, at=None):
        tick = (self.now + 1 + delay) if at is None else at
        heapq.heappush(
            self._queue, (tick, self._seq, src, dst, codec.encode_message(msg))
        )
        self._seq += 1

    def run(self):
        self.transport.start(self.actors)
        try:
            while self._queue:
                tick, _, src, dst, wire = heapq.heappop(self._queue)
                self.now = tick
                msg = codec.decode_message(wire)
                self.instrumentation.count_message(src, dst, msg)
                try:
                    batch = self.transport.dispatch(dst, self.now, src, msg)
                except CipherFedError as exc:
                    raise ExperimentAborted(
                        f"{dst} failed handling {msg.tag_name} in round "
                        f"{msg.round_index}: {exc}",
                        record={
                            "kind": "failure",
                            "role": dst,
                            "round": msg.round_index,
                            "message": msg.tag_name,
                            "error": type(exc).__name__,
                            "detail": str(exc),
                        },
                    ) from exc
                for out_dst, out_msg, delay in batch:
                    self.enqueue(dst, out_dst, out_msg, delay=delay)
        finally:
            self.transport.stop()


class MemoryTransport:
    """Direct dispatch; messages still pass through the byte codec."""

    def start(self, actors):
        self.actors = actors

    def dispatch(self, role, now, src, msg):
        ctx = OutBatch(now)
        self.actors[role].handle(ctx, src, msg)
        return ctx.sends

    def stop(self):
        pass


# Socket framing. The protocol unit for a message is exactly
#
#     [4-byte big-endian length][WireMessage bytes]
#
# On a direct role-to-role link nothing else would be needed; the router
# star topology used here (one connection per actor, the engine in the
# middle) additionally wraps each unit in a routing envelope carrying what
# the link identity would otherwise imply: the peer role name, the logical
# clock, and for outbound messages the requested delivery delay.
_INBOUND = 0   # engine -> actor: tick + src + message unit
_OUTBOUND = 1  # actor -> engine: delay + dst + message unit
_ERROR = 2     # actor -> engine: exception name and detail
_END = 3       # actor -> engine: end of the outbound batch
_SHUTDOWN = 4  # engine -> actor: close


def _send_frame(conn, kind, body=b""):
    conn.sendall(struct.pack(">IB", len(body) + 1, kind) + body)


def _recv_frame(conn):
    header = _recv_exact(conn, 4)
    if header is None:
        return None, None
    length = struct.unpack(">I", header)[0]
    frame = _recv_exact(conn, length)
    if frame is None:
        return None, None
    return frame[0], frame[1:]


def _pack_unit(msg):
    wire = codec.encode_message(msg)
    return struct.pack(">I", len(wire)) + wire


def _unpack_unit(body, offset):
    length = struct.unpack(">I", body[offset:offset + 4])[0]
    start = offset + 4
    return codec.decode_message(body[start:start + length]), start + length


def _recv_exact(conn, count):
    buf = b""
    while len(buf) < count:
        chunk = conn.recv(count - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class _ActorServer(threading.Thread):
    """One actor behind a localhost TCP socket."""

    def __init__(self, role, actor):
        super().__init__(daemon=True)
        self.role = role
        self.actor = actor
        self.listener = socket.create_server(("127.0.0.1", 0))
        self.port = self.listener.getsockname()[1]

    def run(self):
        conn, _ = self.listener.accept()
        with conn:
            while True:
                kind, body = _recv_frame(conn)
                if kind is None or kind == _SHUTDOWN:
                    return
                now, src_len = struct.unpack(">IH", body[:6])
                src = body[6:6 + src_len].decode()
                msg, _ = _unpack_unit(body, 6 + src_len)
                ctx = OutBatch(now)
                try:
                    self.actor.handle(ctx, src, msg)
                except CipherFedError as exc:
                    detail = f"{type(exc).__name__}:{exc}".encode()
                    _send_frame(conn, _ERROR, detail)
                    continue
                for dst, out_msg, delay in ctx.sends:
                    dst_b = dst.encode()
                    _send_frame(
                        conn, _OUTBOUND,
                        struct.pack(">IH", delay, len(dst_b)) + dst_b
                        + _pack_unit(out_msg),
                    )
                _send_frame(conn, _END)


class SocketTransport:
    """Routes every delivery through a real localhost TCP connection."""

    def start(self, actors):
        self._servers = {}
        self._conns = {}
        for role, actor in actors.items():
            server = _ActorServer(role, actor)
            server.start()
            self._servers[role] = server
        for role, server in self._servers.items():
            self._conns[role] = socket.create_connection(
                ("127.0.0.1", server.port))

    def dispatch(self, role, now, src, msg):
        conn = self._conns[role]
        src_b = src.encode()
        _send_frame(conn, _INBOUND,
                    struct.pack(">IH", now, len(src_b)) + src_b + _pack_unit(msg))
        sends = []
        while True:
            kind, body = _recv_frame(conn)
            if kind == _END:
                return sends
            if kind == _ERROR:
                name, _, detail = body.decode().partition(":")
                raise _ERROR_TYPES.get(name, CipherFedError)(detail)
            if kind != _OUTBOUND:
                raise CipherFedError(f"unexpected socket frame kind {kind}")
            delay, dst_len = struct.unpack(">IH", body[:6])
            dst = body[6:6 + dst_len].decode()
            out_msg, _ = _unpack_unit(body, 6 + dst_len)
            sends.append((dst, out_msg, delay))

    def stop(self):
        for conn in self._conns.values():
            try:
                _send_frame(conn, _SHUTDOWN)
                conn.close()
            except OSError:
                pass
        for server in self._servers.values():
            server.join(timeout=5)
            server.listener.close()


def _error_types():
    from .. import errors

    return {
        name: obj
        for name, obj in vars(errors).items()
        if isinstance(obj, type) and issubclass(obj, CipherFedError)
    }


_ERROR_TYPES = _error_types()


class WallClockTicker:
    """Maps monotonic seconds to ticks for wall-clock acceptance windows.

    The simulator itself runs on logical ticks; this adapter exists for
    socket deployments that want real-time windows.
    """

    def __init__(self, seconds_per_tick=0.05):
        self.seconds_per_tick = seconds_per_tick
        self._start = time.monotonic()

    def now(self):
        return int((time.monotonic() - self._start) / self.seconds_per_tick)
