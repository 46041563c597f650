"""Synchronous rounds over in-process calls or TCP sockets.

Both transports carry the same encoded wire frames, so they produce
bit-identical outputs and byte counts. On TCP each message is sent as::

    u32 big-endian frame length | u64 little-endian round index | wire frame

Each worker opens one connection per shard and announces itself with a
little-endian u32 worker id.
"""

from __future__ import annotations

import socket
import struct
import threading
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout

import numpy as np

from ..compressors import decode_frame, decompress, encode_frame
from ..core import DeterministicRng, gradient_vector
from ..errors import ProtocolError, WorkerCountMismatch

from .aggregation import intra_node_reduce, shard_reduce, worker_push
from .config import AggregationConfig
from .sharding import assign_shard, weighted_assignment
from .state import ServerShardState, WorkerState

_LEN = struct.Struct(">I")
_ROUND = struct.Struct("<Q")
_HELLO = struct.Struct("<I")


class ConnectionClosed(ProtocolError):
    """The peer closed the connection cleanly between messages."""


def shard_map(cfg: AggregationConfig, sizes: Mapping[int, int]) -> dict[int, int]:
    """Tensor id -> shard id under the configured policy."""
    if cfg.shard_policy == "weighted":
        weights = {tid: cfg.kind_for(d).frame_size(d) for tid, d in sizes.items()}
        return weighted_assignment(weights, cfg.shard_count)
    return {tid: assign_shard(tid, cfg.shard_count) for tid in sizes}


def _prepare(cfg: AggregationConfig, gradients: Sequence[Mapping[int, object]]) -> list[dict[int, np.ndarray]]:
    if len(gradients) != cfg.n_workers:
        raise WorkerCountMismatch(f"expected gradients from {cfg.n_workers} workers, got {len(gradients)}")
    out = []
    for per_worker in gradients:
        if cfg.local_devices > 1:
            out.append({tid: intra_node_reduce(g) for tid, g in per_worker.items()})
        else:
            out.append({tid: gradient_vector(g) for tid, g in per_worker.items()})
    tids = sorted(out[0])
    for i, per_worker in enumerate(out):
        if sorted(per_worker) != tids:
            raise ProtocolError(f"worker {i} sent a different tensor set")
    return out


def _agree(outputs: list[dict[int, np.ndarray]]) -> dict[int, np.ndarray]:
    first = outputs[0]
    for i, other in enumerate(outputs[1:], start=1):
        for tid, v in first.items():
            if v.tobytes() != other[tid].tobytes():
                raise ProtocolError(f"worker {i} decoded a different pull for tensor {tid}")
    return first


class InProcessTransport:
    """Direct calls; frames are still encoded and decoded so byte counts match TCP."""

    def __init__(self, cfg: AggregationConfig, shards: Sequence[ServerShardState], rng: DeterministicRng):
        self.cfg = cfg
        self.shards = list(shards)
        self.rng = rng

    def round(self, workers: Sequence[WorkerState], grads: list[dict[int, np.ndarray]],
              iteration: int) -> dict[int, np.ndarray]:
        cfg = self.cfg
        rng = self.rng.at(iteration=iteration)
        sizes = {tid: g.size for tid, g in grads[0].items()}
        placement = shard_map(cfg, sizes)
        outputs = [{} for _ in workers]
        for tid in sorted(sizes):
            frames = []
            for ws, g in zip(workers, grads):
                frame = encode_frame(worker_push(cfg, ws, tid, g[tid], rng), tid)
                ws.bytes_pushed += len(frame)
                frames.append(frame)
            msgs = [decode_frame(f)[1] for f in frames]
            pull = encode_frame(shard_reduce(cfg, self.shards[placement[tid]], tid, msgs, rng), tid)
            for ws, out in zip(workers, outputs):
                ws.bytes_pulled += len(pull)
                out[tid] = decompress(decode_frame(pull)[1])
        return _agree(outputs)

    def close(self):
        pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if not buf:
                raise ConnectionClosed("connection closed")
            raise ProtocolError(f"connection closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def send_message(sock: socket.socket, round_index: int, frame: bytes) -> None:
    sock.sendall(_LEN.pack(len(frame)) + _ROUND.pack(round_index) + frame)


def recv_message(sock: socket.socket) -> tuple[int, bytes]:
    (length,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
    (round_index,) = _ROUND.unpack(_recv_exact(sock, _ROUND.size))
    return round_index, _recv_exact(sock, length)


class _ShardServer(threading.Thread):
    """One shard behind a listening socket; serves rounds until a worker disconnects."""

    def __init__(self, cfg, state: ServerShardState, rng, tensors: Sequence[int], host: str,
                 port: int, timeout: float):
        super().__init__(daemon=True, name=f"shard-{state.shard_id}")
        self.cfg, self.state, self.rng = cfg, state, rng
        self.tensors = list(tensors)
        self.timeout = timeout
        self.listener = socket.create_server((host, port))
        self.listener.settimeout(timeout)
        self.address = self.listener.getsockname()[:2]
        self.error: BaseException | None = None
        self.last_round = -1

    def run(self):
        conns: dict[int, socket.socket] = {}
        try:
            while len(conns) < self.cfg.n_workers:
                conn, _ = self.listener.accept()
                conn.settimeout(None)  # idle between rounds is fine; workers own the timeouts
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                (wid,) = _HELLO.unpack(_recv_exact(conn, _HELLO.size))
                if wid in conns or wid >= self.cfg.n_workers:
                    raise ProtocolError(f"unexpected worker id {wid}")
                conns[wid] = conn
            while True:
                try:
                    self._serve_round(conns)
                except ConnectionClosed:
                    return
        except BaseException as exc:  # surfaced to the caller through .error
            self.error = exc
        finally:
            for c in conns.values():
                c.close()
            self.listener.close()

    def _serve_round(self, conns):
        if not self.tensors:
            # nothing assigned; block until the workers hang up
            _recv_exact(conns[0], 1)
        received = {tid: [None] * self.cfg.n_workers for tid in self.tensors}
        round_index = None
        for wid in range(self.cfg.n_workers):
            for tid in self.tensors:
                rnd, frame = recv_message(conns[wid])
                if round_index is None:
                    if rnd <= self.last_round:
                        raise ProtocolError(f"round {rnd} does not follow round {self.last_round}")
                    round_index = rnd
                elif rnd != round_index:
                    raise ProtocolError(f"worker {wid} sent round {rnd}, shard is in round {round_index}")
                got_tid, msg = decode_frame(frame)
                if got_tid != tid:
                    raise ProtocolError(f"worker {wid} sent tensor {got_tid}, shard expects {tid}")
                received[tid][wid] = msg
        rng = self.rng.at(iteration=round_index)
        pulls = [encode_frame(shard_reduce(self.cfg, self.state, tid, received[tid], rng), tid)
                 for tid in self.tensors]
        for wid in range(self.cfg.n_workers):
            for frame in pulls:
                send_message(conns[wid], round_index, frame)
        self.last_round = round_index


class TcpTransport:
    """Loopback (or configured) TCP cluster: one server thread per shard.

    The tensor layout (id -> length) is fixed at construction because each
    shard must know which frames to expect every round.
    """

    def __init__(self, cfg: AggregationConfig, shards: Sequence[ServerShardState], rng: DeterministicRng,
                 sizes: Mapping[int, int], host: str = "127.0.0.1", port: int = 0, timeout: float = 30.0):
        self.cfg = cfg
        self.rng = rng
        self.sizes = dict(sizes)
        self.placement = shard_map(cfg, self.sizes)
        self.timeout = timeout
        self.servers = []
        for s, state in enumerate(shards):
            tensors = sorted(t for t, sh in self.placement.items() if sh == s)
            srv = _ShardServer(cfg, state, rng, tensors, host, port + s if port else 0, timeout)
            srv.start()
            self.servers.append(srv)
        self.sockets: list[list[socket.socket]] = []
        for wid in range(cfg.n_workers):
            row = []
            for srv in self.servers:
                sock = socket.create_connection(srv.address, timeout=timeout)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                sock.sendall(_HELLO.pack(wid))
                row.append(sock)
            self.sockets.append(row)
        self._pool = ThreadPoolExecutor(max_workers=cfg.n_workers)

    def _worker_round(self, ws: WorkerState, grads: dict[int, np.ndarray], iteration: int) -> dict[int, np.ndarray]:
        rng = self.rng.at(iteration=iteration)
        socks = self.sockets[ws.worker_id]
        for s, srv in enumerate(self.servers):
            for tid in srv.tensors:
                frame = encode_frame(worker_push(self.cfg, ws, tid, grads[tid], rng), tid)
                ws.bytes_pushed += len(frame)
                send_message(socks[s], iteration, frame)
        out = {}
        for s, srv in enumerate(self.servers):
            for tid in srv.tensors:
                rnd, frame = recv_message(socks[s])
                if rnd != iteration:
                    raise ProtocolError(f"pull for round {rnd} arrived during round {iteration}")
                got_tid, msg = decode_frame(frame)
                if got_tid != tid:
                    raise ProtocolError(f"pull for tensor {got_tid} arrived, expected {tid}")
                ws.bytes_pulled += len(frame)
                out[tid] = decompress(msg)
        return out

    def round(self, workers: Sequence[WorkerState], grads: list[dict[int, np.ndarray]],
              iteration: int) -> dict[int, np.ndarray]:
        if {t: g.size for t, g in grads[0].items()} != self.sizes:
            raise ProtocolError("tensor layout differs from the one the TCP cluster was built for")
        futures = [self._pool.submit(self._worker_round, ws, g, iteration) for ws, g in zip(workers, grads)]
        try:
            outputs = [f.result(timeout=self.timeout) for f in futures]
        except (socket.timeout, FutureTimeout) as exc:
            raise TimeoutError(f"round {iteration} timed out") from exc
        except ProtocolError:
            for srv in self.servers:
                if srv.error is not None:
                    raise ProtocolError(f"shard {srv.state.shard_id} failed: {srv.error}") from srv.error
            raise
        return _agree(outputs)

    def close(self):
        for row in self.sockets:
            for sock in row:
                sock.close()
        self._pool.shutdown(wait=True)
        for srv in self.servers:
            srv.join(timeout=self.timeout)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
