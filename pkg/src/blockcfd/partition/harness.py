"""In-process simulated ranks exchanging messages through mailboxes.

Each rank runs a plain function ``program(ctx)`` in its own thread and
communicates only through ``ctx.send`` and ``ctx.recv``. Delivery is
reliable and ordered per (sender, receiver) pair.

Two scheduling modes:

``deterministic``
    Only one rank runs at a time. Control passes round-robin whenever the
    running rank blocks on an empty mailbox or finishes, so the message
    schedule is identical on every run. If every unfinished rank is blocked
    the run fails with a ``DistributedError`` naming the stuck ranks.
``threaded``
    Ranks run freely; a receive that waits longer than ``timeout`` seconds
    fails with a ``DistributedError``.
"""

from __future__ import annotations

import queue
import threading
from collections import deque

import numpy as np

from ..errors import DistributedError

MODES = ("deterministic", "threaded")


class _Abort(BaseException):
    """Unwinds a rank thread after another rank failed."""


class RankContext:
    def __init__(self, harness, rank):
        self.harness = harness
        self.rank = rank
        self.n_ranks = harness.n_ranks

    def send(self, dest, tag, payload):
        self.harness._send(self.rank, dest, tag, payload)

    def recv(self, src, tag):
        return self.harness._recv(self.rank, src, tag)


class Harness:
    """Runs one program per rank and returns their results in rank order."""

    def __init__(self, n_ranks, mode="deterministic", timeout=10.0):
        if n_ranks < 1:
            raise ValueError("need at least one rank")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.n_ranks = int(n_ranks)
        self.mode = mode
        self.timeout = timeout
        self.messages_sent = 0
        self.log = []

    # -- public ---------------------------------------------------------------
    def run(self, program, *args):
        """Execute ``program(ctx, *args)`` on every rank."""
        n = self.n_ranks
        self._error = None
        self._results = [None] * n
        if self.mode == "deterministic":
            self._cond = threading.Condition()
            self._boxes = {}
            self._state = ["ready"] * n
            self._waiting_on = [None] * n
            self._current = 0
        else:
            self._queues = {}
            self._qlock = threading.Lock()
        threads = [threading.Thread(target=self._main, args=(r, program, args), daemon=True)
                   for r in range(n)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if self._error is not None:
            raise self._error
        return self._results

    # -- rank thread ------------------------------------------------------------
    def _main(self, rank, program, args):
        ctx = RankContext(self, rank)
        try:
            if self.mode == "deterministic":
                self._wait_turn(rank)
            self._results[rank] = program(ctx, *args)
        except _Abort:
            pass
        except BaseException as exc:  # noqa: BLE001 - re-raised by run()
            if self._error is None:
                self._error = exc
            if self.mode == "deterministic":
                with self._cond:
                    self._cond.notify_all()
        finally:
            if self.mode == "deterministic":
                with self._cond:
                    self._state[rank] = "done"
                    self._pass_turn(rank)

    # -- deterministic scheduling ------------------------------------------------
    def _wait_turn(self, rank):
        with self._cond:
            while self._current != rank and self._error is None:
                self._cond.wait()
            if self._error is not None:
                raise _Abort

    def _pass_turn(self, rank):
        """Hand control to the next runnable rank after ``rank``. Caller holds the lock."""
        n = self.n_ranks
        for k in range(1, n + 1):
            r = (rank + k) % n
            if self._state[r] == "ready":
                self._current = r
                self._cond.notify_all()
                return
        stuck = [r for r in range(n) if self._state[r] == "blocked"]
        if stuck and self._error is None:
            peers = [self._waiting_on[r] for r in stuck]
            desc = ", ".join(f"rank {r} waits for rank {p}" for r, p in zip(stuck, peers))
            self._error = DistributedError(f"deadlock: {desc}", waiting=stuck, peers=peers)
        self._current = -1
        self._cond.notify_all()

    def _check_peer(self, rank, peer):
        if not 0 <= peer < self.n_ranks:
            raise DistributedError(f"rank {rank} addressed unknown rank {peer}",
                                   waiting=[rank], peers=[peer])

    def _send(self, src, dest, tag, payload):
        self._check_peer(src, dest)
        self.messages_sent += 1
        if self.mode == "threaded":
            with self._qlock:
                q = self._queues.setdefault((src, dest), queue.Queue())
            q.put((tag, payload))
            return
        with self._cond:
            self.log.append((src, dest, tag))
            self._boxes.setdefault((src, dest), deque()).append((tag, payload))
            if self._state[dest] == "blocked" and self._waiting_on[dest] == src:
                self._state[dest] = "ready"

    def _recv(self, rank, src, tag):
        self._check_peer(rank, src)
        if self.mode == "threaded":
            with self._qlock:
                q = self._queues.setdefault((src, rank), queue.Queue())
            try:
                got_tag, payload = q.get(timeout=self.timeout)
            except queue.Empty:
                raise DistributedError(
                    f"rank {rank} timed out after {self.timeout} s waiting for rank {src} ({tag})",
                    waiting=[rank], peers=[src]) from None
            return self._match(rank, src, tag, got_tag, payload)
        with self._cond:
            box = self._boxes.setdefault((src, rank), deque())
            while not box:
                self._state[rank] = "blocked"
                self._waiting_on[rank] = src
                self._pass_turn(rank)
                while self._current != rank and self._error is None:
                    self._cond.wait()
                if self._error is not None:
                    raise _Abort
            self._state[rank] = "ready"
            self._waiting_on[rank] = None
            got_tag, payload = box.popleft()
        return self._match(rank, src, tag, got_tag, payload)

    @staticmethod
    def _match(rank, src, tag, got_tag, payload):
        if got_tag != tag:
            raise DistributedError(
                f"rank {rank} expected message {tag!r} from rank {src}, got {got_tag!r}",
                waiting=[rank], peers=[src])
        return payload


# ---------------------------------------------------------------------------
# collectives over a subset of ranks
# ---------------------------------------------------------------------------

def allreduce_sum(ctx: RankContext, value, group=None, tag="allreduce"):
    """Sum ``value`` over ``group`` (default: all ranks) with a fixed binary tree.

    The combination order depends only on the group, never on timing, so
    the result is bit-reproducible. Every member receives the same value.
    """
    group = list(range(ctx.n_ranks)) if group is None else list(group)
    me = group.index(ctx.rank)
    p = len(group)
    acc = value
    step = 1
    while step < p:
        if me % (2 * step) == step:
            ctx.send(group[me - step], tag, acc)
            break
        if me % (2 * step) == 0 and me + step < p:
            acc = acc + ctx.recv(group[me + step], tag)
        step *= 2
    # broadcast back down the same tree
    if me == 0:
        step = 1
        while step < p:
            step *= 2
        result = acc
    else:
        low = me & -me
        result = ctx.recv(group[me - low], tag + ":bcast")
        step = low
    step //= 2
    while step >= 1:
        if me % (2 * step) == 0 and me + step < p:
            ctx.send(group[me + step], tag + ":bcast", result)
        step //= 2
    return result


def gather_to(ctx: RankContext, root, value, group, tag="gather"):
    """Collect ``value`` from every member of ``group`` at ``root`` (list in group order)."""
    if ctx.rank != root:
        ctx.send(root, tag, value)
        return None
    return [value if r == root else ctx.recv(r, tag) for r in group]


def as_float(x):
    return float(np.asarray(x))
