"""Monte Carlo realization of the fragmentation process.

A fragment of size s >= 1 is an internal node: it draws a split vector and
is replaced by fragments s V_1, ..., s V_b.  Fragments of size < 1 are
external nodes.  N(x) counts internal nodes of the tree started from x.

Seeding scheme.  Replicate ``i`` of an ensemble with master seed ``M`` uses
the root key ``replicate_key(M, i)``; each node's key is derived from its
parent's key and its child index, and the node's split vector is a function
of its key only.  Hence

* results are reproducible bit-for-bit given ``(M, n)`` and do not depend on
  chunking or threads, and
* runs with the same key and different x share split vectors node by node,
  which makes N(x) monotone in x along a fixed key.

Lattice laws (every weight a power of one base R) are walked in exact
exponent arithmetic on log_R sizes, so lattice points x = R^n are never
misclassified by rounding.
"""

from __future__ import annotations

import csv
import heapq
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, _kernels
from .laws import SplitLaw
from .moments import MomentAccumulator

DEFAULT_MAX_VISITS = 10**9
RAW_CAP = 10**6
CHUNK = 4096
MEMO_CAP = 10**7


class WorkCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class FragmentationRun:
    x: float
    n_internal: int
    n_external: int
    max_depth: int
    seed: int | None


def _budget(law: SplitLaw, x: float) -> float:
    """Root size in the units the kernel expects (log_R x for lattice laws)."""
    if law.lattice_exponents is None:
        return float(x)
    if x <= 0:
        return -1.0
    b = math.log(x) / math.log(law.lattice)
    r = round(b)
    return float(r) if abs(b - r) < 1e-9 else b


def run_once(law: SplitLaw, x: float, seed: int | np.random.Generator = 0,
             max_visits: int = DEFAULT_MAX_VISITS) -> FragmentationRun:
    """One tree from a root of size x.

    ``seed`` may be an integer (the run then equals replicate 0 of an
    ensemble with that master seed) or a generator, from which a seed is drawn.
    """
    if x < 0:
        raise ValueError("x must be >= 0")
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(0, 2**63))
    code, params = law.kernel_args()
    key = np.uint64(_kernels.replicate_key(np.uint64(seed), 0))
    a, e, d, st = _kernels.run_tree(code, params, law.b, _budget(law, x), key, max_visits)
    if st == -1:
        raise WorkCapExceeded(f"more than {max_visits} node visits at x={x}")
    return FragmentationRun(float(x), int(a), int(e), int(d), int(seed))


def _lattice_counts(exps, n, memo_cap):
    if n + 1 > memo_cap:
        raise WorkCapExceeded("memo size cap exceeded")
    N = [0] * (n + 1)
    E = [0] * (n + 1)
    D = [0] * (n + 1)
    for k in range(n + 1):
        nk, ek, dk = 1, 0, 0
        for e in exps:
            j = k - e
            if j >= 0:
                nk += N[j]
                ek += E[j]
                dk = max(dk, D[j] + 1)
            else:
                ek += 1
        N[k], E[k], D[k] = nk, ek, dk
    return N[n], E[n], D[n]


def run_deterministic(law: SplitLaw, x: float, memo_cap: int = MEMO_CAP) -> FragmentationRun:
    """Exact counts for a deterministic law by memoized recursion.

    Lattice laws recurse on the integer budget n = floor(log_R x):
    N(n) = 1 + sum_j N(n - e_j).  Other laws memoize on the tuple of times
    each weight has been applied, visiting tuples in order of decreasing size.
    """
    if not law.is_deterministic:
        raise ValueError("run_deterministic needs a deterministic law")
    if x < 1:
        return FragmentationRun(float(x), 0, 0, 0, None)
    if law.lattice_exponents is not None:
        n = math.floor(_budget(law, x))
        a, e, d = _lattice_counts([int(v) for v in law.lattice_exponents], n, memo_cap)
        return FragmentationRun(float(x), a, e, d, None)
    logw = np.log(law.weights)
    b = law.b
    lx = math.log(x)
    start = (0,) * b
    # generate reachable internal tuples, largest size first
    seen = {start}
    order = []
    heap = [(-lx, start)]
    while heap:
        neg, k = heapq.heappop(heap)
        order.append(k)
        if len(seen) > memo_cap:
            raise WorkCapExceeded("memo size cap exceeded")
        for j in range(b):
            c = k[:j] + (k[j] + 1,) + k[j + 1:]
            if c in seen:
                continue
            if float(np.exp(lx + np.dot(c, logw))) >= 1.0:
                seen.add(c)
                heapq.heappush(heap, (-(lx + float(np.dot(c, logw))), c))
    N, E, D = {}, {}, {}
    for k in reversed(order):
        nk, ek, dk = 1, 0, 0
        for j in range(b):
            c = k[:j] + (k[j] + 1,) + k[j + 1:]
            if c in N:
                nk += N[c]
                ek += E[c]
                dk = max(dk, D[c] + 1)
            else:
                ek += 1
        N[k], E[k], D[k] = nk, ek, dk
    return FragmentationRun(float(x), N[start], E[start], D[start], None)


@dataclass
class SimulationEnsemble:
    law: SplitLaw
    x: float
    n: int
    master_seed: int
    acc: MomentAccumulator
    raw: np.ndarray | None = None
    max_depth: int = 0
    identity_violations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def mean(self):
        return self.acc.mean

    @property
    def variance(self):
        return self.acc.variance

    @property
    def stderr(self):
        return self.acc.stderr

    def row(self):
        a = self.acc
        return {
            "x": self.x, "n": a.n, "mean": a.mean, "var": a.variance,
            "m3": a.central_moment(3) if a.n else None,
            "m4": a.central_moment(4) if a.n else None,
            "stderr": a.stderr,
        }

    def header(self):
        return {
            "version": __version__,
            "law": self.law.label,
            "law_hash": self.law.config_hash(),
            "master_seed": self.master_seed,
        }


CSV_FIELDS = ["x", "n", "mean", "var", "m3", "m4", "stderr"]


def _fmt(v):
    return "" if v is None else repr(float(v)) if not isinstance(v, int) else str(v)


def write_ensembles_csv(ensembles, path):
    """CSV of ensemble summaries, preceded by ``#`` lines with version, law hash and seeds."""
    with open(path, "w", newline="") as fh:
        if ensembles:
            h = ensembles[0].header()
            fh.write(f"# fragtree {h['version']} law={h['law']} law_hash={h['law_hash']}\n")
            fh.write("# master_seeds=" + ",".join(str(e.master_seed) for e in ensembles) + "\n")
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for e in ensembles:
            r = e.row()
            w.writerow([_fmt(r[k]) for k in CSV_FIELDS])


def write_raw(ensemble: SimulationEnsemble, path):
    """Raw N values as little-endian float64, one per replicate, no header."""
    if ensemble.raw is None:
        raise ValueError("ensemble kept no raw values")
    np.asarray(ensemble.raw, dtype="<f8").tofile(path)


def read_raw(path) -> np.ndarray:
    return np.fromfile(path, dtype="<f8")


def _chunks(n, size):
    return [(s, min(size, n - s)) for s in range(0, n, size)]


def ensemble(law: SplitLaw, x: float, n: int, master_seed: int = 0, keep_raw: bool = True,
             threads: int | None = None, chunk: int = CHUNK, max_visits: int = DEFAULT_MAX_VISITS,
             raw_cap: int = RAW_CAP) -> SimulationEnsemble:
    """``n`` independent trees at x with streaming moments of N(x).

    Chunks are simulated in any order but merged in chunk order, so the
    result is identical for every thread count.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    code, params = law.kernel_args()
    root = _budget(law, x)
    threads = threads or int(os.environ.get("FRAGTREE_THREADS", os.cpu_count() or 1))
    keep = keep_raw and n <= raw_cap

    def work(span):
        start, size = span
        xs = np.full(size, root)
        a, e, d, st = _kernels.run_batch(code, params, law.b, xs, np.uint64(master_seed), start, max_visits)
        return a, e, d, st

    spans = _chunks(n, chunk)
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, spans))
    else:
        results = [work(s) for s in spans]
    acc = MomentAccumulator()
    raw = [] if keep else None
    depth = 0
    bad = 0
    for a, e, d, st in results:
        if st == -1:
            raise WorkCapExceeded(f"more than {max_visits} node visits at x={x}")
        acc.merge(MomentAccumulator.from_values(a))
        if keep:
            raw.append(a)
        depth = max(depth, int(d.max()))
        if x >= 1:
            bad += int(np.count_nonzero(e != (law.b - 1) * a + 1))
    return SimulationEnsemble(law, float(x), n, int(master_seed), acc,
                              np.concatenate(raw) if keep else None, depth, bad)


def phase_locked_seed(master_seed: int, k: int) -> int:
    """Master seed for the k-th point of a phase-locked sequence."""
    return int(np.random.SeedSequence([int(master_seed), int(k)]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def phase_locked_grid(x0: float, tau: float, k_max: int) -> np.ndarray:
    return x0 * np.exp(2.0 * math.pi * np.arange(k_max + 1) / tau)


def phase_locked_samples(law: SplitLaw, x0: float, tau: float, k_max: int, n: int,
                         master_seed: int = 0, keep_raw: bool = True, **kw) -> list:
    """Ensembles at x_k = x0 exp(2 pi k / tau), k = 0..k_max, sharing one oscillation phase."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return [ensemble(law, float(xk), n, phase_locked_seed(master_seed, k), keep_raw, **kw)
            for k, xk in enumerate(phase_locked_grid(x0, tau, k_max))]
