"""Compiled inner loops: counter-based RNG, split samplers and the tree walk.

Every random quantity is a pure function of a 64-bit key.  A node of the
fragmentation tree owns the key ``child_key(parent_key, j)``, and the i-th
uniform it consumes is ``uniform(node_key, i)``.  Two runs that share a root
key therefore see the same split vector at the same tree path no matter the
starting size, which is what gives the monotone coupling in ``x``.

Family codes (``params`` layout in brackets):

    0  binary uniform           []
    1  flat Dirichlet, b parts  []                 (m-ary and simplex splits)
    2  d-dimensional quad split [d]
    3  beta(a, a') binary       [a, a']
    4  deterministic weights    [w_1, ..., w_b]
    5  lattice                  [e_1, ..., e_b]    (sizes tracked as log_R budget)
    6  empirical table          [row-major (rows, b) table]
"""

import math

import numpy as np
from numba import njit

BINARY = 0
DIRICHLET = 1
QUAD = 2
BETA = 3
DETERMINISTIC = 4
LATTICE = 5
EMPIRICAL = 6

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S12 = np.uint64(12)
_ONE = np.uint64(1)
_WEYL = np.uint64(0xD1B54A32D192ED03)
_TWO52 = 2.0**-52


@njit(cache=True, inline="always")
def mix64(z):
    z = z ^ (z >> _S30)
    z = z * _M1
    z = z ^ (z >> _S27)
    z = z * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def child_key(key, j):
    return mix64(key + (np.uint64(j) + _ONE) * _GOLDEN)


@njit(cache=True, inline="always")
def uniform(key, i):
    # odd multiples of 2**-53: never 0 or 1, and 1 - u is exact
    r = mix64(key ^ ((np.uint64(i) + _ONE) * _WEYL))
    return (float(r >> _S12) + 0.5) * _TWO52


@njit(cache=True)
def replicate_key(master, index):
    return mix64(mix64(np.uint64(master)) + (np.uint64(index) + _ONE) * _GOLDEN)


@njit(cache=True)
def _gamma(shape, key, counter):
    """Marsaglia-Tsang gamma(shape, 1) variate; returns (value, next counter)."""
    boost = 1.0
    if shape < 1.0:
        u = uniform(key, counter)
        counter += 1
        boost = u ** (1.0 / shape)
        shape += 1.0
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        u1 = uniform(key, counter)
        u2 = uniform(key, counter + 1)
        counter += 2
        g = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        v = 1.0 + c * g
        if v <= 0.0:
            continue
        v = v * v * v
        u = uniform(key, counter)
        counter += 1
        if math.log(u) < 0.5 * g * g + d - d * v + d * math.log(v):
            return d * v * boost, counter


@njit(cache=True, inline="always")
def fill_split(code, params, b, key, out):
    """Write one split vector for the node with ``key`` into ``out[:b]``."""
    if code == BINARY:
        u = uniform(key, 0)
        out[0] = u
        out[1] = 1.0 - u
    elif code == DIRICHLET:
        s = 0.0
        for j in range(b):
            e = -math.log(uniform(key, j))
            out[j] = e
            s += e
        for j in range(b):
            out[j] /= s
    elif code == QUAD:
        # doubling: part j takes factor 1 - U_k when bit k of j is set
        d = int(params[0])
        out[0] = 1.0
        half = 1
        for k in range(d):
            u = uniform(key, k)
            for j in range(half):
                out[j + half] = out[j] * (1.0 - u)
                out[j] *= u
            half *= 2
    elif code == BETA:
        g1, c = _gamma(params[0], key, 0)
        g2, c = _gamma(params[1], key, c)
        v = g1 / (g1 + g2)
        # keep both parts strictly inside (0, 1)
        if v >= 1.0:
            v = 1.0 - 2.0**-53
        elif v <= 0.0:
            v = 2.0**-1074
        out[0] = v
        out[1] = 1.0 - v
    elif code == DETERMINISTIC or code == LATTICE:
        for j in range(b):
            out[j] = params[j]
    elif code == EMPIRICAL:
        rows = params.size // b
        r = int(uniform(key, 0) * rows)
        if r >= rows:
            r = rows - 1
        for j in range(b):
            out[j] = params[r * b + j]


@njit(cache=True)
def sample_many(code, params, b, n, seed):
    out = np.empty((n, b))
    buf = np.empty(b)
    for i in range(n):
        fill_split(code, params, b, replicate_key(seed, i), buf)
        for j in range(b):
            out[i, j] = buf[j]
    return out


@njit(cache=True, nogil=True)
def _walk(code, params, b, x, key, max_visits, sizes, keys, depths, buf):
    lattice = code == LATTICE
    threshold = 0.0 if lattice else 1.0
    cap = sizes.size
    sizes[0] = x
    keys[0] = key
    depths[0] = 0
    top = 1
    n_int = 0
    n_ext = 0
    max_depth = 0
    while top > 0:
        top -= 1
        s = sizes[top]
        k = keys[top]
        dep = depths[top]
        n_int += 1
        if n_int > max_visits:
            return n_int, n_ext, max_depth, -1
        if dep > max_depth:
            max_depth = dep
        if top + b > cap:
            return n_int, n_ext, max_depth, -2
        fill_split(code, params, b, k, buf)
        for j in range(b):
            if lattice:
                cs = s - buf[j]
            else:
                cs = s * buf[j]
            if cs >= threshold:
                sizes[top] = cs
                keys[top] = child_key(k, j)
                depths[top] = dep + 1
                top += 1
            else:
                n_ext += 1
    return n_int, n_ext, max_depth, 0


@njit(cache=True, nogil=True)
def run_tree(code, params, b, x, key, max_visits):
    """Walk one fragmentation tree with an explicit stack.

    Returns ``(n_internal, n_external, max_depth, status)``; status is 0 on
    success and -1 when ``max_visits`` internal nodes were exceeded.  For the
    lattice code ``x`` is the log-base-R budget and a node is internal while
    its budget is >= 0; otherwise a node is internal while its size is >= 1.
    """
    threshold = 0.0 if code == LATTICE else 1.0
    if x < threshold:
        return 0, 0, 0, 0
    buf = np.empty(b)
    # stack holds at most depth * (b - 1) + 1 entries; grow and restart on overflow
    cap = 64 * b + 1024
    while True:
        sizes = np.empty(cap)
        keys = np.empty(cap, dtype=np.uint64)
        depths = np.empty(cap, dtype=np.int64)
        res = _walk(code, params, b, x, key, max_visits, sizes, keys, depths, buf)
        if res[3] != -2:
            return res
        cap *= 4


@njit(cache=True, nogil=True)
def run_batch(code, params, b, xs, master, first_index, max_visits):
    """Run ``len(xs)`` replicates with keys ``replicate_key(master, first_index + i)``."""
    n = xs.size
    n_int = np.empty(n, dtype=np.int64)
    n_ext = np.empty(n, dtype=np.int64)
    depth = np.empty(n, dtype=np.int64)
    status = 0
    for i in range(n):
        key = replicate_key(master, first_index + i)
        a, e, d, st = run_tree(code, params, b, xs[i], key, max_visits)
        n_int[i] = a
        n_ext[i] = e
        depth[i] = d
        if st != 0:
            status = st
    return n_int, n_ext, depth, status


@njit(cache=True)
def apply_map(samples, code, params, b, lam, n_out, seed, picks_seed):
    """One step of Z -> sum_r V_r**lam Z_r with bootstrap draws of the Z_r."""
    n_in = samples.size
    out = np.empty(n_out, dtype=np.complex128)
    buf = np.empty(b)
    sr = lam.real
    si = lam.imag
    zr = samples.real.copy()
    zi = samples.imag.copy()
    wr = np.empty(b)
    wi = np.empty(b)
    for i in range(n_out):
        key = replicate_key(seed, i)
        if code == QUAD:
            # V_r**lam as a product of U_k**lam or (1 - U_k)**lam, same layout as fill_split
            d = int(params[0])
            wr[0] = 1.0
            wi[0] = 0.0
            half = 1
            for k in range(d):
                u = uniform(key, k)
                l0 = math.log(u)
                l1 = math.log(1.0 - u)
                m0 = math.exp(sr * l0)
                m1 = math.exp(sr * l1)
                c0 = m0 * math.cos(si * l0)
                s0 = m0 * math.sin(si * l0)
                c1 = m1 * math.cos(si * l1)
                s1 = m1 * math.sin(si * l1)
                for j in range(half):
                    a = wr[j]
                    bb = wi[j]
                    wr[j + half] = a * c1 - bb * s1
                    wi[j + half] = a * s1 + bb * c1
                    wr[j] = a * c0 - bb * s0
                    wi[j] = a * s0 + bb * c0
                half *= 2
        else:
            fill_split(code, params, b, key, buf)
            for r in range(b):
                v = buf[r]
                if v <= 0.0:
                    wr[r] = 0.0
                    wi[r] = 0.0
                    continue
                lv = math.log(v)
                mod = math.exp(sr * lv)
                wr[r] = mod * math.cos(si * lv)
                wi[r] = mod * math.sin(si * lv)
        pk = replicate_key(picks_seed, i)
        ar = 0.0
        ai = 0.0
        for r in range(b):
            idx = int(uniform(pk, r) * n_in)
            if idx >= n_in:
                idx = n_in - 1
            ar += wr[r] * zr[idx] - wi[r] * zi[idx]
            ai += wr[r] * zi[idx] + wi[r] * zr[idx]
        out[i] = complex(ar, ai)
    return out


@njit(cache=True)
def renewal_recurrence(mass, forcing):
    """F[k] = (forcing[k] + sum_{j=1..k} mass[j] F[k-j]) / (1 - mass[0])."""
    n = forcing.size
    out = np.empty(n)
    scale = 1.0 / (1.0 - mass[0])
    m = min(mass.size, n)
    for k in range(n):
        acc = forcing[k]
        top = min(k, m - 1)
        for j in range(1, top + 1):
            acc += mass[j] * out[k - j]
        out[k] = acc * scale
    return out
