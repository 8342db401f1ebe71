"""Split laws: the distribution of the split vector (V_1, ..., V_b).

A law is an immutable description.  It can be built from the factory
functions below, from the compact text grammar used on the command line
(:func:`parse_law`), or from a JSON config (:func:`law_from_config`); both text
forms round-trip.

Law grammar::

    law     := "binary"
             | "mary:" INT            (m >= 2)
             | "quad:" INT            (d >= 1)
             | "simplex:" INT         (d >= 1)
             | "beta:" REAL "," REAL
             | "det:" w ("," w)+      (w = REAL or INT "/" INT)
             | "lattice:" REAL ":" INT ("," INT)+
             | "empirical:" PATH      (.npy or whitespace/comma separated text)
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import _kernels

FAMILIES = ("binary", "mary", "quad", "simplex", "beta", "deterministic", "lattice", "empirical")


class LawError(ValueError):
    """Invalid split-law specification."""


@dataclass(frozen=True)
class SplitLaw:
    """Distribution of a split vector on the standard simplex.

    ``params`` holds the family parameters: ``(m,)`` for mary, ``(d,)`` for
    quad and simplex, ``(a, a2)`` for beta, the weights for deterministic and
    ``(R, e_1, ..., e_b)`` for lattice.  ``lattice`` is the declared lattice
    base R, ``None`` for a non-lattice law; ``lattice_flag`` renders it as the
    tri-state text used in reports.
    """

    family: str
    params: tuple = ()
    b: int = 2
    lattice: float | None = None
    lattice_exponents: tuple | None = None
    lattice_known: bool = True
    condition_a: bool = True
    source: str | None = None
    table: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.b < 2:
            raise LawError("a split law needs b >= 2 parts")

    @property
    def lattice_flag(self) -> str:
        if not self.lattice_known:
            return "unknown"
        if self.lattice is None:
            return "non_lattice"
        return f"lattice({self.lattice!r})"

    @property
    def is_deterministic(self) -> bool:
        return self.family in ("deterministic", "lattice")

    @property
    def weights(self) -> np.ndarray:
        """Fixed split weights of a deterministic or lattice law."""
        if self.family == "deterministic":
            return np.array(self.params, dtype=float)
        if self.family == "lattice":
            R = self.params[0]
            return np.array([R ** -e for e in self.params[1:]], dtype=float)
        raise LawError(f"{self.family} law has no fixed weights")

    @property
    def is_rational(self) -> bool:
        """True when phi is a rational function of z."""
        if self.family in ("binary", "mary", "quad", "simplex"):
            return True
        if self.family == "beta":
            return all(float(p).is_integer() for p in self.params)
        return False

    @property
    def label(self) -> str:
        return format_law(self)

    def kernel_args(self):
        """Family code and parameter array understood by the compiled sampler."""
        f = self.family
        if f == "binary":
            return _kernels.BINARY, np.zeros(0)
        if f in ("mary", "simplex"):
            return _kernels.DIRICHLET, np.zeros(0)
        if f == "quad":
            return _kernels.QUAD, np.array([float(self.params[0])])
        if f == "beta":
            return _kernels.BETA, np.array(self.params, dtype=float)
        if self.lattice_exponents is not None:
            return _kernels.LATTICE, np.array(self.lattice_exponents, dtype=float)
        if f == "deterministic":
            return _kernels.DETERMINISTIC, np.array(self.params, dtype=float)
        if f == "empirical":
            return _kernels.EMPIRICAL, np.ascontiguousarray(self.table, dtype=float).ravel()
        raise LawError(f"unknown family {f!r}")

    def to_config(self) -> dict:
        cfg = {"family": self.family, "b": self.b}
        if self.family in ("mary", "quad", "simplex"):
            cfg["params"] = {"m" if self.family == "mary" else "d": int(self.params[0])}
        elif self.family == "beta":
            cfg["params"] = {"a": self.params[0], "a2": self.params[1]}
        elif self.family == "deterministic":
            cfg["params"] = {"weights": list(self.params)}
        elif self.family == "lattice":
            cfg["params"] = {"R": self.params[0], "exponents": list(self.params[1:])}
        elif self.family == "empirical":
            cfg["params"] = {"path": self.source}
        cfg["lattice_flag"] = self.lattice_flag
        cfg["condition_a"] = self.condition_a
        return cfg

    def config_hash(self) -> str:
        blob = json.dumps(self.to_config(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def binary() -> SplitLaw:
    return SplitLaw("binary", (), 2)


def mary(m: int) -> SplitLaw:
    if int(m) != m or m < 2:
        raise LawError("mary needs an integer m >= 2")
    return SplitLaw("mary", (int(m),), int(m))


def quad(d: int) -> SplitLaw:
    if int(d) != d or d < 1 or d > 16:
        raise LawError("quad needs an integer 1 <= d <= 16")
    return SplitLaw("quad", (int(d),), 2 ** int(d))


def simplex(d: int) -> SplitLaw:
    if int(d) != d or d < 1:
        raise LawError("simplex needs an integer d >= 1")
    return SplitLaw("simplex", (int(d),), int(d) + 1)


def beta(a: float, a2: float) -> SplitLaw:
    a, a2 = float(a), float(a2)
    if not (a > 0 and a2 > 0):
        raise LawError("beta parameters must be positive")
    return SplitLaw("beta", (a, a2), 2)


def _detect_lattice(weights, tol=1e-10, max_den=1000):
    """Return ``(R, exponents)`` if every log-ratio is rational, else ``None``."""
    logs = [math.log(w) for w in weights if w > 0]
    ref = logs[0]
    fracs = []
    for lg in logs:
        r = lg / ref
        f = Fraction(r).limit_denominator(max_den)
        if abs(r - float(f)) > tol:
            return None
        fracs.append(f)
    den = math.lcm(*(f.denominator for f in fracs))
    ints = [int(f * den) for f in fracs]
    g = math.gcd(*ints)
    exps = tuple(i // g for i in ints)
    R = math.exp(-ref / exps[0])
    return R, exps


def deterministic(weights, condition_a: bool = False) -> SplitLaw:
    """Fixed split vector.  The lattice base is detected from the log-ratios."""
    w = tuple(float(x) for x in weights)
    if len(w) < 2:
        raise LawError("deterministic law needs at least two weights")
    if any(x < 0 or x >= 1 for x in w):
        raise LawError("deterministic weights must lie in [0, 1)")
    if abs(math.fsum(w) - 1.0) > 1e-12:
        raise LawError(f"deterministic weights sum to {math.fsum(w)!r}, not 1")
    if any(x == 0 for x in w):
        raise LawError("zero weights are not supported for deterministic laws")
    found = _detect_lattice(w)
    if found is None:
        return SplitLaw("deterministic", w, len(w), None, None, True, condition_a)
    R, exps = found
    return SplitLaw("deterministic", w, len(w), R, exps, True, condition_a)


def lattice(R: float, exponents) -> SplitLaw:
    """Lattice law with weights R**-e_j; the weights must sum to 1."""
    R = float(R)
    exps = tuple(int(e) for e in exponents)
    if R <= 1 or any(e < 1 for e in exps):
        raise LawError("lattice needs R > 1 and exponents >= 1")
    total = math.fsum(R ** -e for e in exps)
    if abs(total - 1.0) > 1e-12:
        raise LawError(f"lattice weights sum to {total!r}, not 1")
    g = math.gcd(*exps)
    return SplitLaw("lattice", (R,) + exps, len(exps), R ** g, tuple(e // g for e in exps), True, False)


def empirical(table, source: str | None = None, condition_a: bool = False) -> SplitLaw:
    """Law given by a finite table of split vectors, one per row, drawn uniformly."""
    t = np.array(table, dtype=float)
    if t.ndim != 2 or t.shape[1] < 2 or t.shape[0] < 1:
        raise LawError("empirical table must have shape (rows, b) with b >= 2")
    if np.any(t < 0) or np.any(t >= 1):
        raise LawError("empirical components must lie in [0, 1)")
    if np.max(np.abs(t.sum(axis=1) - 1.0)) > 1e-12:
        raise LawError("empirical rows must sum to 1")
    t.setflags(write=False)
    return SplitLaw("empirical", (), t.shape[1], None, None, False, condition_a, source, t)


def _load_table(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise LawError(f"empirical sample file not found: {path}")
    if p.suffix == ".npy":
        return np.load(p)
    text = p.read_text().replace(",", " ")
    return np.loadtxt(text.splitlines(), ndmin=2)


def _num(tok: str) -> float:
    tok = tok.strip()
    try:
        return float(Fraction(tok)) if "/" in tok else float(tok)
    except (ValueError, ZeroDivisionError) as exc:
        raise LawError(f"bad number {tok!r}") from exc


def _int(tok: str) -> int:
    v = _num(tok)
    if not v.is_integer():
        raise LawError(f"expected an integer, got {tok!r}")
    return int(v)


def parse_law(text: str) -> SplitLaw:
    """Parse the compact law grammar (see module docstring)."""
    text = text.strip()
    name, _, rest = text.partition(":")
    name = name.lower()
    try:
        if name == "binary" and not rest:
            return binary()
        if name == "mary":
            return mary(_int(rest))
        if name == "quad":
            return quad(_int(rest))
        if name == "simplex":
            return simplex(_int(rest))
        if name == "beta":
            a, a2 = rest.split(",")
            return beta(_num(a), _num(a2))
        if name in ("det", "deterministic"):
            return deterministic([_num(t) for t in rest.split(",")])
        if name == "lattice":
            R, exps = rest.split(":")
            return lattice(_num(R), [_int(e) for e in exps.split(",")])
        if name == "empirical" and rest:
            return empirical(_load_table(rest), source=rest)
    except LawError:
        raise
    except ValueError as exc:
        raise LawError(f"malformed law {text!r}: {exc}") from exc
    raise LawError(f"malformed law {text!r}")


def format_law(law: SplitLaw) -> str:
    f, p = law.family, law.params
    if f == "binary":
        return "binary"
    if f in ("mary", "quad", "simplex"):
        return f"{f}:{p[0]}"
    if f == "beta":
        return f"beta:{p[0]!r},{p[1]!r}"
    if f == "deterministic":
        return "det:" + ",".join(repr(w) for w in p)
    if f == "lattice":
        return f"lattice:{p[0]!r}:" + ",".join(str(e) for e in p[1:])
    return f"empirical:{law.source}"


def law_from_config(cfg: dict) -> SplitLaw:
    """Build a law from the JSON config produced by :meth:`SplitLaw.to_config`."""
    try:
        fam = cfg["family"]
        params = cfg.get("params", {})
        if fam == "binary":
            law = binary()
        elif fam == "mary":
            law = mary(params["m"])
        elif fam == "quad":
            law = quad(params["d"])
        elif fam == "simplex":
            law = simplex(params["d"])
        elif fam == "beta":
            law = beta(params["a"], params["a2"])
        elif fam == "deterministic":
            law = deterministic(params["weights"])
        elif fam == "lattice":
            law = lattice(params["R"], params["exponents"])
        elif fam == "empirical":
            law = empirical(_load_table(params["path"]), source=params["path"])
        else:
            raise LawError(f"unknown family {fam!r}")
    except KeyError as exc:
        raise LawError(f"missing config key {exc}") from exc
    if "condition_a" in cfg and cfg["condition_a"] != law.condition_a:
        law = _replace(law, condition_a=bool(cfg["condition_a"]))
    return law


def _replace(law, **kw):
    from dataclasses import replace

    return replace(law, **kw)


def sample_split(law: SplitLaw, rng: np.random.Generator) -> np.ndarray:
    """Draw one split vector."""
    return sample_splits(law, 1, rng)[0]


def sample_splits(law: SplitLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` independent split vectors as an ``(n, b)`` array.

    Uses the same compiled samplers as the tree simulation, keyed by a seed
    drawn from ``rng``.
    """
    if law.is_deterministic:
        return np.tile(law.weights, (int(n), 1))
    code, params = law.kernel_args()
    seed = int(rng.integers(0, 2**63))
    return _kernels.sample_many(code, params, law.b, int(n), seed)
