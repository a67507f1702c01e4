"""Step distributions and path sampling for planar lattice walks.

A step distribution is a finitely supported, symmetric probability law on
Z^2 with exact rational weights.  Walks started at the origin take i.i.d.
steps from it; a Poissonized walk takes the same steps at the arrival
times of a unit-rate Poisson clock.

Randomness is counter-based: every (master seed, replica, purpose) triple
names one Philox stream, so replicas are reproducible independently of
scheduling or worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import InvalidConfig

__all__ = [
    "StepDistribution",
    "ValidationReport",
    "WalkPath",
    "PoissonizedPath",
    "builtin_distribution",
    "distribution_from_config",
    "validate_distribution",
    "sample_path",
    "sample_poissonized",
    "stream",
    "BUILTIN_NAMES",
    "PURPOSE_STEPS",
    "PURPOSE_CLOCK",
    "PURPOSE_PARTNER",
    "PURPOSE_PARTNER_CLOCK",
    "PURPOSE_EXTRA",
]

# Stream purposes.  Each purpose gets an independent Philox stream for a
# given (master seed, replica), so e.g. the Poisson clock never perturbs
# the step sequence.
PURPOSE_STEPS = 1
PURPOSE_CLOCK = 2
PURPOSE_PARTNER = 3
PURPOSE_PARTNER_CLOCK = 4
PURPOSE_EXTRA = 5

_MASK64 = (1 << 64) - 1

COORD_LIMIT = 2**31 - 2  # positions are int32; walks must stay inside


def _mix64(z: int) -> int:
    """splitmix64 finalizer, a cheap 64-bit bijection with good diffusion."""
    z &= _MASK64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def stream(master_seed: int, replica: int = 0, purpose: int = PURPOSE_STEPS) -> np.random.Generator:
    """Counter-based generator for one (seed, replica, purpose) triple."""
    if not 0 <= master_seed <= _MASK64:
        raise ValueError("master seed must fit in 64 bits")
    word = _mix64((replica & _MASK64) * 0x9E3779B97F4A7C15 + purpose + 1)
    key = np.array([master_seed, word], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _build_alias(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias table; construction order is fixed by index so the
    decode is deterministic across platforms."""
    k = len(probs)
    scaled = probs * k
    accept = np.zeros(k, dtype=np.float64)
    alias = np.zeros(k, dtype=np.int64)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    scaled = scaled.copy()
    while small and large:
        s = small.pop()
        l = large.pop()
        accept[s] = scaled[s]
        alias[s] = l
        scaled[l] = (scaled[l] + scaled[s]) - 1.0
        if scaled[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    for i in large:
        accept[i] = 1.0
        alias[i] = i
    for i in small:  # only reachable through rounding
        accept[i] = 1.0
        alias[i] = i
    return accept, alias


@dataclass
class StepDistribution:
    """Symmetric step law on Z^2 with exact rational weights.

    support is an (m, 2) int32 array sorted lexicographically; fracs holds
    the exact probabilities in the same order.  probs is the float64 image
    of fracs (exact for dyadic denominators).
    """

    name: str
    support: np.ndarray
    fracs: tuple[Fraction, ...]
    probs: np.ndarray = field(init=False)
    _accept: np.ndarray = field(init=False, repr=False)
    _alias: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.int32)
        assert self.support.ndim == 2 and self.support.shape[1] == 2
        assert len(self.fracs) == len(self.support)
        self.probs = np.array([float(f) for f in self.fracs], dtype=np.float64)
        self._accept, self._alias = _build_alias(self.probs)

    @classmethod
    def from_steps(cls, name: str, steps: Sequence[tuple[int, int, int, int]]) -> "StepDistribution":
        """Build from (dx, dy, numerator, denominator) rows."""
        rows = []
        for dx, dy, num, den in steps:
            if den <= 0 or num <= 0:
                raise ValueError("step weights must be positive rationals")
            rows.append(((int(dx), int(dy)), Fraction(int(num), int(den))))
        rows.sort(key=lambda r: r[0])
        seen = set()
        for (v, _) in rows:
            if v in seen:
                raise ValueError(f"duplicate support point {v}")
            seen.add(v)
        support = np.array([v for v, _ in rows], dtype=np.int32)
        fracs = tuple(f for _, f in rows)
        return cls(name=name, support=support, fracs=fracs)

    @property
    def max_step(self) -> int:
        """Largest coordinate magnitude over the support."""
        return int(np.abs(self.support).max())

    def canonical_id(self) -> str:
        parts = [f"{x},{y}:{f.numerator}/{f.denominator}"
                 for (x, y), f in zip(self.support.tolist(), self.fracs)]
        return self.name + "|" + ";".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_id().encode()).hexdigest()[:16]

    def covariance_exact(self) -> list[list[Fraction]]:
        xx = sum(f * int(x) * int(x) for (x, y), f in zip(self.support.tolist(), self.fracs))
        yy = sum(f * int(y) * int(y) for (x, y), f in zip(self.support.tolist(), self.fracs))
        xy = sum(f * int(x) * int(y) for (x, y), f in zip(self.support.tolist(), self.fracs))
        return [[xx, xy], [xy, yy]]

    def covariance(self) -> np.ndarray:
        c = self.covariance_exact()
        return np.array([[float(c[0][0]), float(c[0][1])],
                         [float(c[1][0]), float(c[1][1])]])

    def det_covariance_exact(self) -> Fraction:
        c = self.covariance_exact()
        return c[0][0] * c[1][1] - c[0][1] * c[1][0]

    def sample_step_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n support indices with one uniform per step (alias decode)."""
        u = rng.random(n)
        v = u * len(self.probs)
        j = v.astype(np.int64)
        frac = v - j
        return np.where(frac < self._accept[j], j, self._alias[j])


BUILTIN_NAMES = ("srw", "lazy-srw", "king")


def builtin_distribution(name: str) -> StepDistribution:
    if name == "srw":
        steps = [(1, 0, 1, 4), (-1, 0, 1, 4), (0, 1, 1, 4), (0, -1, 1, 4)]
    elif name == "lazy-srw":
        steps = [(0, 0, 1, 2),
                 (1, 0, 1, 8), (-1, 0, 1, 8), (0, 1, 1, 8), (0, -1, 1, 8)]
    elif name == "king":
        steps = [(dx, dy, 1, 8) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                 if (dx, dy) != (0, 0)]
    else:
        raise InvalidConfig(f"unknown builtin distribution {name!r}; "
                            f"choices: {', '.join(BUILTIN_NAMES)}")
    return StepDistribution.from_steps(name, steps)


def distribution_from_config(cfg) -> StepDistribution:
    """Accepts a name string, a {"name": ...} dict, or a dict with explicit
    "steps" rows [dx, dy, num, den]."""
    if isinstance(cfg, str):
        return builtin_distribution(cfg)
    name = cfg.get("name", "custom")
    if "steps" in cfg:
        return StepDistribution.from_steps(name, [tuple(r) for r in cfg["steps"]])
    return builtin_distribution(name)


# ---------------------------------------------------------------------------
# validation


def _lattice_index(vectors: list[tuple[int, int]]) -> int:
    """Index of the subgroup of Z^2 generated by the vectors (0 if rank<2)."""
    rows = [(int(x), int(y)) for x, y in vectors if (x, y) != (0, 0)]
    if not rows:
        return 0
    # Euclid on first components until at most one row keeps x != 0.
    while True:
        nz = [r for r in rows if r[0] != 0]
        if len(nz) <= 1:
            break
        nz.sort(key=lambda r: abs(r[0]))
        ax, ay = nz[0]
        new_rows = []
        for r in rows:
            if r == (ax, ay) or r[0] == 0:
                new_rows.append(r)
            else:
                q = r[0] // ax
                new_rows.append((r[0] - q * ax, r[1] - q * ay))
        # keep exactly one copy of the pivot
        if new_rows.count((ax, ay)) > 1:
            new_rows.remove((ax, ay))
        rows = new_rows
    pivots = [r for r in rows if r[0] != 0]
    if not pivots:
        return 0
    d1 = abs(pivots[0][0])
    g2 = 0
    for x, y in rows:
        if x == 0:
            g2 = math.gcd(g2, abs(y))
    if g2 == 0:
        return 0
    return d1 * g2


def _return_time_gcd(dist: StepDistribution, max_lag: int = 24) -> int:
    """gcd of lags k <= max_lag at which the walk can sit at the origin."""
    s = dist.max_step
    half = max_lag * s + 1
    size = 2 * half + 1
    reach = np.zeros((size, size), dtype=bool)
    reach[half, half] = True
    offsets = dist.support.tolist()
    g = 0
    for k in range(1, max_lag + 1):
        nxt = np.zeros_like(reach)
        for dx, dy in offsets:
            # dilate: nxt[i+dx, j+dy] |= reach[i, j]
            x0s, x0d = (0, dx) if dx >= 0 else (-dx, 0)
            y0s, y0d = (0, dy) if dy >= 0 else (-dy, 0)
            nxt[x0d: size - x0s, y0d: size - y0s] |= reach[x0s: size - x0d, y0s: size - y0d]
        reach = nxt
        if reach[half, half]:
            g = math.gcd(g, k)
            if g == 1:
                break
    return g


@dataclass
class ValidationReport:
    ok: bool
    errors: list[str]
    symmetric: bool
    prob_sum_exact: bool
    covariance: np.ndarray
    det_covariance: float
    det_covariance_exact: Fraction | None
    lattice_index: int
    period: int
    strongly_aperiodic: bool
    max_step: int

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "errors": list(self.errors),
            "symmetric": self.symmetric,
            "prob_sum_exact": self.prob_sum_exact,
            "covariance": self.covariance.tolist(),
            "det_covariance": self.det_covariance,
            "det_covariance_exact": (str(self.det_covariance_exact)
                                     if self.det_covariance_exact is not None else None),
            "lattice_index": self.lattice_index,
            "period": self.period,
            "strongly_aperiodic": self.strongly_aperiodic,
            "max_step": self.max_step,
        }


def validate_distribution(dist: StepDistribution) -> ValidationReport:
    """Check the standing assumptions: exact unit mass, symmetry, full
    two-dimensional lattice support, nondegenerate covariance.  Also
    reports the period of the possible return lags (1 means strongly
    aperiodic, which the sharp local limit estimates require)."""
    errors: list[str] = []

    total = sum(dist.fracs, Fraction(0))
    prob_sum_exact = total == 1
    if not prob_sum_exact:
        errors.append(f"probabilities sum to {total}, not 1")

    by_point = {tuple(v): f for v, f in zip(dist.support.tolist(), dist.fracs)}
    symmetric = all(by_point.get((-x, -y)) == f for (x, y), f in by_point.items())
    if not symmetric:
        errors.append("distribution is not symmetric under x -> -x")

    cov_exact = dist.det_covariance_exact()
    cov = dist.covariance()
    detc = float(cov_exact)
    if cov_exact == 0:
        errors.append("degenerate covariance (support does not span the plane)")

    nonzero = [tuple(v) for v in dist.support.tolist() if tuple(v) != (0, 0)]
    idx = _lattice_index(nonzero)
    if idx != 1:
        errors.append(
            "support generates a proper sublattice of Z^2"
            if idx > 1 else "support does not generate a rank-2 lattice")

    period = _return_time_gcd(dist) if not errors else 0
    strongly_aperiodic = period == 1

    return ValidationReport(
        ok=not errors,
        errors=errors,
        symmetric=symmetric,
        prob_sum_exact=prob_sum_exact,
        covariance=cov,
        det_covariance=detc,
        det_covariance_exact=cov_exact,
        lattice_index=idx,
        period=period,
        strongly_aperiodic=strongly_aperiodic,
        max_step=dist.max_step,
    )


# ---------------------------------------------------------------------------
# sampling


@dataclass
class WalkPath:
    """A sampled walk: positions[i] is the location after i+1 steps."""

    dist_name: str
    n: int
    master_seed: int
    replica: int
    positions: np.ndarray  # (n, 2) int32

    def __post_init__(self):
        assert self.positions.shape == (self.n, 2)
        assert self.positions.dtype == np.int32

    def packed(self) -> np.ndarray:
        """Positions packed into int64 keys (x in the high 32 bits)."""
        x = self.positions[:, 0].astype(np.int64)
        y = self.positions[:, 1].astype(np.int64)
        return (x << 32) ^ (y & np.int64(0xFFFFFFFF))


def _positions_from_indices(dist: StepDistribution, idx: np.ndarray) -> np.ndarray:
    steps = dist.support[idx]
    pos = np.cumsum(steps.astype(np.int64), axis=0)
    if pos.size and np.abs(pos).max() > COORD_LIMIT:
        raise OverflowError("walk left the int32 coordinate box")
    return pos.astype(np.int32)


def sample_path(dist: StepDistribution, n: int, master_seed: int,
                replica: int = 0, purpose: int = PURPOSE_STEPS) -> WalkPath:
    """Sample an n-step walk from the origin.  The origin itself is not
    stored; positions[0] is the location after the first step."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n * dist.max_step > COORD_LIMIT:
        raise OverflowError(f"n * max_step = {n * dist.max_step} exceeds the int32 box")
    rng = stream(master_seed, replica, purpose)
    idx = dist.sample_step_indices(n, rng)
    pos = _positions_from_indices(dist, idx)
    return WalkPath(dist_name=dist.name, n=n, master_seed=master_seed,
                    replica=replica, positions=pos)


@dataclass
class PoissonizedPath:
    """Walk stepped at unit-rate Poisson arrival times up to horizon t."""

    t: float
    jump_times: np.ndarray  # sorted float64, all <= t
    walk: WalkPath

    def __post_init__(self):
        assert self.walk.n == len(self.jump_times)
        if len(self.jump_times):
            assert self.jump_times[-1] <= self.t
            assert np.all(np.diff(self.jump_times) >= 0)

    def positions_up_to(self, s: float) -> np.ndarray:
        """Positions visited during (0, s], excluding the origin."""
        m = int(np.searchsorted(self.jump_times, s, side="right"))
        return self.walk.positions[:m]


def sample_poissonized(dist: StepDistribution, t: float, master_seed: int,
                       replica: int = 0) -> PoissonizedPath:
    """Sample the walk observed along a unit-rate Poisson clock on [0, t].

    Holding times come from their own stream, so the embedded discrete
    path for a given replica is the same whatever the horizon."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    clock = stream(master_seed, replica, PURPOSE_CLOCK)
    times = []
    total = 0.0
    chunk = max(64, int(1.5 * t) + 16)
    while total <= t:
        e = clock.standard_exponential(chunk)
        c = total + np.cumsum(e)
        times.append(c)
        total = c[-1]
    all_times = np.concatenate(times)
    jump_times = all_times[all_times <= t]
    n = len(jump_times)
    rng = stream(master_seed, replica, PURPOSE_STEPS)
    idx = dist.sample_step_indices(n, rng)
    pos = _positions_from_indices(dist, idx)
    walk = WalkPath(dist_name=dist.name, n=n, master_seed=master_seed,
                    replica=replica, positions=pos)
    return PoissonizedPath(t=float(t), jump_times=jump_times, walk=walk)
