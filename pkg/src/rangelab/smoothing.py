"""Smoothed occupation functionals of walk ranges.

The mollifier is h(u) = (4/pi)(1 - |u|^2)^3 on the unit disk, unit mass.
Scaled to lattice resolution, h_eps(x / sqrt(s)) spreads each visited
site over a disk of radius eps * sqrt(s); summing the squared smoothed
field (a_functional) or the product of two walks' fields (b_functional)
gives quadratic statistics whose second-moment structure is what the
tail analysis of the centered range feeds on.

Two independent ways of computing the same objects are kept around:
direct field stamping versus Fourier evaluation (parseval_check), and
the b functional versus its self-convolution kernel form
(q_identity_check).  Both comparisons are exact identities up to
floating-point noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._fastpath import pack_positions, unpack_keys
from .errors import ResourceLimit
from .walks import PoissonizedPath, WalkPath

__all__ = [
    "SmoothingKernel",
    "QKernel",
    "lambda_eps",
    "a_functional",
    "b_functional",
    "q_kernel",
    "q_identity_check",
    "parseval_check",
    "site_set",
]

_MAX_WINDOW_CELLS = 1 << 24


@dataclass(frozen=True)
class SmoothingKernel:
    """Lattice stamp of h_eps(x / sqrt(scale)).

    offsets are the integer points inside the disk of radius
    eps * sqrt(scale); values carry the eps^{-2} normalization so that
    sum(values) approximates scale for large disks."""

    eps: float
    scale: float
    offsets: np.ndarray
    values: np.ndarray

    @property
    def radius(self) -> float:
        return self.eps * math.sqrt(self.scale)

    @property
    def total(self) -> float:
        return float(self.values.sum())


def smoothing_stamp(scale: float, eps: float) -> SmoothingKernel:
    if eps <= 0 or scale <= 0:
        raise ValueError("eps and scale must be positive")
    a2 = eps * eps * scale
    rad = int(math.floor(math.sqrt(a2)))
    axis = np.arange(-rad, rad + 1)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    d2 = gx * gx + gy * gy
    inside = d2 < a2
    rel = 1.0 - d2[inside] / a2
    vals = (4.0 / math.pi) / (eps * eps) * rel**3
    offsets = np.stack([gx[inside], gy[inside]], axis=1).astype(np.int64)
    return SmoothingKernel(eps=eps, scale=scale, offsets=offsets, values=vals)


def lambda_eps(t: float, eps: float) -> float:
    """Total smoothed mass one site contributes at time scale t; tends
    to t as eps^2 t grows."""
    return smoothing_stamp(t, eps).total


def site_set(obj, horizon: float | None = None) -> np.ndarray:
    """Distinct sites of a walk as an (m, 2) int64 array.

    Poissonized walks contribute every site seen during [0, horizon]
    including the start; discrete walks contribute the sites of steps
    1..floor(horizon) (the range convention).  Plain (m, 2) arrays are
    deduplicated as given."""
    if isinstance(obj, PoissonizedPath):
        pos = obj.positions_up_to(obj.t if horizon is None else horizon)
        pos = np.vstack([np.zeros((1, 2), dtype=pos.dtype), pos])
    elif isinstance(obj, WalkPath):
        pos = obj.positions
        if horizon is not None:
            pos = pos[: int(horizon)]
    else:
        pos = np.asarray(obj)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ValueError("expected path object or (m, 2) array")
        if horizon is not None:
            pos = pos[: int(horizon)]
    if pos.shape[0] == 0:
        return np.empty((0, 2), dtype=np.int64)
    keys = np.unique(pack_positions(pos))
    return unpack_keys(keys)


def _stamped_field(sites: np.ndarray, stamp: SmoothingKernel):
    """Dense field sum_y values * [x = y + offset] over a window box.

    Returns (field, origin) where origin maps lattice coords to array
    indices."""
    rad = int(math.floor(stamp.radius))
    lo = sites.min(axis=0) - rad
    hi = sites.max(axis=0) + rad
    shape = hi - lo + 1
    if int(shape[0]) * int(shape[1]) > _MAX_WINDOW_CELLS:
        raise ResourceLimit("stamped field window exceeds the cell budget")
    field = np.zeros((int(shape[0]), int(shape[1])))
    sx = sites[:, 0] - lo[0]
    sy = sites[:, 1] - lo[1]
    for (ox, oy), v in zip(stamp.offsets.tolist(), stamp.values.tolist()):
        field[sx + ox, sy + oy] += v
    return field, lo


def a_functional(path, t: float, eps: float, b_t: float = 1.0) -> float:
    """Squared smoothed occupation mass at scale s = t / b_t,
    normalized by lambda_eps(s)^2."""
    s = t / b_t
    stamp = smoothing_stamp(s, eps)
    sites = site_set(path, horizon=t)
    if sites.shape[0] == 0:
        return 0.0
    field, _ = _stamped_field(sites, stamp)
    lam = stamp.total
    return float((field * field).sum()) / (lam * lam)


def b_functional(path_a, path_b, t: float, eps: float, b_t: float = 1.0,
                 level: int = 0) -> float:
    """Cross term of two walks' smoothed fields.

    level truncates both walks to horizon t / 2^level while keeping the
    smoothing scale s = t / b_t fixed, matching how the dyadic analysis
    peels time scales."""
    if level < 0:
        raise ValueError("level must be >= 0")
    s = t / b_t
    horizon = t / (1 << level)
    stamp = smoothing_stamp(s, eps)
    sa = site_set(path_a, horizon=horizon)
    sb = site_set(path_b, horizon=horizon)
    if sa.shape[0] == 0 or sb.shape[0] == 0:
        return 0.0
    lo = np.minimum(sa.min(axis=0), sb.min(axis=0))
    hi = np.maximum(sa.max(axis=0), sb.max(axis=0))
    rad = int(math.floor(stamp.radius))
    shape = hi - lo + 1 + 2 * rad
    if int(shape[0]) * int(shape[1]) > _MAX_WINDOW_CELLS:
        raise ResourceLimit("stamped field window exceeds the cell budget")

    def field_on(sites):
        f = np.zeros((int(shape[0]), int(shape[1])))
        sx = sites[:, 0] - lo[0] + rad
        sy = sites[:, 1] - lo[1] + rad
        for (ox, oy), v in zip(stamp.offsets.tolist(), stamp.values.tolist()):
            f[sx + ox, sy + oy] += v
        return f

    fa = field_on(sa)
    fb = field_on(sb)
    lam = stamp.total
    return float((fa * fb).sum()) / (lam * lam)


@dataclass
class QKernel:
    """Self-convolution probability kernel of the smoothing stamp."""

    t: float
    b_t: float
    eps: float
    offsets: np.ndarray
    values: np.ndarray

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def value(self, x: int, y: int) -> float:
        hit = (self.offsets[:, 0] == x) & (self.offsets[:, 1] == y)
        idx = np.nonzero(hit)[0]
        return float(self.values[idx[0]]) if idx.size else 0.0


def q_kernel(t: float, b_t: float, eps: float) -> QKernel:
    """q(x) = lambda^{-2} sum_z k(x - z) k(z) with k the stamp at scale
    t / b_t.  Sums to 1 exactly (finite-sum algebra), supported on
    |x| < 2 eps sqrt(t / b_t)."""
    s = t / b_t
    stamp = smoothing_stamp(s, eps)
    rad = int(math.floor(stamp.radius))
    size = 4 * rad + 1
    acc = np.zeros((size, size))
    ox = stamp.offsets[:, 0] + 2 * rad
    oy = stamp.offsets[:, 1] + 2 * rad
    for (ax, ay), v in zip(stamp.offsets.tolist(), stamp.values.tolist()):
        acc[ox - ax, oy - ay] += v * stamp.values
    lam = stamp.total
    acc /= lam * lam
    nz = acc > 0
    gx, gy = np.meshgrid(np.arange(size) - 2 * rad, np.arange(size) - 2 * rad,
                         indexing="ij")
    offsets = np.stack([gx[nz], gy[nz]], axis=1).astype(np.int64)
    return QKernel(t=t, b_t=b_t, eps=eps, offsets=offsets, values=acc[nz])


def q_identity_check(path_a, path_b, t: float, eps: float,
                     b_t: float = 1.0) -> dict:
    """b_functional equals the q-weighted average over shifts x of
    |range_a intersect (x + range_b)|; an exact finite identity."""
    lhs = b_functional(path_a, path_b, t, eps, b_t=b_t, level=0)
    q = q_kernel(t, b_t, eps)
    ka = np.unique(pack_positions(site_set(path_a, horizon=t)))
    sb = site_set(path_b, horizon=t)
    rhs = 0.0
    for (ox, oy), v in zip(q.offsets.tolist(), q.values.tolist()):
        shifted = sb + np.array([ox, oy], dtype=np.int64)
        kb = pack_positions(shifted)
        kb.sort()
        rhs += v * np.intersect1d(ka, kb, assume_unique=True).size
    denom = max(abs(lhs), abs(rhs), 1e-300)
    return {"lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs) / denom,
            "q_total": q.total}


def parseval_check(path_a, path_b, t: float, eps: float, b_t: float = 1.0,
                   max_fft: int = 4096) -> dict:
    """Evaluate (2 pi)^2 s B two ways: direct field stamping versus the
    Fourier side, integrating |khat|^2 F_a conj(F_b) over the torus with
    a DFT grid fine enough to make the quadrature exact.

    The integrand is a trigonometric polynomial, so any grid beating its
    degree gives the same number; the window is the smallest power of
    two containing both ranges plus the stamp, zero-padded twice."""
    s = t / b_t
    stamp = smoothing_stamp(s, eps)
    rad = int(math.floor(stamp.radius))
    sa = site_set(path_a, horizon=t)
    sb = site_set(path_b, horizon=t)
    if sa.shape[0] == 0 or sb.shape[0] == 0:
        raise ValueError("empty range")
    lo = np.minimum(sa.min(axis=0), sb.min(axis=0))
    hi = np.maximum(sa.max(axis=0), sb.max(axis=0))
    extent = int(max(hi - lo)) + 2 * rad + 1
    m = 1 << max(1, (extent - 1).bit_length())
    m *= 2
    if m > max_fft:
        raise ResourceLimit(f"FFT window {m} exceeds max_fft={max_fft}")

    ia = np.zeros((m, m))
    ib = np.zeros((m, m))
    ia[sa[:, 0] - lo[0], sa[:, 1] - lo[1]] = 1.0
    ib[sb[:, 0] - lo[0], sb[:, 1] - lo[1]] = 1.0
    kern = np.zeros((m, m))
    kern[stamp.offsets[:, 0] % m, stamp.offsets[:, 1] % m] = stamp.values / stamp.total

    fa = np.fft.fft2(ia)
    fb = np.fft.fft2(ib)
    fk = np.fft.fft2(kern)
    khat2 = (fk * np.conj(fk)).real
    grid_mean = (khat2 * np.conj(fa) * fb).mean()
    rhs = s * (2.0 * math.pi) ** 2 * float(grid_mean.real)
    imag_leak = abs(float(grid_mean.imag)) / max(abs(float(grid_mean.real)), 1e-300)

    lhs = (2.0 * math.pi) ** 2 * s * b_functional(path_a, path_b, t, eps, b_t=b_t)
    denom = max(abs(lhs), abs(rhs), 1e-300)
    return {"lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs) / denom,
            "imag_leak": imag_leak, "fft_size": m}
