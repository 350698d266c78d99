"""Scattering data of the Schrodinger operator ``-d^2/dx^2 + q0``.

Bound states are bracketed by a three-point finite-difference eigensolve
and refined by Numerov shooting; the reflection coefficient is obtained by
Numerov integration of the left Jost solution and projection onto discrete
plane waves at the right end of the grid.  All integrations use the sample
values of the potential directly, so the discrete problem is exactly
unitary.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq

from .errors import DegenerateSpectrum, MatchFailure, NoDecay, OrderTooHigh

__all__ = [
    "Potential",
    "ScatteringData",
    "named_potential",
    "family_values",
    "load_potential",
    "find_bound_states",
    "reflection_coefficient",
    "derivative_samples",
    "fd_weights",
    "compute_scattering_data",
    "symmetric_w_grid",
]


@dataclass
class Potential:
    """Uniformly sampled real potential ``q0``.

    Parameters
    ----------
    grid : ndarray
        Strictly increasing, uniformly spaced abscissae.
    values : ndarray
        Real samples ``q0(grid)``.
    decay_moments : int, optional
        Number of finite moments declared by the user (documentation only).
    tail_tol : float
        Largest admissible ``|q0|`` at either end of the grid.
    """

    grid: np.ndarray
    values: np.ndarray
    decay_moments: int | None = None
    tail_tol: float = 1e-10

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        if self.grid.size < 8:
            raise ValueError("potential needs at least 8 samples")
        steps = np.diff(self.grid)
        if np.any(steps <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.ptp(steps) > 1e-9 * steps.mean():
            raise ValueError("grid must be uniformly spaced")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("potential values must be finite")

    @property
    def h(self) -> float:
        return float((self.grid[-1] - self.grid[0]) / (self.grid.size - 1))

    def check_decay(self):
        tail = max(abs(self.values[0]), abs(self.values[-1]))
        if tail > self.tail_tol:
            raise NoDecay(f"|q0| = {tail:.3e} at the grid ends exceeds {self.tail_tol:.1e}")


def family_values(name: str, x, **params) -> np.ndarray:
    """Exact values of a built-in family (see ``named_potential``) at ``x``."""
    x = np.asarray(x, dtype=float)
    if name == "sech2":
        amp = params.get("amplitude", 2.0)
        width = params.get("width", 1.0)
        q = -amp / np.cosh(x / width) ** 2
    elif name == "square_well":
        v0 = params.get("V0", 1.0)
        a = params.get("a", 1.0)
        q = np.where(np.abs(x) < a, -v0, 0.0)
        q[np.isclose(np.abs(x), a, rtol=0, atol=1e-12 * max(1.0, a))] = -v0 / 2
    elif name == "gaussian":
        v0 = params.get("V0", 1.0)
        sigma = params.get("sigma", 1.0)
        q = -v0 * np.exp(-((x / sigma) ** 2))
    else:
        raise ValueError(f"unknown potential family {name!r}")
    return q


def named_potential(name: str, *, L: float = 20.0, h: float = 0.01, **params) -> Potential:
    """Sample one of the built-in families on ``[-L, L]`` with spacing ``h``.

    ``sech2``: ``-amplitude * sech^2(x / width)``;
    ``square_well``: ``-V0`` on ``[-a, a]`` (half value on the edges);
    ``gaussian``: ``-V0 * exp(-(x / sigma)^2)``.
    """
    n = int(round(2 * L / h)) + 1
    x = np.linspace(-L, L, n)
    q = family_values(name, x, **params)
    return Potential(x, q, decay_moments=params.get("decay_moments"),
                     tail_tol=params.get("tail_tol", 1e-10))


def load_potential(path, **kwargs) -> Potential:
    """Read a two-column ``x q0(x)`` text file."""
    data = np.loadtxt(path, ndmin=2)
    return Potential(data[:, 0], data[:, 1], **kwargs)


@dataclass
class ScatteringData:
    """Complete inverse-scattering input.

    ``r_values[k]`` is the right reflection coefficient at ``r_grid[k]``.
    """

    kappas: np.ndarray
    gammas_sq: np.ndarray
    r_grid: np.ndarray
    r_values: np.ndarray
    smoothness_N: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kappas = np.atleast_1d(np.asarray(self.kappas, dtype=float))
        self.gammas_sq = np.atleast_1d(np.asarray(self.gammas_sq, dtype=float))
        self.r_grid = np.asarray(self.r_grid, dtype=float)
        self.r_values = np.asarray(self.r_values, dtype=complex)
        if self.kappas.shape != self.gammas_sq.shape:
            raise ValueError("kappas and gammas_sq must have equal length")
        if self.kappas.size and (self.kappas[0] <= 0 or np.any(np.diff(self.kappas) <= 0)):
            raise ValueError("kappas must be positive and strictly increasing")
        if np.any(self.gammas_sq <= 0):
            raise ValueError("norming constants must be positive")
        if self.r_grid.shape != self.r_values.shape:
            raise ValueError("r_grid and r_values must have equal length")
        if self.r_values.size and np.max(np.abs(self.r_values)) > 1 + 1e-9:
            raise ValueError("|r| must not exceed 1")
        if self.smoothness_N < 1:
            raise ValueError("smoothness_N must be at least 1")

    @property
    def M(self) -> int:
        return int(self.kappas.size)

    def reflectionless(self) -> "ScatteringData":
        """Same discrete data with ``r`` replaced by zero."""
        return ScatteringData(self.kappas, self.gammas_sq, self.r_grid,
                              np.zeros_like(self.r_values), self.smoothness_N, dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "kappas": self.kappas.tolist(),
            "gammas_sq": self.gammas_sq.tolist(),
            "r_grid": {"w": self.r_grid.tolist(),
                       "re": self.r_values.real.tolist(),
                       "im": self.r_values.imag.tolist()},
            "smoothness_N": int(self.smoothness_N),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScatteringData":
        rg = d["r_grid"]
        values = np.asarray(rg["re"], dtype=float) + 1j * np.asarray(rg["im"], dtype=float)
        return cls(d["kappas"], d["gammas_sq"], rg["w"], values,
                   int(d.get("smoothness_N", 1)), dict(d.get("meta", {})))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ScatteringData":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- Numerov


def _numerov_coeffs(g, h):
    """Coefficients of the Numerov recurrence for ``psi'' = -g psi``."""
    return 1.0 + h * h * g / 12.0, 2.0 * (1.0 - 5.0 * h * h * g / 12.0)


def _numerov(g, h, psi0, psi1, reverse=False):
    """Propagate ``psi'' = -g psi`` over the rows of ``g``.

    ``g`` has shape ``(G, ...)``; trailing axes are independent problems.
    Returns the full solution array.  With ``reverse`` the recurrence runs
    from the last row towards the first and ``psi0``/``psi1`` are the values
    at rows ``G-1`` and ``G-2``.
    """
    if reverse:
        g = g[::-1]
    a, b = _numerov_coeffs(g, h)
    psi = np.empty(np.broadcast(g, psi0).shape, dtype=np.result_type(g, psi0, psi1))
    psi[0] = psi0
    psi[1] = psi1
    for i in range(1, g.shape[0] - 1):
        psi[i + 1] = (b[i] * psi[i] - a[i - 1] * psi[i - 1]) / a[i + 1]
    return psi[::-1] if reverse else psi


def _free_theta(k, h):
    """Discrete wavenumber of the free Numerov recurrence, times ``h``.

    ``cos theta = 1 - eps`` with ``eps = 6c / (1 + c)``, ``c = (k h)^2 / 12``;
    the half-angle form keeps full precision as ``k h -> 0``.
    """
    k = np.asarray(k, dtype=float)
    c = (k * h) ** 2 / 12.0
    eps = np.minimum(6.0 * c / (1.0 + c), 2.0)
    return np.sign(k) * 2.0 * np.arcsin(np.sqrt(eps / 2.0))


def _free_decay(kappa, h):
    """Discrete decay rate (times ``h``) of ``psi'' = kappa^2 psi``.

    ``cosh lam = 1 + eps`` with ``eps = 6c / (1 - c)``, ``c = (kappa h)^2 / 12``.
    """
    c = (kappa * h) ** 2 / 12.0
    eps = 6.0 * c / (1.0 - c)
    return np.log1p(eps + np.sqrt(eps * (2.0 + eps)))


# ----------------------------------------------------------- bound states


def _shoot(p: Potential, kappa: float, m: int):
    """Right and left decaying solutions for energy ``-kappa^2``."""
    h = p.h
    g = -(kappa * kappa) - p.values
    lam = _free_decay(kappa, h) / h
    x = p.grid
    right = _numerov(g, h, np.exp(-lam * (x[-1] - x[-1])), np.exp(-lam * (x[-2] - x[-1])),
                     reverse=True)
    left = _numerov(g, h, 1.0, math.exp(lam * h))
    a, _ = _numerov_coeffs(g, h)
    # Casoratian of the Numerov scheme, scaled to be O(1)
    cas = a[m] * a[m + 1] * (left[m + 1] * right[m] - left[m] * right[m + 1])
    scale = math.hypot(left[m], left[m + 1]) * math.hypot(right[m], right[m + 1])
    return right, left, cas / scale, lam


def find_bound_states(p: Potential, tol: float = 1e-10):
    """Negative eigenvalues ``-kappa_j^2`` and norming constants.

    Returns
    -------
    kappas, gammas_sq : ndarray
        Sorted ascending in ``kappa``.  ``gammas_sq[j]`` is the inverse
        squared L2 norm of the bound state scaled to ``exp(-kappa x)`` at
        large positive ``x``.
    """
    p.check_decay()
    h = p.h
    n = p.values.size
    diag = 2.0 / h**2 + p.values
    off = np.full(n - 1, -1.0 / h**2)
    evals = eigh_tridiagonal(diag, off, eigvals_only=True, select="v",
                             select_range=(-np.inf, 0.0))
    if evals.size == 0:
        return np.empty(0), np.empty(0)
    m = int(np.argmin(p.values))
    m = min(max(m, 1), n - 3)
    kfd = np.sort(np.sqrt(-evals))
    kappas = []
    for k0 in kfd:
        cas = lambda k: _shoot(p, k, m)[2]
        eps = 1e-3
        lo, hi = k0 * (1 - eps), k0 * (1 + eps)
        while cas(lo) * cas(hi) > 0 and eps < 0.5:
            eps *= 2
            lo, hi = k0 * (1 - eps), k0 * (1 + eps)
        if cas(lo) * cas(hi) > 0:
            raise MatchFailure(f"could not bracket bound state near kappa={k0:.6g}")
        kappas.append(brentq(cas, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps))
    kappas = np.array(kappas)
    gaps = np.diff(kappas)
    if np.any(gaps < max(tol, 1e-6)):
        raise DegenerateSpectrum(f"bound states closer than {tol:g}: {kappas}")
    gammas_sq = np.array([_norming_constant(p, k, m) for k in kappas])
    return kappas, gammas_sq


def _norming_constant(p: Potential, kappa: float, m: int) -> float:
    right, left, _, lam = _shoot(p, kappa, m)
    # right solution equals exp(-lam (x - x_end)); rescale to exp(-lam x)
    x = p.grid
    f = np.empty_like(right)
    f[m:] = right[m:]
    # least-squares scale over a window: robust when the state has a node at m
    win = slice(max(m - 25, 0), min(m + 26, x.size))
    scale = np.dot(left[win], right[win]) / np.dot(left[win], left[win])
    f[:m] = left[:m] * scale
    f *= math.exp(-lam * x[-1])
    norm2 = _simpson(f * f, p.h)
    norm2 += f[-1] ** 2 / (2 * kappa) + f[0] ** 2 / (2 * kappa)
    return 1.0 / norm2


def _simpson(y, h):
    from scipy.integrate import simpson
    return float(simpson(y, dx=h))


# ------------------------------------------------ reflection coefficient


def symmetric_w_grid(w_max: float, dw: float) -> np.ndarray:
    """Uniform grid ``(k + 1/2) dw`` symmetric about (and excluding) zero."""
    K = int(math.ceil(w_max / dw))
    return (np.arange(-K, K) + 0.5) * dw


def reflection_coefficient(p: Potential, w_grid, return_transmission=False, chunk=4096):
    """Right reflection coefficient ``r(w)`` on a real grid.

    The left Jost solution ``exp(-i w x)`` is launched at the left end and
    decomposed at the right end into discrete plane waves,
    ``a exp(-i w x) + b exp(i w x)``; then ``T = 1/a`` and ``r = b/a``.
    """
    p.check_decay()
    w = np.asarray(w_grid, dtype=float)
    if np.any(w == 0):
        raise ValueError("w_grid must exclude zero; r(0) is obtained as a limit")
    h = p.h
    x = p.grid
    r = np.empty(w.shape, dtype=complex)
    T = np.empty(w.shape, dtype=complex)
    for s in range(0, w.size, chunk):
        ws = w[s:s + chunk]
        th = _free_theta(ws, h)
        g = ws[None, :] ** 2 - p.values[:, None]
        psi0 = np.exp(-1j * th * (x[0] / h))
        psi1 = np.exp(-1j * th * (x[1] / h))
        psi = _numerov(g, h, psi0, psi1)
        # psi_n = a e^{-i th n} + b e^{i th n} at the last two nodes
        n1, n2 = x[-2] / h, x[-1] / h
        em1, em2 = np.exp(-1j * th * n1), np.exp(-1j * th * n2)
        ep1, ep2 = np.exp(1j * th * n1), np.exp(1j * th * n2)
        det = em1 * ep2 - em2 * ep1
        if np.any(np.abs(det) < 1e-14):
            raise MatchFailure("plane-wave basis degenerate (w too close to 0 or Nyquist)")
        a = (psi[-2] * ep2 - psi[-1] * ep1) / det
        b = (em1 * psi[-1] - em2 * psi[-2]) / det
        if np.any(np.abs(a) < 1e-300):
            raise MatchFailure("vanishing Wronskian at a real wavenumber")
        r[s:s + chunk] = b / a
        T[s:s + chunk] = 1.0 / a
    if return_transmission:
        return r, T
    return r


# ------------------------------------------------------------ derivatives


def fd_weights(z: float, x, m: int) -> np.ndarray:
    """Fornberg weights for the ``m``-th derivative at ``z`` on nodes ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5 = 1.0, c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def derivative_samples(values, h: float, n: int, smoothness_N: int | None = None,
                       order: int = 6):
    """``n``-th derivative of uniformly sampled data by finite differences.

    Central stencils of accuracy ``order`` (at least 4) in the interior and
    one-sided stencils of the same width near the ends.
    """
    if smoothness_N is not None and n > smoothness_N + 1:
        raise OrderTooHigh(f"derivative order {n} exceeds N+1 = {smoothness_N + 1}")
    y = np.asarray(values)
    if n == 0:
        return y.copy()
    order = max(order, 4)
    half = (n + order - 1) // 2
    width = 2 * half + 1
    if y.size < width:
        raise ValueError("too few samples for the requested stencil")
    offsets = np.arange(-half, half + 1)
    wc = fd_weights(0.0, offsets, n) / h**n
    out = np.zeros(y.shape, dtype=np.result_type(y, float))
    interior = slice(half, y.size - half)
    for k, wk in zip(offsets, wc):
        out[interior] += wk * y[half + k: y.size - half + k]
    for i in list(range(half)) + list(range(y.size - half, y.size)):
        start = min(max(i - half, 0), y.size - width)
        nodes = np.arange(start, start + width)
        wts = fd_weights(float(i), nodes, n) / h**n
        out[i] = wts @ y[nodes]
    return out


def compute_scattering_data(p: Potential, w_max: float, dw: float, N: int = 1,
                            tol: float = 1e-10) -> ScatteringData:
    """Bound states, norming constants and ``r`` on a symmetric grid."""
    kappas, gsq = find_bound_states(p, tol=tol)
    w = symmetric_w_grid(w_max, dw)
    r = reflection_coefficient(p, w)
    meta = {"potential_h": p.h, "potential_L": [float(p.grid[0]), float(p.grid[-1])],
            "decay_moments": p.decay_moments}
    return ScatteringData(kappas, gsq, w, r, N, meta)
