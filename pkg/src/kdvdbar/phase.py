"""Phase function, cutoff, strip geometry and the non-analytic extension of r.

Coordinates follow ``w = u + i v``.  Everything here is evaluated in the
closed upper half-plane; lower-half quantities are obtained by the
symmetry ``w -> -w`` in :mod:`kdvdbar.dbar`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy.interpolate import make_interp_spline

from .errors import OutOfTable
from .scattering import ScatteringData, derivative_samples

__all__ = [
    "PhaseContext",
    "RTable",
    "eval_phi",
    "eval_chi",
    "eval_chi_prime",
    "classify",
    "eval_R",
    "eval_dbar_R",
    "factor_matrices",
    "strip_delta",
    "dump_fields_csv",
]


def strip_delta(kappa1: float, C0: float) -> float:
    """Strip width ``min(kappa_1, sqrt(C0)) / 100``."""
    return min(kappa1 / 100.0, math.sqrt(C0) / 100.0)


@dataclass(frozen=True)
class PhaseContext:
    """Point ``(x, t)`` together with the strip parameters."""

    x: float
    t: float
    C0: float
    delta: float
    N: int

    def __post_init__(self):
        if self.t <= 0:
            raise ValueError("t must be positive")
        if self.C0 <= 0 or self.delta <= 0:
            raise ValueError("C0 and delta must be positive")
        if self.N < 1:
            raise ValueError("N must be at least 1")

    @classmethod
    def from_scattering(cls, sd: ScatteringData, x: float, t: float, C0: float,
                        N: int | None = None) -> "PhaseContext":
        kappa1 = sd.kappas[0] if sd.M else math.inf
        delta = strip_delta(kappa1, C0)
        return cls(float(x), float(t), float(C0), delta, int(N or sd.smoothness_N))

    @property
    def in_soliton_region(self) -> bool:
        return self.x >= self.C0 * self.t

    def with_x(self, x: float) -> "PhaseContext":
        return PhaseContext(float(x), self.t, self.C0, self.delta, self.N)


def eval_phi(ctx: PhaseContext, w):
    """``8 i w^3 + 2 i w x / t``."""
    w = np.asarray(w, dtype=complex)
    return 8j * w**3 + 2j * w * (ctx.x / ctx.t)


def eval_chi(v):
    """Smooth cutoff: 1 on ``[0, 1)``, a bump on ``[1, 2)``, 0 beyond."""
    v = np.asarray(v, dtype=float)
    out = np.where(v < 1.0, 1.0, 0.0)
    mid = (v >= 1.0) & (v < 2.0)
    y2 = (v[mid] - 1.0) ** 2
    out[mid] = np.exp(y2 / (y2 - 1.0))
    return out if out.ndim else float(out)


def eval_chi_prime(v):
    """Derivative of :func:`eval_chi`; zero outside ``(1, 2)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    mid = (v > 1.0) & (v < 2.0)
    y = v[mid] - 1.0
    den = y * y - 1.0
    out[mid] = np.exp(y * y / den) * (-2.0 * y / den**2)
    return out if out.ndim else float(out)


def classify(w, delta: float) -> str:
    """Label of the strip containing ``w`` (primes for the lower half)."""
    v = complex(w).imag
    prime = "'" if v < 0 else ""
    av = abs(v)
    if av < delta:
        return "Omega1" + prime
    if av < 2 * delta:
        return "Omega2" + prime
    return "Omega3" + prime


class RTable:
    """Derivatives ``r^(0) .. r^(N+1)`` of a sampled reflection coefficient.

    Derivatives are obtained by finite differences on the sampling grid (or
    supplied in closed form through ``derivs``) and evaluated off-grid by
    quintic splines.  Outside the sampled range every derivative is zero.
    """

    def __init__(self, w, derivs, N: int):
        self.w = np.asarray(w, dtype=float)
        self.N = int(N)
        self.derivs = [np.asarray(d, dtype=complex) for d in derivs]
        if len(self.derivs) < self.N + 2:
            raise ValueError("need derivatives up to order N+1")
        self.zero = all(not np.any(d) for d in self.derivs)
        self._splines = [make_interp_spline(self.w, d, k=5) for d in self.derivs]
        self.u_min, self.u_max = float(self.w[0]), float(self.w[-1])

    @classmethod
    def from_scattering(cls, sd: ScatteringData, N: int | None = None, order: int = 6,
                        floor: float | None = 1e-12):
        """Tables from sampled ``r``.

        With ``floor`` set, the table is cut at the largest ``|u|`` where
        ``|r| >= floor``: beyond it the samples are round-off, and their
        finite-difference derivatives would dominate the true tail.
        """
        N = int(N or sd.smoothness_N)
        w = sd.r_grid
        h = float(w[1] - w[0])
        derivs = [derivative_samples(sd.r_values, h, n, smoothness_N=N, order=order)
                  for n in range(N + 2)]
        if floor is not None:
            big = np.nonzero(np.abs(sd.r_values) >= floor)[0]
            if big.size:
                umax = np.max(np.abs(w[big])) + h
                keep = np.abs(w) <= umax
                if keep.sum() >= 8:
                    w = w[keep]
                    derivs = [d[keep] for d in derivs]
        return cls(w, derivs, N)

    @classmethod
    def from_function(cls, fns, w, N: int):
        """Closed-form derivatives: ``fns[n](w)`` returns ``r^(n)``."""
        return cls(w, [f(np.asarray(w)) for f in fns], N)

    def __call__(self, n: int, u, strict: bool = False):
        u = np.asarray(u, dtype=float)
        inside = (u >= self.u_min) & (u <= self.u_max)
        if strict and not np.all(inside):
            raise OutOfTable("u outside the sampled range of r")
        if self.zero:
            return np.zeros(u.shape, dtype=complex)
        out = self._splines[n](np.clip(u, self.u_min, self.u_max))
        return np.where(inside, out, 0.0)

    def taylor(self, u, v, upto: int):
        """``sum_{n<=upto} r^(n)(u) (i v)^n / n!``."""
        u = np.asarray(u, dtype=float)
        iv = 1j * np.asarray(v, dtype=float)
        acc = np.zeros(np.broadcast(u, iv).shape, dtype=complex)
        for n in range(upto + 1):
            acc = acc + self(n, u) * iv**n / factorial(n)
        return acc


def eval_R(ctx: PhaseContext, table: RTable, w):
    """Extension ``[sum_{n<=N} r^(n)(u)(iv)^n/n!] * chi(v/delta)``, ``Im w >= 0``."""
    w = np.asarray(w, dtype=complex)
    u, v = w.real, w.imag
    if np.any(v < 0):
        raise ValueError("eval_R requires Im w >= 0")
    chi = eval_chi(v / ctx.delta)
    return table.taylor(u, v, ctx.N) * chi


def eval_dbar_R(ctx: PhaseContext, table: RTable, w):
    """Closed-form ``dbar R = 1/2 (d_u + i d_v) R`` for ``Im w >= 0``.

    The Taylor polynomial telescopes under ``dbar`` to
    ``r^(N+1)(u) (iv)^N / (2 N!)``; the cutoff adds
    ``(i / 2 delta) chi'(v/delta)`` times the polynomial.
    """
    w = np.asarray(w, dtype=complex)
    u, v = w.real, w.imag
    if np.any(v < 0):
        raise ValueError("eval_dbar_R requires Im w >= 0")
    s = v / ctx.delta
    chi = eval_chi(s)
    dchi = eval_chi_prime(s)
    N = ctx.N
    top = table(N + 1, u) * (1j * v) ** N / (2.0 * factorial(N))
    out = chi * top
    need = dchi != 0
    if np.any(need):
        poly = table.taylor(u[need], v[need], N)
        out = out.astype(complex)
        out[need] += (0.5j / ctx.delta) * dchi[need] * poly
    return out


def factor_matrices(ctx: PhaseContext, table: RTable, w, which: str = "upp"):
    """Triangular factors of the jump matrix.

    ``which="upp"`` (``Im w >= 0``): ``[[1, 0], [-R(w) e^{t Phi}, 1]]``;
    ``which="low"`` (``Im w <= 0``): ``[[1, -R(-w) e^{-t Phi}], [0, 1]]``.
    """
    w = complex(w)
    tphi = ctx.t * complex(eval_phi(ctx, w))
    if which == "upp":
        if w.imag < 0:
            raise ValueError("A_upp is defined for Im w >= 0")
        Rw = complex(eval_R(ctx, table, w))
        return np.array([[1.0, 0.0], [-Rw * np.exp(tphi), 1.0]], dtype=complex)
    if which == "low":
        if w.imag > 0:
            raise ValueError("A_low is defined for Im w <= 0")
        Rm = complex(eval_R(ctx, table, -w))
        return np.array([[1.0, -Rm * np.exp(-tphi)], [0.0, 1.0]], dtype=complex)
    raise ValueError("which must be 'upp' or 'low'")


def dump_fields_csv(path, ctx: PhaseContext, table: RTable, u, v):
    """Write ``R`` and ``dbar R`` on the tensor grid ``u x v`` to CSV."""
    U, V = np.meshgrid(np.asarray(u, float), np.asarray(v, float), indexing="ij")
    W = (U + 1j * V).ravel()
    R = eval_R(ctx, table, W)
    dR = eval_dbar_R(ctx, table, W)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["u", "v", "R_re", "R_im", "dbarR_re", "dbarR_im"])
        for row in zip(W.real, W.imag, R.real, R.imag, dR.real, dR.imag):
            wr.writerow([f"{c:.17g}" for c in row])
