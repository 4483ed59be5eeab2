"""Truncated Fourier approximation of a stationary DPP on a rectangle.

A :class:`DppWindow` caches the spectral values ``phi(k)`` on the integer
lattice ``{-N..N}^d`` together with the normalising constant ``D_app``.
Densities are taken with respect to the unit-rate Poisson process; points in
a rectangle ``R`` are mapped affinely onto the unit window
``S = [-1/2, 1/2]^d`` before the kernel is evaluated.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .spectral import SpectralModel

DEFAULT_TRUNCATION = 50
SINGULAR_RTOL = 64 * np.finfo(float).eps


class ExistenceError(ValueError):
    """Raised when a spectral value reaches 1 and the density does not exist."""


class DegeneratePriorError(ValueError):
    """Raised when the count distribution puts all its mass on zero points."""


class WindowDomainError(ValueError):
    """Raised when a point lies outside the window."""


def lattice(n_trunc, d):
    """All integer vectors in ``{-N..N}^d`` as an ``(m, d)`` array."""
    ks = np.arange(-n_trunc, n_trunc + 1)
    if d == 1:
        return ks[:, None].astype(float)
    return np.array(list(itertools.product(ks, repeat=d)), dtype=float)


@dataclass(frozen=True, eq=False)
class DppWindow:
    model: SpectralModel
    lo: np.ndarray
    hi: np.ndarray
    n_trunc: int
    freqs: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    ratio: np.ndarray = field(repr=False)
    d_app: float

    @property
    def d(self):
        return self.model.d

    @property
    def volume(self):
        return float(np.prod(self.hi - self.lo))

    @property
    def kernel_at_zero(self):
        return float(self.ratio.sum())

    def with_model(self, model):
        return build_window(model, (self.lo, self.hi), self.n_trunc)

    def to_unit(self, points):
        """Affine map ``T`` from the rectangle onto ``S``."""
        pts = _as_points(points, self.d)
        return (pts - self.lo) / (self.hi - self.lo) - 0.5

    def from_unit(self, points):
        pts = _as_points(points, self.d)
        return self.lo + (pts + 0.5) * (self.hi - self.lo)

    def contains(self, points):
        pts = _as_points(points, self.d)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)


def _as_points(points, d):
    pts = np.asarray(points, dtype=float)
    if d == 1 and pts.ndim <= 1:
        return pts.reshape(-1, 1)
    return pts.reshape(-1, d)


def build_window(model, rect, n_trunc=DEFAULT_TRUNCATION):
    """Cache the truncated spectral representation of ``model`` on ``rect``.

    ``rect`` is ``(lo, hi)`` with scalars (d = 1) or length-d sequences.
    """
    if int(n_trunc) != n_trunc or n_trunc < 1:
        raise ValueError(f"truncation order must be an integer >= 1, got {n_trunc}")
    n_trunc = int(n_trunc)
    lo = np.atleast_1d(np.asarray(rect[0], dtype=float))
    hi = np.atleast_1d(np.asarray(rect[1], dtype=float))
    if lo.shape != (model.d,) or hi.shape != (model.d,):
        raise ValueError("rectangle bounds must match the model dimension")
    if not np.all(hi > lo):
        raise ValueError(f"degenerate rectangle lo={lo}, hi={hi}")
    freqs = lattice(n_trunc, model.d)
    phi = model.phi_norm(np.linalg.norm(freqs, axis=1))
    if np.any(phi >= 1.0) or np.any(phi < 0.0) or not np.all(np.isfinite(phi)):
        raise ExistenceError("spectral density must lie in [0, 1) on the lattice")
    ratio = phi / (1.0 - phi)
    d_app = float(-np.sum(np.log1p(-phi)))
    for arr in (lo, hi, freqs, phi, ratio):
        arr.setflags(write=False)
    return DppWindow(model, lo, hi, n_trunc, freqs, phi, ratio, d_app)


def c_app(window, t):
    """Approximate kernel ``sum_k phi/(1-phi) cos(2 pi k.t)`` at displacement(s) ``t``."""
    t = np.asarray(t, dtype=float)
    if window.d == 1:
        arg = t[..., None] * window.freqs[:, 0]
    else:
        arg = t @ window.freqs.T
    return np.cos(2.0 * math.pi * arg) @ window.ratio


def kernel_matrix(window, unit_points):
    """Kernel matrix ``[C_app](x_1..x_n)`` for points already in ``S``."""
    u = _as_points(unit_points, window.d)
    diff = u[:, None, :] - u[None, :, :]
    if window.d == 1:
        return c_app(window, diff[..., 0])
    return c_app(window, diff)


def log_det_psd(mat):
    """Log-determinant of a symmetric PSD matrix, ``-inf`` if numerically singular.

    Cholesky first, symmetric eigenvalues if that fails.  A pivot (or
    eigenvalue) below ``SINGULAR_RTOL`` times the largest diagonal entry
    counts as singular, which catches coincident points whatever rounding
    does to the factorisation.
    """
    if mat.shape[0] == 0:
        return 0.0
    try:
        chol = linalg.cholesky(mat, lower=True, check_finite=False)
        piv = np.diag(chol) ** 2
        if piv.min() <= SINGULAR_RTOL * np.max(np.diag(mat)):
            return -math.inf
        return float(np.sum(np.log(piv)))
    except linalg.LinAlgError:
        eig = linalg.eigvalsh(mat, check_finite=False)
        if eig.min() <= SINGULAR_RTOL * np.max(np.diag(mat)):
            return -math.inf
        return float(np.sum(np.log(eig)))


def log_density_unit(window, points, tol=1e-12):
    """Log density of a finite configuration in ``S`` (``-inf`` for no points)."""
    u = _as_points(points, window.d)
    n = u.shape[0]
    if n == 0:
        return -math.inf
    if np.any(np.abs(u) > 0.5 + tol):
        raise WindowDomainError("points must lie in [-1/2, 1/2]^d")
    logdet = log_det_psd(kernel_matrix(window, u))
    return 1.0 - window.d_app + logdet


def log_density_rect(window, points):
    """Log density of a configuration in the window rectangle ``R``."""
    pts = _as_points(points, window.d)
    n = pts.shape[0]
    if n == 0:
        return -math.inf
    if not np.all(window.contains(pts)):
        raise WindowDomainError("points must lie in the window rectangle")
    vol = window.volume
    return -n * math.log(vol) + (vol - 1.0) + log_density_unit(window, window.to_unit(pts))


def schur_factor(window, unit_points, k):
    """``C(x_k, x_k) - b C_{-k}^{-1} b^T`` for the k-th of the given unit points."""
    u = _as_points(unit_points, window.d)
    c0 = window.kernel_at_zero
    if u.shape[0] == 1:
        return c0
    others = np.delete(u, k, axis=0)
    diff = others - u[k]
    b = c_app(window, diff[:, 0] if window.d == 1 else diff)
    cm = kernel_matrix(window, others)
    try:
        chol = linalg.cholesky(cm, lower=True, check_finite=False)
    except linalg.LinAlgError:
        sol = np.linalg.lstsq(cm, b, rcond=None)[0]
        return c0 - float(b @ sol)
    # c0 - |L^{-1} b|^2 keeps the subtracted term a sum of squares
    z = linalg.solve_triangular(chol, b, lower=True, check_finite=False)
    return c0 - float(z @ z)


def prior_count_sample(window, rng, size=None, chunk=20_000):
    """Draw the number of points, a sum of independent Bernoulli(phi(k)), conditioned on >= 1."""
    phi = window.phi
    if not np.any(phi > 0):
        raise DegeneratePriorError("all spectral values vanish; K >= 1 is impossible")
    n = 1 if size is None else int(size)
    out = np.empty(n, dtype=np.int64)
    filled = 0
    while filled < n:
        m = min(chunk, n - filled)
        draws = (rng.random((m, phi.size)) < phi).sum(axis=1)
        draws = draws[draws >= 1]
        take = min(draws.size, n - filled)
        out[filled:filled + take] = draws[:take]
        filled += take
    return int(out[0]) if size is None else out


def count_pmf(window):
    """Exact pmf of the unconditioned count (Poisson-binomial), index = K."""
    pmf = np.zeros(window.phi.size + 1)
    pmf[0] = 1.0
    for p in window.phi:
        pmf[1:] = pmf[1:] * (1.0 - p) + pmf[:-1] * p
        pmf[0] *= 1.0 - p
    return pmf


@dataclass(frozen=True)
class CountMoments:
    mean: float
    var: float
    cond_mean: float
    cond_var: float
    p_zero: float


def prior_count_moments(window):
    """Unconditional and ``K >= 1`` conditional mean and variance of the count."""
    phi = window.phi
    mean = float(phi.sum())
    var = float(np.sum(phi * (1.0 - phi)))
    p0 = math.exp(-window.d_app)
    if p0 >= 1.0:
        raise DegeneratePriorError("all spectral values vanish; K >= 1 is impossible")
    cond_mean = mean / (1.0 - p0)
    second = (var + mean * mean) / (1.0 - p0)
    return CountMoments(mean, var, cond_mean, second - cond_mean ** 2, p0)
