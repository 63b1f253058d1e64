"""Smoothing, extension and the first-order two-scale approximation.

``S_eps f = f * theta_eps`` where ``theta`` is the standard bump supported in
the ball of radius 1/4 and ``theta_eps(x) = eps^-2 theta(x / eps)``. The
discrete mollifier is sampled on the grid of the field it acts on and
normalized to unit mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from .cell import CellSolution
from .errors import ConfigurationError, SupportError
from .solver import DiscreteField

SUPPORT = 0.25


def bump(r):
    """``exp(-1 / (1 - (4r)^2))`` inside ``r < 1/4``, unnormalized."""
    r = np.asarray(r, dtype=float)
    q = (4.0 * r) ** 2
    out = np.zeros_like(q)
    inside = q < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - q[inside]))
    return out


@dataclass(frozen=True)
class Mollifier:
    eps: float
    h: float
    radius: int          # stencil half-width in grid points
    offsets: np.ndarray  # (k, 2) integer offsets, centre last
    weights: np.ndarray  # (k,), sums to exactly 1 in the summation order used

    @property
    def kernel(self):
        r = self.radius
        K = np.zeros((2 * r + 1, 2 * r + 1))
        K[self.offsets[:, 0] + r, self.offsets[:, 1] + r] = self.weights
        return K

    @property
    def normalization(self):
        """Continuum constant ``c`` with ``int c * bump = 1`` (radial quadrature)."""
        return _bump_constant()


@lru_cache(maxsize=None)
def _bump_constant():
    from scipy.integrate import quad

    val, _ = quad(lambda r: 2 * np.pi * r * float(bump(r)), 0.0, SUPPORT, epsabs=1e-15)
    return 1.0 / val


@lru_cache(maxsize=64)
def _mollifier(eps_key, h_key):
    eps, h = float(eps_key), float(h_key)
    reach = SUPPORT * eps / h
    r = int(math.floor(reach - 1e-12)) if reach > 1 else 0
    idx = np.arange(-r, r + 1)
    I, J = np.meshgrid(idx, idx, indexing="ij")
    rad = np.hypot(I * h, J * h) / eps
    w = _bump_constant() * bump(rad) * (h / eps) ** 2
    keep = w > 0
    offs = np.stack([I[keep], J[keep]], axis=1)
    w = w[keep]
    w = w / w.sum()
    centre = np.flatnonzero((offs[:, 0] == 0) & (offs[:, 1] == 0))[0]
    order = np.r_[np.delete(np.arange(len(w)), centre), centre]
    offs, w = offs[order], w[order].copy()
    # fix the centre weight so the left-to-right sum is exactly one
    acc = 0.0
    for x in w[:-1]:
        acc += x
    c = 1.0 - acc
    while acc + c != 1.0:
        c = np.nextafter(c, 2.0 if acc + c < 1.0 else -1.0)
    w[-1] = c
    return offs, w, r


def mollifier(eps, h) -> Mollifier:
    offs, w, r = _mollifier(repr(float(eps)), repr(float(h)))
    return Mollifier(float(eps), float(h), r, offs, w)


def _grid_offset(src: DiscreteField, lo, h):
    k = (np.asarray(lo, dtype=float) - np.asarray(src.lo, dtype=float)) / h
    ki = np.rint(k).astype(int)
    if np.any(np.abs(k - ki) > 1e-6):
        raise ConfigurationError("target box is not aligned with the source grid")
    return ki


def smooth(f: DiscreteField, eps, *, lo=(0.0, 0.0), length=1.0, method="auto") -> DiscreteField:
    """``S_eps f`` on the nodes of the box ``lo + [0, length]^2``.

    ``f`` must extend at least one mollifier radius beyond the box.
    """
    h = f.h
    mol = mollifier(eps, h)
    r = mol.radius
    m_out = int(round(length / h))
    k0 = _grid_offset(f, lo, h)
    n_src = f.values.shape[0]
    if k0.min() < r or k0.max() + m_out + r > n_src - 1:
        raise SupportError(
            f"padding too narrow: need {r} nodes beyond the target box, have "
            f"{min(k0.min(), n_src - 1 - m_out - k0.max())}")
    F = f.values
    if method == "auto":
        method = "direct" if len(mol.weights) * (m_out + 1) ** 2 <= 2e8 else "fft"
    if method == "direct":
        out = np.zeros((m_out + 1, m_out + 1))
        for (di, dj), w in zip(mol.offsets, mol.weights):
            a, b = k0[0] - di, k0[1] - dj
            out += w * F[a:a + m_out + 1, b:b + m_out + 1]
    elif method == "fft":
        sub = F[k0[0] - r:k0[0] + m_out + r + 1, k0[1] - r:k0[1] + m_out + r + 1]
        out = fftconvolve(sub, mol.kernel, mode="valid")
    else:
        raise ConfigurationError(f"unknown smoothing method {method!r}")
    return DiscreteField(out, tuple(lo), length, "free")


# --------------------------------------------------------------------------
# extension

def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class ExtendedField:
    field: DiscreteField   # over [-p, 1 + p]^2
    pad_nodes: int
    source_m: int
    c_ext: float           # |ext|_{H1(pad box)} / |u|_{H1(Omega)}

    @property
    def padding(self):
        return self.pad_nodes * self.field.h

    def restrict(self):
        k, m = self.pad_nodes, self.source_m
        return self.field.values[k:k + m + 1, k:k + m + 1]

    def gradient(self):
        """Central-difference gradient components on the padded grid."""
        g1, g2 = np.gradient(self.field.values, self.field.h)
        return (DiscreteField(g1, self.field.lo, self.field.length, "free"),
                DiscreteField(g2, self.field.lo, self.field.length, "free"))


def default_padding(eps):
    return SUPPORT + 2.0 * eps


def _reflect_index(m, k):
    I = np.arange(-k, m + k + 1)
    sign = np.ones(I.shape)
    idx = I.copy()
    lo, hi = I < 0, I > m
    idx[lo], sign[lo] = -I[lo], -1.0
    idx[hi], sign[hi] = 2 * m - I[hi], -1.0
    return idx, sign


def extend(u0: DiscreteField, padding=None, *, eps=None) -> ExtendedField:
    """Odd reflection across each edge (corners by double reflection) times a cutoff.

    For data vanishing on the boundary the odd reflection keeps the function
    and its gradient continuous, so H2 regularity carries over. The cutoff is
    1 on ``[-p/2, 1 + p/2]^2`` and vanishes at the outer edge of the pad.
    """
    if padding is None:
        if eps is None:
            raise ConfigurationError("extend needs a padding or eps")
        padding = default_padding(eps)
    if padding > 1.0:
        raise ConfigurationError(f"padding {padding} larger than the domain")
    if tuple(map(float, u0.lo)) != (0.0, 0.0) or u0.length != 1.0:
        raise ConfigurationError("extend expects a field on the unit square")
    m, h = u0.m, u0.h
    k = int(math.ceil(padding / h - 1e-9))
    idx, sign = _reflect_index(m, k)
    U = (sign[:, None] * sign[None, :]) * u0.values[np.ix_(idx, idx)]
    p = k * h
    x = -p + h * np.arange(m + 2 * k + 1)
    half = 0.5 * p
    cut = np.where(x < -half, smooth_step((x + p) / half),
                   np.where(x > 1 + half, smooth_step((1 + p - x) / half), 1.0))
    U = U * (cut[:, None] * cut[None, :])
    ext = DiscreteField(U, (-p, -p), 1.0 + 2 * p, "free")
    inner = u0.h1_norm()
    c_ext = ext.h1_norm() / inner if inner > 0 else 0.0
    return ExtendedField(ext, k, m, c_ext)


# --------------------------------------------------------------------------
# correctors on the fine grid

def periodic_interpolate(U, y):
    """Bilinear interpolation of a period-1 nodal array ``U`` (n x n) at points ``y``."""
    n = U.shape[0]
    z = np.mod(np.asarray(y, dtype=float), 1.0) * n
    i = np.floor(z).astype(int)
    f = z - i
    i0, j0 = i[..., 0] % n, i[..., 1] % n
    i1, j1 = (i0 + 1) % n, (j0 + 1) % n
    s, t = f[..., 0], f[..., 1]
    return ((1 - s) * (1 - t) * U[i0, j0] + s * (1 - t) * U[i1, j0]
            + s * t * U[i1, j1] + (1 - s) * t * U[i0, j1])


def oscillating_correctors(sol: CellSolution, eps, grid_field: DiscreteField):
    """``chi_1(x/eps), chi_2(x/eps), chi_0(x/eps)`` on the nodes of ``grid_field``."""
    x = grid_field.grid.node_coords() / eps
    return (periodic_interpolate(sol.chi[0], x), periodic_interpolate(sol.chi[1], x),
            periodic_interpolate(sol.chi0, x))


def first_order_terms(u0: DiscreteField, sol: CellSolution, eps, *, method="auto"):
    """Pieces of the first-order approximation on the grid of ``u0``."""
    if sol is None:
        raise ConfigurationError("first-order approximation needs cell correctors")
    ext = extend(u0, eps=eps)
    g1, g2 = ext.gradient()
    Sg1 = smooth(g1, eps, method=method).values
    Sg2 = smooth(g2, eps, method=method).values
    Su = smooth(ext.field, eps, method=method).values
    c1, c2, c0 = oscillating_correctors(sol, eps, u0)
    return {"S_grad": (Sg1, Sg2), "S_u": Su, "chi": (c1, c2, c0), "ext": ext}


def first_order_approx(u0: DiscreteField, sol: CellSolution, eps, *, method="auto") -> DiscreteField:
    """``u0 + eps chi(x/eps) . S_eps(grad u0~) + eps chi0(x/eps) S_eps(u0~)``."""
    t = first_order_terms(u0, sol, eps, method=method)
    (Sg1, Sg2), Su, (c1, c2, c0) = t["S_grad"], t["S_u"], t["chi"]
    v = u0.values + eps * (c1 * Sg1 + c2 * Sg2 + c0 * Su)
    out = DiscreteField(v, u0.lo, u0.length, "free")
    out.meta.update(eps=eps, c_ext=t["ext"].c_ext)
    return out


# --------------------------------------------------------------------------
# boundary layer

CUTOFF_SLOPE = 2.0  # max of smooth_step' ; |grad theta_eps| <= CUTOFF_SLOPE / eps


def boundary_cutoff(eps, m) -> DiscreteField:
    """1 within distance ``eps`` of the boundary, 0 beyond ``2 eps``."""
    if not 2 * eps < 0.5:
        raise ConfigurationError("boundary cutoff needs 2 eps < 1/2")
    x = np.linspace(0.0, 1.0, m + 1)
    d1 = np.minimum(x, 1.0 - x)
    d = np.minimum(d1[:, None], d1[None, :])
    theta = smooth_step((2 * eps - d) / eps)
    out = DiscreteField(theta, (0.0, 0.0), 1.0, "free")
    gx, gy = np.gradient(theta, 1.0 / m)
    out.meta.update(eps=eps, profile_constant=CUTOFF_SLOPE,
                    max_grad_times_eps=float(np.hypot(gx, gy).max() * eps))
    return out


def boundary_layer_function(u0: DiscreteField, sol: CellSolution, eps) -> DiscreteField:
    """``eps theta_eps (chi(x/eps) . grad u0 + chi0(x/eps) u0)`` on the grid of ``u0``."""
    theta = boundary_cutoff(eps, u0.m).values
    d1, d2 = np.gradient(u0.values, u0.h, edge_order=2)
    c1, c2, c0 = oscillating_correctors(sol, eps, u0)
    phi = eps * theta * (c1 * d1 + c2 * d2 + c0 * u0.values)
    return DiscreteField(phi, u0.lo, u0.length, "free")


def boundary_layer_indicator(u0: DiscreteField, sol: CellSolution, eps, m=None):
    """H1 norm of the boundary-layer function (``m`` must match the grid of ``u0``)."""
    if m is not None and m != u0.m:
        raise ConfigurationError(f"u0 lives on m={u0.m}, asked for m={m}")
    return boundary_layer_function(u0, sol, eps).h1_norm()


# --------------------------------------------------------------------------
# diagnostics for the convolution estimates

def sample(func, lo, length, m) -> DiscreteField:
    """Nodal samples of a closed-form function on a square grid."""
    x = lo[0] + np.linspace(0.0, length, m + 1)
    y = lo[1] + np.linspace(0.0, length, m + 1)
    pts = np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)
    return DiscreteField(func(pts), tuple(lo), length, "free")


def padded_sample(func, m, padding):
    """Samples on ``[-p, 1 + p]^2`` with ``p`` rounded up to whole cells of size ``1/m``."""
    h = 1.0 / m
    k = int(math.ceil(padding / h - 1e-9))
    return sample(func, (-k * h, -k * h), 1.0 + 2 * k * h, m + 2 * k)


def restrict(f: DiscreteField, lo=(0.0, 0.0), length=1.0) -> DiscreteField:
    k0 = _grid_offset(f, lo, f.h)
    n = int(round(length / f.h))
    return DiscreteField(f.values[k0[0]:k0[0] + n + 1, k0[1]:k0[1] + n + 1].copy(),
                         tuple(lo), length, "free")


def smoothing_defect_ratio(func, eps, m, *, method="auto"):
    """``|S_eps f - f|_{L2(Omega)} / (eps |grad f|_{L2(Omega)})`` for a closed-form ``f``."""
    f = padded_sample(func, m, default_padding(eps))
    Sf = smooth(f, eps, method=method)
    fo = restrict(f)
    diff = DiscreteField(Sf.values - fo.values, (0.0, 0.0), 1.0, "free")
    return diff.norms()[0] / (eps * fo.norms()[1])


def ball_average_sup(g_cell, radius=1.0):
    """``sup_x (mean over B_radius(x) of |g|^2)^(1/2)`` for a period-1 nodal array."""
    n = g_cell.shape[0]
    R = int(math.floor(radius * n))
    idx = np.arange(-R, R + 1)
    I, J = np.meshgrid(idx, idx, indexing="ij")
    inside = I**2 + J**2 <= R**2
    K = np.zeros((n, n))
    np.add.at(K, (I[inside] % n, J[inside] % n), 1.0)
    K /= inside.sum()
    conv = np.real(np.fft.ifft2(np.fft.fft2(g_cell**2) * np.fft.fft2(K)))
    return float(np.sqrt(conv.max()))


def product_bound_ratio(g_cell, func, eps, m, *, method="auto"):
    """``|g(x/eps) S_eps f|_{L2(Omega)} / (ball-sup(g) |f|_{L2(pad)})``."""
    f = padded_sample(func, m, default_padding(eps))
    Sf = smooth(f, eps, method=method)
    x = Sf.grid.node_coords() / eps
    g = periodic_interpolate(g_cell, x)
    prod = DiscreteField(g * Sf.values, (0.0, 0.0), 1.0, "free")
    return prod.norms()[0] / (ball_average_sup(g_cell) * f.norms()[0])
