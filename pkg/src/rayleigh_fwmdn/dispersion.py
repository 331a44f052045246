"""Rayleigh-wave dispersion of a layered elastic half-space via impedance recursion.

Depth ``z`` is positive downward, ``z = 0`` is the free surface.  Inside a layer
the displacement is split into a solenoidal potential ``psi`` and a scalar
potential ``phi``::

    u_x = -psi' + i*gamma*phi
    u_z =  i*gamma*psi + phi'

with ``psi'' = eta_s**2 psi`` and ``phi'' = eta_p**2 phi``.  The impedance
tensor ``Z`` maps ``(u_x, u_z)`` to ``(sigma_xz, sigma_zz)`` at a depth and is
carried from the half-space up to the surface one layer at a time.  A Rayleigh
wave exists at ``(c, omega)`` when ``det Z(z=0) = 0``.

Every exponential in a layer is referenced to the interface it decays away from,
so all factors that appear are ``exp(-eta*h)`` with ``Re(eta) >= 0``.  This is a
rescaling of the expansion coefficients; it leaves the transfer map unchanged
and keeps the 4x4 boundary system well conditioned at high frequency.

Units: km/s, km, g/cm^3, GPa, rad/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

RHO_COEF = 0.466
RHO_EXP = 0.214
VP_VS_RATIO = 1.732
DEFAULT_THICKNESS = 4.0

__all__ = [
    "DispersionError",
    "DomainError",
    "SingularDenominatorError",
    "IllConditionedTransferError",
    "NoRootError",
    "LayerParams",
    "EarthStack",
    "ImpedanceTensor",
    "Wavenumbers",
    "DispersionCurve",
    "RootSearchConfig",
    "elastic_params_from_vs",
    "vertical_wavenumbers",
    "halfspace_impedance",
    "boundary_matrix_G",
    "layer_transfer",
    "surface_impedance",
    "dispersion_residual",
    "solve_phase_velocity",
    "dispersion_curve",
    "dispersion_curves",
    "default_frequency_grid",
]


class DispersionError(Exception):
    """Base class for forward-model failures."""


class DomainError(DispersionError, ValueError):
    pass


class SingularDenominatorError(DispersionError):
    pass


class IllConditionedTransferError(DispersionError):
    def __init__(self, c, omega, layer_index, condition):
        self.c = c
        self.omega = omega
        self.layer_index = layer_index
        self.condition = condition
        super().__init__(
            f"boundary matrix of layer {layer_index} ill-conditioned "
            f"(cond={condition:.3g}) at c={c!r}, omega={omega!r}"
        )


class NoRootError(DispersionError):
    def __init__(self, omegas, bracket):
        self.omegas = list(np.atleast_1d(omegas).tolist())
        self.bracket = tuple(bracket)
        super().__init__(
            f"no sign change of the dispersion residual in c in [{bracket[0]:.6g}, "
            f"{bracket[1]:.6g}] km/s for omega = {self.omegas}"
        )


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerParams:
    """Isotropic elastic layer.  ``mu`` and ``lam`` are in GPa."""

    vs: float
    vp: float
    rho: float
    mu: float
    lam: float

    def __post_init__(self):
        if not (self.vs > 0 and self.rho > 0):
            raise DomainError(f"need vs > 0 and rho > 0, got vs={self.vs}, rho={self.rho}")
        if not self.vp > self.vs:
            raise DomainError(f"need vp > vs, got vp={self.vp}, vs={self.vs}")
        if not math.isclose(self.mu, self.rho * self.vs**2, rel_tol=1e-9):
            raise DomainError("mu must equal rho*vs**2")
        if not math.isclose(self.lam + 2 * self.mu, self.rho * self.vp**2, rel_tol=1e-9):
            raise DomainError("lambda + 2 mu must equal rho*vp**2")

    @classmethod
    def from_velocities(cls, vs: float, vp: float, rho: float) -> "LayerParams":
        mu = rho * vs**2
        return cls(vs=vs, vp=vp, rho=rho, mu=mu, lam=rho * vp**2 - 2 * mu)


def elastic_params_from_vs(vs: float) -> LayerParams:
    """Empirical crustal layer from its shear velocity.

    ``rho = 0.466 vs**0.214`` and ``lambda = mu = rho vs**2 = 0.466 vs**2.214``.
    With ``lambda = mu`` the compressional speed is ``sqrt(3) vs``, the exact
    value behind the rounded ratio 1.732.
    """
    vs = float(vs)
    if not vs > 0 or not math.isfinite(vs):
        raise DomainError(f"shear velocity must be positive, got {vs}")
    rho = RHO_COEF * vs**RHO_EXP
    mu = RHO_COEF * vs ** (2 + RHO_EXP)
    return LayerParams(vs=vs, vp=math.sqrt(3.0 * mu / rho), rho=rho, mu=mu, lam=mu)


@dataclass(frozen=True)
class EarthStack:
    """Layers from the surface down; the last one is the half-space."""

    layers: tuple[LayerParams, ...]
    thicknesses: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "thicknesses", tuple(float(h) for h in self.thicknesses))
        if len(self.layers) < 1:
            raise DomainError("a stack needs at least the half-space")
        if len(self.thicknesses) != len(self.layers) - 1:
            raise DomainError(
                f"{len(self.layers)} layers need {len(self.layers) - 1} thicknesses, "
                f"got {len(self.thicknesses)}"
            )
        if any(not h > 0 for h in self.thicknesses):
            raise DomainError("layer thicknesses must be positive")

    @classmethod
    def from_vs(cls, vs: Sequence[float], thickness: float | Sequence[float] = DEFAULT_THICKNESS):
        layers = tuple(elastic_params_from_vs(v) for v in vs)
        if np.ndim(thickness) == 0:
            thicknesses = (float(thickness),) * (len(layers) - 1)
        else:
            thicknesses = tuple(thickness)
        return cls(layers, thicknesses)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def vs(self) -> np.ndarray:
        return np.array([lay.vs for lay in self.layers])

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "vs": self.vs,
            "vp": np.array([lay.vp for lay in self.layers]),
            "mu": np.array([lay.mu for lay in self.layers]),
            "lam": np.array([lay.lam for lay in self.layers]),
            "h": np.array(self.thicknesses),
        }


@dataclass(frozen=True)
class ImpedanceTensor:
    zxx: complex
    zxz: complex
    zzx: complex
    zzz: complex

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.zxx, self.zxz, self.zzx, self.zzz)):
            raise DispersionError(f"non-finite impedance entries {self}")

    @classmethod
    def from_matrix(cls, m) -> "ImpedanceTensor":
        m = np.asarray(m, dtype=complex)
        return cls(complex(m[0, 0]), complex(m[0, 1]), complex(m[1, 0]), complex(m[1, 1]))

    def matrix(self) -> np.ndarray:
        return np.array([[self.zxx, self.zxz], [self.zzx, self.zzz]], dtype=complex)

    def det(self) -> complex:
        return self.zxx * self.zzz - self.zxz * self.zzx

    def scaled(self, factor: float) -> "ImpedanceTensor":
        return ImpedanceTensor(*(factor * v for v in (self.zxx, self.zxz, self.zzx, self.zzz)))


@dataclass(frozen=True)
class Wavenumbers:
    gamma: float
    eta_s: complex
    eta_p: complex
    k_s: float
    k_p: float


@dataclass(frozen=True)
class DispersionCurve:
    omegas: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        if len(self.omegas) != len(self.velocities):
            raise ValueError("omegas and velocities differ in length")


@dataclass(frozen=True)
class RootSearchConfig:
    """Bracket scan plus bisection.  ``None`` bounds are taken from the stack."""

    c_min: float | None = None
    c_max: float | None = None
    grid_points: int = 400
    tol: float = 1e-5
    max_iter: int = 60
    low_factor: float = field(default=0.85, repr=False)
    high_factor: float = field(default=1.05, repr=False)

    def __post_init__(self):
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.c_min is not None and self.c_max is not None and not 0 < self.c_min < self.c_max:
            raise ValueError("need 0 < c_min < c_max")

    def bracket(self, vs) -> tuple[float, float]:
        vs = np.asarray(vs, dtype=float)
        lo = self.low_factor * vs.min() if self.c_min is None else self.c_min
        hi = self.high_factor * vs.max() if self.c_max is None else self.c_max
        if not 0 < lo < hi:
            raise ValueError(f"invalid bracket [{lo}, {hi}]")
        return float(lo), float(hi)


def default_frequency_grid(n: int = 50, lo: float = 0.0785, hi: float = 12.57) -> np.ndarray:
    """Angular frequencies (rad/s) uniformly spaced on ``[lo, hi]``."""
    return np.linspace(lo, hi, n)


# ---------------------------------------------------------------------------
# vectorized kernels (broadcast over any batch shape)
# ---------------------------------------------------------------------------

def _principal_sqrt(q):
    """sqrt of a real array on the branch Re >= 0, Im >= 0 when Re == 0."""
    q = np.asarray(q, dtype=float)
    return np.where(q >= 0, np.sqrt(np.abs(q)) + 0j, 1j * np.sqrt(np.abs(q)))


def _etas(gamma, omega, vs, vp):
    g2 = gamma * gamma
    eta_s = _principal_sqrt(g2 - (omega / vs) ** 2)
    eta_p = _principal_sqrt(g2 - (omega / vp) ** 2)
    return eta_s, eta_p


def _field_blocks(gamma, eta_s, eta_p, mu, lam):
    """2x2 blocks of the field matrix, columns (s, p).

    ``UA``/``SA``: displacement/stress rows of the amplitudes growing with
    depth; ``UB``/``SB``: those decaying with depth.  Each block is a tuple
    ``(m00, m01, m10, m11)``.
    """
    ig = 1j * gamma
    a1 = mu * (eta_s * eta_s + gamma * gamma)
    bs = 2j * mu * gamma * eta_s
    bp = 2j * mu * gamma * eta_p
    q = (lam + 2 * mu) * eta_p * eta_p - lam * gamma * gamma
    UA = (-eta_s, ig, ig, eta_p)
    UB = (eta_s, ig, ig, -eta_p)
    SA = (-a1, bp, bs, q)
    SB = (-a1, -bp, -bs, q)
    return UA, UB, SA, SB


def _mm(A, B):
    a, b, c, d = A
    e, f, g, h = B
    return (a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h)


def _det(A):
    return A[0] * A[3] - A[1] * A[2]


def _inv(A):
    d = _det(A)
    return (A[3] / d, -A[1] / d, -A[2] / d, A[0] / d)


def _add(A, B):
    return tuple(x + y for x, y in zip(A, B))


def _sub(A, B):
    return tuple(x - y for x, y in zip(A, B))


def _halfspace_batch(gamma, eta_s, eta_p, mu):
    den = eta_s * eta_p - gamma * gamma
    w = eta_s * eta_s - gamma * gamma
    v = 1j * mu * gamma * (eta_s * eta_s - 2 * eta_s * eta_p + gamma * gamma)
    return (-mu * eta_p * w / den, -v / den, v / den, -mu * eta_s * w / den), den


def _transfer_batch(Z, gamma, eta_s, eta_p, mu, lam, h):
    """Block-eliminated layer transfer.

    Returns the impedance at the top of the layer and ``det T`` where ``T`` is
    the displacement map top -> bottom of the layer for fields obeying the
    lower boundary relation.
    """
    UA, UB, SA, SB = _field_blocks(gamma, eta_s, eta_p, mu, lam)
    es = np.exp(-eta_s * h)
    ep = np.exp(-eta_p * h)
    P = _sub(SA, _mm(Z, UA))
    Q = _sub(SB, _mm(Z, UB))
    R = _mm(_inv(P), Q)
    R = (-R[0], -R[1], -R[2], -R[3])
    Re_ = (R[0] * es, R[1] * ep, R[2] * es, R[3] * ep)          # R e
    eRe = (es * Re_[0], es * Re_[1], ep * Re_[2], ep * Re_[3])  # e R e
    W = _add(_mm(UA, eRe), UB)
    V = _add(_mm(SA, eRe), SB)
    Y = _add(_mm(UA, Re_), (UB[0] * es, UB[1] * ep, UB[2] * es, UB[3] * ep))
    Ztop = _mm(V, _inv(W))
    return Ztop, _det(Y) / _det(W)


def _surface_batch(layer_arrays, c, omega):
    """Surface impedance components and pole-sign factor.

    ``layer_arrays`` holds ``vs, vp, mu, lam`` with a leading layer axis and
    ``h`` with one entry fewer; trailing axes broadcast against ``c``/``omega``.
    """
    vs, vp, mu, lam, h = (layer_arrays[k] for k in ("vs", "vp", "mu", "lam", "h"))
    gamma = omega / c
    n = vs.shape[0]
    eta_s, eta_p = _etas(gamma, omega, vs[n - 1], vp[n - 1])
    Z, _ = _halfspace_batch(gamma, eta_s, eta_p, mu[n - 1])
    sign = np.ones(np.broadcast(gamma, vs[0]).shape)
    for i in range(n - 2, -1, -1):
        eta_s, eta_p = _etas(gamma, omega, vs[i], vp[i])
        Z, det_t = _transfer_batch(Z, gamma, eta_s, eta_p, mu[i], lam[i], h[i])
        sign = sign * np.sign(det_t.real)
    return Z, sign


# relative offset applied when c hits a finite layer's vs or vp exactly, where
# the growing and decaying basis functions of that wave type coincide
_COINCIDENCE_TOL = 1e-10
_COINCIDENCE_SHIFT = 1e-8


def _avoid_coincidence(layer_arrays, c):
    n = layer_arrays["vs"].shape[0]
    if n < 2:
        return c
    speeds = np.concatenate([layer_arrays["vs"][: n - 1], layer_arrays["vp"][: n - 1]])
    hit = np.any(np.abs(speeds - c) <= _COINCIDENCE_TOL * c, axis=0)
    return np.where(hit, c * (1.0 + _COINCIDENCE_SHIFT), c)


def _residual_batch(layer_arrays, c, omega):
    c = _avoid_coincidence(layer_arrays, c)
    with np.errstate(all="ignore"):
        Z, sign = _surface_batch(layer_arrays, c, omega)
        det = Z[0] * Z[3] - Z[1] * Z[2]
        scale = np.maximum(np.abs(Z[0] * Z[3]), np.abs(Z[1] * Z[2]))
        r = sign * det.real / scale
    return np.where(np.isfinite(r), r, np.nan)


# ---------------------------------------------------------------------------
# public scalar operations
# ---------------------------------------------------------------------------

def vertical_wavenumbers(c: float, omega: float, layer: LayerParams) -> Wavenumbers:
    if not (c > 0 and omega > 0):
        raise DomainError(f"need c > 0 and omega > 0, got c={c}, omega={omega}")
    gamma = omega / c
    eta_s, eta_p = _etas(gamma, omega, layer.vs, layer.vp)
    return Wavenumbers(
        gamma=gamma,
        eta_s=complex(eta_s),
        eta_p=complex(eta_p),
        k_s=omega / layer.vs,
        k_p=omega / layer.vp,
    )


def halfspace_impedance(c: float, omega: float, layer: LayerParams, eps: float = 1e-12) -> ImpedanceTensor:
    """Impedance of a half-space carrying only depth-decaying waves."""
    wn = vertical_wavenumbers(c, omega, layer)
    Z, den = _halfspace_batch(wn.gamma, wn.eta_s, wn.eta_p, layer.mu)
    if abs(den) < eps * wn.gamma**2:
        raise SingularDenominatorError(f"eta_s*eta_p - gamma^2 = {den} at c={c}, omega={omega}")
    return ImpedanceTensor(*(complex(v) for v in Z))


def _field_matrix(layer: LayerParams, wn: Wavenumbers) -> np.ndarray:
    UA, UB, SA, SB = _field_blocks(wn.gamma, wn.eta_s, wn.eta_p, layer.mu, layer.lam)
    F = np.empty((4, 4), dtype=complex)
    # column order (A_s, B_s, A_p, B_p)
    for rows, A, B in ((slice(0, 2), UA, UB), (slice(2, 4), SA, SB)):
        F[rows, 0] = A[0], A[2]
        F[rows, 2] = A[1], A[3]
        F[rows, 1] = B[0], B[2]
        F[rows, 3] = B[1], B[3]
    return F


def _depth_factors(wn: Wavenumbers, h: float) -> tuple[np.ndarray, np.ndarray]:
    es = np.exp(-wn.eta_s * h)
    ep = np.exp(-wn.eta_p * h)
    top = np.array([es, 1.0, ep, 1.0], dtype=complex)
    bottom = np.array([1.0, es, 1.0, ep], dtype=complex)
    return top, bottom


def boundary_matrix_G(layer: LayerParams, h: float, wn: Wavenumbers, z_lower: ImpedanceTensor) -> np.ndarray:
    """4x4 system for the amplitudes ``(A_s, B_s, A_p, B_p)`` of one layer.

    Rows 0-1 give the displacement at the top of the layer; rows 2-3 are
    ``sigma - Z_lower u`` at its bottom, which must vanish.
    """
    if not h > 0:
        raise DomainError(f"layer thickness must be positive, got {h}")
    F = _field_matrix(layer, wn)
    top, bottom = _depth_factors(wn, h)
    G = np.empty((4, 4), dtype=complex)
    G[:2] = F[:2] * top
    G[2:] = (F[2:] - z_lower.matrix() @ F[:2]) * bottom
    return G


def layer_transfer(
    z_lower: ImpedanceTensor,
    layer: LayerParams,
    h: float,
    c: float,
    omega: float,
    layer_index: int | None = None,
    max_condition: float = 1e13,
) -> ImpedanceTensor:
    """Impedance at the top of a layer given the impedance at its bottom."""
    wn = vertical_wavenumbers(c, omega, layer)
    G = boundary_matrix_G(layer, h, wn, z_lower)
    cond = np.linalg.cond(G)
    if not cond < max_condition:
        raise IllConditionedTransferError(c, omega, layer_index, cond)
    F = _field_matrix(layer, wn)
    top, _ = _depth_factors(wn, h)
    E_full = (F[2:] * top) @ np.linalg.inv(G)
    # right 2x2 block multiplies the zero right-hand side
    return ImpedanceTensor.from_matrix(E_full[:, :2])


def surface_impedance(stack: EarthStack, c: float, omega: float) -> ImpedanceTensor:
    Z = halfspace_impedance(c, omega, stack.layers[-1])
    for i in range(stack.n_layers - 2, -1, -1):
        Z = layer_transfer(Z, stack.layers[i], stack.thicknesses[i], c, omega, layer_index=i)
    return Z


def dispersion_residual(stack: EarthStack, c: float, omega: float) -> float:
    """Scale-free real residual whose sign changes mark roots of ``det Z0``.

    ``det Z0`` is divided by the larger of ``|Zxx Zzz|`` and ``|Zxz Zzx|``.
    Poles of ``Z0`` (zeros of the surface displacement basis) would otherwise
    show up as spurious sign changes; they are removed by the sign of the
    product of the layer displacement-transfer determinants, which flips
    exactly there.
    """
    if not (c > 0 and omega > 0):
        raise DomainError(f"need c > 0 and omega > 0, got c={c}, omega={omega}")
    r = _residual_batch(_stack_arrays(stack), np.float64(c), np.float64(omega))
    return float(r)


def _stack_arrays(stack: EarthStack, trailing: int = 0) -> dict[str, np.ndarray]:
    arr = stack.arrays()
    shape = (-1,) + (1,) * trailing
    return {k: v.reshape(shape) for k, v in arr.items()}


# ---------------------------------------------------------------------------
# root search
# ---------------------------------------------------------------------------

def _lowest_roots(layer_arrays, c_lo, c_hi, omega, cfg: RootSearchConfig, chunk: int = 64):
    """Fundamental-mode roots for a flat batch of (stack, omega) problems.

    ``layer_arrays`` entries have shape ``(n_layers, P)``; ``c_lo``, ``c_hi``,
    ``omega`` have shape ``(P,)``.  Returns roots with NaN where no sign change
    was found.  The scan stops early for problems whose root has been found;
    the result equals that of a full scan.
    """
    P = omega.shape[0]
    G = cfg.grid_points
    t = np.linspace(0.0, 1.0, G)
    lo = np.full(P, np.nan)
    hi = np.full(P, np.nan)
    r_lo = np.full(P, np.nan)
    exact = np.full(P, np.nan)
    last_c = np.full(P, np.nan)
    last_r = np.full(P, np.nan)
    pending = np.arange(P)
    start = 0
    while start < G and pending.size:
        stop = min(G, start + chunk)
        sub = {k: v[:, pending, None] for k, v in layer_arrays.items()}
        cs = c_lo[pending, None] + t[None, start:stop] * (c_hi - c_lo)[pending, None]
        r = _residual_batch(sub, cs, omega[pending, None])
        # prepend carried last finite value, then forward-fill NaNs
        cs = np.concatenate([last_c[pending, None], cs], axis=1)
        r = np.concatenate([last_r[pending, None], r], axis=1)
        idx = np.where(np.isfinite(r), np.arange(r.shape[1])[None, :], 0)
        np.maximum.accumulate(idx, axis=1, out=idx)
        rows = np.arange(r.shape[0])[:, None]
        r_ff, c_ff = r[rows, idx], cs[rows, idx]
        s = np.sign(r_ff)
        hit = (s[:, :-1] * s[:, 1:] < 0) | ((s[:, 1:] == 0) & (s[:, :-1] != 0))
        found = hit.any(axis=1)
        k = np.argmax(hit, axis=1)
        for j in np.nonzero(found)[0]:
            p = pending[j]
            kk = k[j]
            if s[j, kk + 1] == 0:
                exact[p] = c_ff[j, kk + 1]
            else:
                lo[p], hi[p], r_lo[p] = c_ff[j, kk], c_ff[j, kk + 1], r_ff[j, kk]
        last_c[pending] = c_ff[:, -1]
        last_r[pending] = r_ff[:, -1]
        pending = pending[~found]
        start = stop

    todo = np.nonzero(np.isfinite(lo))[0]
    if todo.size:
        a, b, ra = lo[todo], hi[todo], r_lo[todo]
        sub = {k: v[:, todo] for k, v in layer_arrays.items()}
        # per-problem iteration counts keep each result independent of the batch
        steps = np.ceil(np.log2(np.maximum(b - a, cfg.tol) / cfg.tol)) + 1
        steps = np.clip(steps, 1, cfg.max_iter)
        om = omega[todo]
        for it in range(int(steps.max())):
            m = 0.5 * (a + b)
            rm = _residual_batch(sub, m, om)
            same = (np.sign(rm) == np.sign(ra)) | ~np.isfinite(rm)
            live = it < steps
            a = np.where(live & same, m, a)
            ra = np.where(live & same, rm, ra)
            b = np.where(live & ~same, m, b)
        exact[todo] = 0.5 * (a + b)
    return exact


def solve_phase_velocity(stack: EarthStack, omega: float, cfg: RootSearchConfig | None = None) -> float:
    """Fundamental-mode phase velocity at one angular frequency."""
    cfg = cfg or RootSearchConfig()
    if not omega > 0:
        raise DomainError(f"omega must be positive, got {omega}")
    lo, hi = cfg.bracket(stack.vs)
    root = _lowest_roots(
        _stack_arrays(stack, trailing=1),
        np.array([lo]), np.array([hi]), np.array([float(omega)]), cfg,
    )[0]
    if not np.isfinite(root):
        raise NoRootError([omega], (lo, hi))
    return float(root)


def dispersion_curve(stack: EarthStack, omegas, cfg: RootSearchConfig | None = None) -> DispersionCurve:
    cfg = cfg or RootSearchConfig()
    omegas = np.asarray(omegas, dtype=float)
    if omegas.ndim != 1 or np.any(np.diff(omegas) <= 0) or np.any(omegas <= 0):
        raise DomainError("omegas must be positive and strictly increasing")
    lo, hi = cfg.bracket(stack.vs)
    P = omegas.size
    arr = {k: np.repeat(v[:, None], P, axis=1) for k, v in stack.arrays().items()}
    roots = _lowest_roots(arr, np.full(P, lo), np.full(P, hi), omegas, cfg)
    bad = ~np.isfinite(roots)
    if bad.any():
        raise NoRootError(omegas[bad], (lo, hi))
    return DispersionCurve(omegas=omegas.copy(), velocities=roots)


_PROFILE_BLOCK = 256


def dispersion_curves(
    vs: np.ndarray,
    omegas,
    cfg: RootSearchConfig | None = None,
    thickness: float = DEFAULT_THICKNESS,
) -> np.ndarray:
    """Batch forward model for many shear-velocity profiles.

    ``vs`` has shape ``(S, n_layers)``; returns ``(S, len(omegas))`` phase
    velocities with NaN wherever no root was found.  Elastic parameters come
    from :func:`elastic_params_from_vs`.
    """
    cfg = cfg or RootSearchConfig()
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    if np.any(vs <= 0):
        raise DomainError("shear velocities must be positive")
    omegas = np.asarray(omegas, dtype=float)
    S, n = vs.shape
    W = omegas.size
    rho = RHO_COEF * vs**RHO_EXP
    mu = rho * vs**2
    vp = np.sqrt(3.0) * vs
    arr = {
        "vs": vs, "vp": vp, "mu": mu, "lam": mu,
        "h": np.full((S, max(n - 1, 0)), float(thickness)),
    }
    c_lo = np.array([cfg.bracket(row)[0] for row in vs])
    c_hi = np.array([cfg.bracket(row)[1] for row in vs])
    out = np.empty((S, W))
    # roots do not depend on batch composition, so blocking only bounds memory
    for s0 in range(0, S, _PROFILE_BLOCK):
        sl = slice(s0, min(S, s0 + _PROFILE_BLOCK))
        m = sl.stop - sl.start
        flat = {k: np.repeat(v[sl].T[:, :, None], W, axis=2).reshape(v.shape[1], m * W) for k, v in arr.items()}
        out[sl] = _lowest_roots(
            flat,
            np.repeat(c_lo[sl], W), np.repeat(c_hi[sl], W),
            np.tile(omegas, m), cfg,
        ).reshape(m, W)
    return out
