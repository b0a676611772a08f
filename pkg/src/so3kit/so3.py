"""Rotations, associated Legendre polynomials, real spherical harmonics and
Wigner-D matrices.

Angle conventions: a direction ``v`` is described by its length ``r``, an
azimuth ``alpha`` in ``[0, 2*pi)`` and a polar angle ``beta`` measured from
the south pole, so the usual polar angle from +z is ``pi - beta``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConsistencyError, DegenerateDirectionError, DomainError, NormalizationError

MIN_RADIUS = 1e-12
FIT_TOLERANCE = 1e-8


@dataclass(frozen=True)
class EulerAngles:
    """Rotation angles (radians) about x, y and z, applied as Rx Ry Rz."""

    alpha: float
    beta: float
    gamma: float

    def __iter__(self):
        return iter((self.alpha, self.beta, self.gamma))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "EulerAngles":
        a, b, c = rng.uniform(0.0, 2.0 * math.pi, size=3)
        return cls(float(a), float(b), float(c))


@dataclass(frozen=True)
class SphericalAngles:
    r: float
    alpha: float
    beta: float

    def to_cartesian(self) -> np.ndarray:
        theta = math.pi - self.beta
        s = math.sin(theta)
        return self.r * np.array([s * math.cos(self.alpha), s * math.sin(self.alpha), math.cos(theta)])


def _as_angles(angles) -> EulerAngles:
    if isinstance(angles, EulerAngles):
        return angles
    a, b, c = angles
    return EulerAngles(float(a), float(b), float(c))


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(b: float) -> np.ndarray:
    c, s = math.cos(b), math.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(g: float) -> np.ndarray:
    c, s = math.cos(g), math.sin(g)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(angles) -> np.ndarray:
    """Return the 3x3 rotation ``Rx(alpha) @ Ry(beta) @ Rz(gamma)``."""
    angles = _as_angles(angles)
    if not all(math.isfinite(v) for v in angles):
        raise DomainError(f"non-finite Euler angles {tuple(angles)}")
    return rot_x(angles.alpha) @ rot_y(angles.beta) @ rot_z(angles.gamma)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return euler_to_rotation(EulerAngles.random(rng))


def cart_to_spherical(v) -> SphericalAngles:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise DomainError(f"expected a finite 3-vector, got {v!r}")
    r = float(np.linalg.norm(v))
    if r < MIN_RADIUS:
        raise DegenerateDirectionError(f"direction of a vector with length {r:.3g} is undefined")
    alpha = math.atan2(v[1], v[0]) % (2.0 * math.pi)
    if alpha >= 2.0 * math.pi:  # tiny negative angles round up to 2*pi
        alpha = 0.0
    theta = math.atan2(math.hypot(v[0], v[1]), v[2])
    return SphericalAngles(r, alpha, math.pi - theta)


def falling_factorial(J: int, m: int) -> float:
    """``(J+m)(J+m-1)...(J-m+1)``; equals ``(J+m)!/(J-m)!`` for ``m >= 0``."""
    return float(math.prod(range(J - m + 1, J + m + 1)))


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2))


class LegendreTable:
    """Memoized associated Legendre polynomials ``P_J^m`` on a fixed array of
    arguments. One table serves one evaluation batch and is then discarded.

    The Condon-Shortley phase ``(-1)^m`` is included.
    """

    def __init__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(np.abs(x) > 1.0 + 1e-12):
            raise DomainError("Legendre argument outside [-1, 1]")
        self.x = np.clip(x, -1.0, 1.0)
        self._sin = np.sqrt(np.maximum(1.0 - self.x * self.x, 0.0))
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def __call__(self, J: int, m: int) -> np.ndarray:
        if J < 0 or abs(m) > J:
            raise DomainError(f"order m={m} out of range for degree J={J}")
        key = (J, m)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        if m < 0:
            y = ((-1) ** -m / falling_factorial(J, -m)) * self(J, -m)
        elif m == J:
            y = (-1) ** J * _double_factorial(2 * J - 1) * self._sin**J
        elif m == J - 1:
            y = (2 * J - 1) * self.x * self(J - 1, m)
        else:
            y = ((2 * J - 1) * self.x * self(J - 1, m) - (J + m - 1) * self(J - 2, m)) / (J - m)
        self._cache[key] = y
        return y

    def clear(self):
        self._cache.clear()


def alp(J: int, m: int, x):
    """Associated Legendre polynomial ``P_J^m(x)``; scalar or array ``x``."""
    out = LegendreTable(x)(J, m)
    return float(out) if np.ndim(out) == 0 else out


def _harmonic_from_table(table: LegendreTable, J: int, m: int, alpha) -> np.ndarray:
    norm = math.sqrt((2 * J + 1) / (4.0 * math.pi))
    if m == 0:
        return norm * table(J, 0)
    scale = norm * math.sqrt(2.0 / falling_factorial(J, abs(m)))
    trig = np.cos(m * alpha) if m > 0 else np.sin(-m * alpha)
    return scale * table(J, abs(m)) * trig


def spherical_harmonic(J: int, m: int, angles: SphericalAngles) -> float:
    """Real spherical harmonic ``Y_m^(J)`` at the given angles (``r`` ignored)."""
    if J < 0 or abs(m) > J:
        raise DomainError(f"order m={m} out of range for degree J={J}")
    table = LegendreTable(math.cos(math.pi - angles.beta))
    return float(_harmonic_from_table(table, J, m, angles.alpha))


def sh_batch(max_degree: int, directions) -> list[np.ndarray]:
    """Harmonics of every degree ``0..max_degree`` for a batch of unit vectors.

    Returns a list whose entry ``J`` has shape ``(N, 2J+1)`` ordered by
    ``m = -J..J``. Vectors are not normalized here.
    """
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    alpha = np.arctan2(d[:, 1], d[:, 0]) % (2.0 * math.pi)
    table = LegendreTable(np.clip(d[:, 2], -1.0, 1.0))
    out = []
    for J in range(max_degree + 1):
        out.append(np.stack([_harmonic_from_table(table, J, m, alpha) for m in range(-J, J + 1)], axis=-1))
    table.clear()
    return out


def _check_unit(directions, tol=1e-9):
    d = np.asarray(directions, dtype=np.float64)
    norms = np.linalg.norm(d.reshape(-1, 3), axis=-1)
    if np.any(norms < MIN_RADIUS):
        raise DegenerateDirectionError("zero-length direction")
    if np.any(np.abs(norms - 1.0) > tol):
        raise NormalizationError(f"direction not unit length (norm {norms.max():.12g}); normalize first")
    return d


def sh_vector(J: int, direction) -> np.ndarray:
    """Type-``J`` tensor of harmonics at a unit direction."""
    d = _check_unit(direction)
    if d.shape != (3,):
        raise DomainError(f"expected a 3-vector, got shape {d.shape}")
    return sh_batch(J, d[None, :])[J][0]


def fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic, well spread unit vectors (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    rho = np.sqrt(1.0 - z * z)
    phi = i * math.pi * (3.0 - math.sqrt(5.0)) + 0.1
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


class _FitSystem:
    """Sample directions and the pseudo-inverse of their harmonic matrix."""

    def __init__(self, l: int):
        self.points = fibonacci_sphere(max(2 * (2 * l + 1), 16))
        self.A = sh_batch(l, self.points)[l].T  # (2l+1, n)
        # solve D A = B through the pivoted QR of A^T
        q, r, piv = scipy.linalg.qr(self.A.T, mode="economic", pivoting=True)
        self.q, self.r, self.piv = q, r, piv


_fit_systems: dict[int, _FitSystem] = {}
_fit_lock = threading.Lock()


def _fit_system(l: int) -> _FitSystem:
    sys_ = _fit_systems.get(l)
    if sys_ is None:
        with _fit_lock:
            sys_ = _fit_systems.setdefault(l, _FitSystem(l))
    return sys_


def wigner_d_from_rotation(l: int, rotation) -> np.ndarray:
    """Wigner-D matrix of degree ``l`` for a 3x3 rotation matrix.

    Fitted by least squares so that ``Y(R x) = D Y(x)`` on a fixed set of
    sample directions; raises :class:`ConsistencyError` if the fit is not
    exact to ``FIT_TOLERANCE``.
    """
    if l < 0:
        raise DomainError(f"negative degree {l}")
    R = np.asarray(rotation, dtype=np.float64)
    if l == 0:
        return np.ones((1, 1))
    fit = _fit_system(l)
    B = sh_batch(l, fit.points @ R.T)[l].T  # (2l+1, n)
    # A^T D^T = B^T with A^T P = Q R
    y = scipy.linalg.solve_triangular(fit.r, fit.q.T @ B.T)
    Dt = np.empty_like(y)
    Dt[fit.piv] = y
    D = Dt.T
    residual = np.max(np.abs(D @ fit.A - B))
    if residual > FIT_TOLERANCE:
        raise ConsistencyError(f"Wigner-D fit residual {residual:.3g} for degree {l}")
    return D


def wigner_d(l: int, angles) -> np.ndarray:
    """Wigner-D matrix of degree ``l`` for Euler angles."""
    return wigner_d_from_rotation(l, euler_to_rotation(angles))


# real l=1 harmonics are proportional to (-y, z, -x) in m = -1, 0, 1 order
CART_TO_DEGREE1 = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]])
