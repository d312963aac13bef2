"""Modified metric of the three-body problem and hard-core geometry.

Relative coordinates of a triple ``(x, y, z)`` are ``r2 = x - y`` and
``r3 = x - z``.  In these coordinates the kinetic operator becomes
``-2 div(M^2 grad)`` with the fixed 6x6 matrix ``M`` stored below, and the
hard-core condition is a ball of radius ``sqrt(2) a`` in ``M^-1`` coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQRT2 = np.sqrt(2.0)
SQRT3 = np.sqrt(3.0)

# 2x2 blocks, closed form (no runtime matrix square roots)
_M_DIAG = (SQRT3 + 1.0) / (2.0 * SQRT2)
_M_OFF = (SQRT3 - 1.0) / (2.0 * SQRT2)
_MINV_DIAG = (1.0 + SQRT3) / np.sqrt(6.0)
_MINV_OFF = (1.0 - SQRT3) / np.sqrt(6.0)


@dataclass(frozen=True)
class ModifiedMetric:
    """The matrix ``M = (1/2 [[2, 1], [1, 2]])^(1/2)`` acting on pairs of 3-vectors.

    Attributes
    ----------
    block, block_inverse : ndarray, shape (2, 2)
        The 2x2 factors; the full operators are ``block (x) I_3``.
    det_block : float
        Determinant of the 2x2 block, ``sqrt(3)/2``.
    jacobian : float
        Determinant of the full 6x6 matrix, ``det_block**3``.  This is the
        volume factor for ``d^6x = jacobian d^6y`` with ``x = M y``.
    eigenvalues, eigenvalues_inverse : tuple of float
        Spectra of ``M`` and ``M^-1`` (each value has multiplicity 3).
    """

    block: np.ndarray
    block_inverse: np.ndarray
    det_block: float
    jacobian: float
    eigenvalues: tuple
    eigenvalues_inverse: tuple

    @property
    def matrix(self) -> np.ndarray:
        return np.kron(self.block, np.eye(3))

    @property
    def inverse(self) -> np.ndarray:
        return np.kron(self.block_inverse, np.eye(3))

    @property
    def squared(self) -> np.ndarray:
        return np.kron(self.block @ self.block, np.eye(3))


METRIC = ModifiedMetric(
    block=np.array([[_M_DIAG, _M_OFF], [_M_OFF, _M_DIAG]]),
    block_inverse=np.array([[_MINV_DIAG, _MINV_OFF], [_MINV_OFF, _MINV_DIAG]]),
    det_block=SQRT3 / 2.0,
    jacobian=(SQRT3 / 2.0) ** 3,
    eigenvalues=(1.0 / SQRT2, np.sqrt(1.5)),
    eigenvalues_inverse=(np.sqrt(2.0 / 3.0), SQRT2),
)


@dataclass(frozen=True)
class BoxGeometry:
    """Cubic box ``[0, L)^3``, either open or periodic (minimum image)."""

    length: float
    periodic: bool = False

    def __post_init__(self):
        if not np.isfinite(self.length) or self.length <= 0:
            raise ValueError(f"box length must be positive, got {self.length!r}")

    @property
    def volume(self) -> float:
        return self.length ** 3

    def displacement(self, d):
        """Reduce pair differences to ``[-L/2, L/2)^3`` in periodic mode."""
        d = np.asarray(d, dtype=float)
        if not self.periodic:
            return d
        L = self.length
        return d - L * np.floor(d / L + 0.5)

    def wrap(self, x):
        x = np.asarray(x, dtype=float)
        if not self.periodic:
            return x
        return np.mod(x, self.length)


def metric_apply(v, which: str = "M"):
    """Apply ``M`` or ``M^-1`` to 6-vectors.

    ``v`` has shape ``(..., 6)`` or ``(..., 2, 3)``; the result has the same
    shape.  ``which`` is ``"M"`` or ``"M_inverse"``.
    """
    v = np.asarray(v, dtype=float)
    if which == "M":
        d, o = _M_DIAG, _M_OFF
    elif which == "M_inverse":
        d, o = _MINV_DIAG, _MINV_OFF
    else:
        raise ValueError(f"which must be 'M' or 'M_inverse', got {which!r}")
    shape = v.shape
    w = v.reshape(shape[:-1] + (2, 3)) if shape[-1] == 6 else v
    out = np.empty_like(w)
    out[..., 0, :] = d * w[..., 0, :] + o * w[..., 1, :]
    out[..., 1, :] = o * w[..., 0, :] + d * w[..., 1, :]
    return out.reshape(shape)


def split6(v):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] == 6:
        return v[..., :3], v[..., 3:]
    return v[..., 0, :], v[..., 1, :]


def hyperradius(r2, r3):
    """``|M^-1 (r2, r3)|`` via ``(2/3)(|r2|^2 + |r3|^2 + |r2 - r3|^2)``.

    The three squared lengths are summed in sorted order so the result is
    bitwise invariant under relabelling of the triple.
    """
    r2 = np.asarray(r2, dtype=float)
    r3 = np.asarray(r3, dtype=float)
    return np.sqrt(_sorted_sum(
        np.einsum("...i,...i->...", r2, r2),
        np.einsum("...i,...i->...", r3, r3),
        np.einsum("...i,...i->...", r2 - r3, r2 - r3),
    ) * (2.0 / 3.0))


def _sorted_sum(p, q, s):
    stacked = np.sort(np.stack(np.broadcast_arrays(p, q, s)), axis=0)
    return (stacked[0] + stacked[1]) + stacked[2]


def triple_hyperradius(x, y, z, box: BoxGeometry | None = None):
    """Hyperradius of a triple of positions.

    In periodic mode the images are applied to ``x - y`` and ``x - z`` and
    ``y - z`` is derived from them, so the three differences describe one
    rigid triangle.
    """
    x, y, z = (np.asarray(p, dtype=float) for p in (x, y, z))
    if box is not None and box.periodic:
        r2 = box.displacement(x - y)
        r3 = box.displacement(x - z)
        return hyperradius(r2, r3)
    dxy, dxz, dyz = x - y, x - z, y - z
    return np.sqrt(_sorted_sum(
        np.einsum("...i,...i->...", dxy, dxy),
        np.einsum("...i,...i->...", dxz, dxz),
        np.einsum("...i,...i->...", dyz, dyz),
    ) * (2.0 / 3.0))


def hard_core_violated(x, y, z, a: float, box: BoxGeometry | None = None):
    """True iff ``|(x-y, x-z, y-z)| / sqrt(3) <= a`` (boundary inclusive)."""
    if a <= 0:
        raise ValueError("hard-core radius must be positive")
    return triple_hyperradius(x, y, z, box) <= SQRT2 * a


def centered_coordinates(x, y, z):
    """Return ``(r1, (r2, r3))`` with ``r1`` the centre of mass."""
    x, y, z = (np.asarray(p, dtype=float) for p in (x, y, z))
    r1 = (x + y + z) / 3.0
    return r1, (x - y, x - z)


def from_centered(r1, r2, r3):
    """Inverse of :func:`centered_coordinates`."""
    r1, r2, r3 = (np.asarray(p, dtype=float) for p in (r1, r2, r3))
    x = r1 + (r2 + r3) / 3.0
    return x, x - r2, x - r3


def metric_self_check(samples: int = 10_000, seed: int = 0) -> dict:
    """Algebraic identities of ``M`` and the hyperradius on random vectors."""
    rng = np.random.default_rng(seed)
    m = METRIC
    eye = np.eye(6)
    half = np.kron(0.5 * np.array([[2.0, 1.0], [1.0, 2.0]]), np.eye(3))
    v = rng.normal(size=(samples, 6)) * rng.uniform(0.1, 10.0, size=(samples, 1))
    via_matrix = np.linalg.norm(metric_apply(v, "M_inverse"), axis=-1)
    via_pairs = hyperradius(v[:, :3], v[:, 3:])
    roundtrip = metric_apply(metric_apply(v, "M"), "M_inverse")
    checks = {
        "square": float(np.abs(m.matrix @ m.matrix - half).max()),
        "inverse": float(np.abs(m.matrix @ m.inverse - eye).max()),
        "symmetric": float(np.abs(m.matrix - m.matrix.T).max()),
        "jacobian": float(abs(np.linalg.det(m.matrix) - m.jacobian)),
        "spectrum": float(np.abs(np.sort(np.linalg.eigvalsh(m.matrix))
                                 - np.repeat(m.eigenvalues, 3)).max()),
        "hyperradius": float(np.max(np.abs(via_matrix - via_pairs) / via_pairs)),
        "roundtrip": float(np.max(np.abs(roundtrip - v) / np.abs(v).max(axis=1, keepdims=True))),
    }
    tri = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, np.sqrt(0.75), 0.0]])
    boundary = bool(hard_core_violated(*tri, a=1.0)) and \
        not bool(hard_core_violated(*(1.000001 * tri), a=1.0))
    passed = all(val < 1e-12 for val in checks.values()) and boundary
    return {"deviations": checks, "core_boundary_inclusive": boundary, "passed": passed}
