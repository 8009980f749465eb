"""Signed distance field environment and the hinge collision cost.

Obstacles are exact primitives (axis-aligned boxes, spheres); the field is
sampled onto a uniform grid and queried through a multilinear interpolant
whose gradient is analytic. Sign convention: positive outside obstacles,
negative inside.
"""

import itertools
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# Value stored when there are no obstacles at all.
FREE_SPACE_SENTINEL = 1.0e6


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if not np.all(lo < hi):
            raise ConfigError("box needs lo < hi componentwise")

    def distance(self, points: np.ndarray) -> np.ndarray:
        center = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        q = np.abs(points - center) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ConfigError("sphere radius must be positive")

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points - self.center, axis=-1) - self.radius


@dataclass(frozen=True)
class ObstacleSet:
    primitives: tuple

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Exact signed distance: min over primitives."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.primitives:
            return np.full(points.shape[0], FREE_SPACE_SENTINEL)
        d = np.stack([p.distance(points) for p in self.primitives], axis=0)
        return np.min(d, axis=0)


@dataclass(frozen=True)
class CollisionCostParams:
    """Hinge parameters: penalty is weight * max(margin - sdf, 0)^2."""

    margin: float = 0.5
    weight: float = 1.0
    threshold: float = 0.0  # sdf value below which a point counts as colliding

    def __post_init__(self):
        if self.margin < 0 or self.weight < 0:
            raise ConfigError("margin and weight must be nonnegative")


class SdfMap:
    """Signed distance sampled on a uniform grid with multilinear queries."""

    def __init__(self, origin, cell_size: float, values: np.ndarray):
        self.origin = np.asarray(origin, dtype=float)
        self.cell_size = float(cell_size)
        self.values = np.asarray(values, dtype=float)
        self.dim = self.origin.shape[0]
        if self.cell_size <= 0:
            raise ConfigError("cell size must be positive")
        if self.values.ndim != self.dim or self.dim not in (2, 3):
            raise ConfigError("value grid rank must match a 2D or 3D origin")
        if any(e < 2 for e in self.values.shape):
            raise ConfigError("need at least 2 grid nodes per axis")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("SDF values must be finite")

    @property
    def extents(self):
        return self.values.shape

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (np.array(self.extents) - 1) * self.cell_size

    def interpolate(self, points: np.ndarray):
        """Multilinear value and analytic gradient at each query point.

        Out-of-bounds queries are clamped to the grid; the returned
        ``in_bounds`` mask marks them and callers must treat clamped
        evaluations as colliding.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        u = (points - self.origin) / self.cell_size
        hi = np.array(self.extents, dtype=float) - 1.0
        in_bounds = np.all((u >= 0.0) & (u <= hi), axis=1)
        uc = np.clip(u, 0.0, hi - 1e-12)
        i0 = np.floor(uc).astype(int)
        frac = uc - i0

        M = points.shape[0]
        vals = np.zeros(M)
        grads = np.zeros((M, self.dim))
        for corner in itertools.product((0, 1), repeat=self.dim):
            idx = tuple((i0[:, k] + corner[k]) for k in range(self.dim))
            v = self.values[idx]
            w_axes = [frac[:, k] if corner[k] else 1.0 - frac[:, k] for k in range(self.dim)]
            w = np.prod(np.stack(w_axes, axis=0), axis=0)
            vals += w * v
            for k in range(self.dim):
                sign = 1.0 if corner[k] else -1.0
                others = [w_axes[j] for j in range(self.dim) if j != k]
                wk = np.prod(np.stack(others, axis=0), axis=0) if others else np.ones(M)
                grads[:, k] += sign * wk * v / self.cell_size
        return vals, grads, in_bounds

    def value_grad(self, pos):
        """Single-point convenience wrapper around :meth:`interpolate`."""
        vals, grads, inb = self.interpolate(np.asarray(pos, dtype=float)[None, :])
        return vals[0], grads[0], bool(inb[0])


def build_sdf(obstacles: ObstacleSet, origin, cell_size: float, extents) -> SdfMap:
    """Sample the exact primitive signed distance onto a uniform grid."""
    origin = np.asarray(origin, dtype=float)
    extents = tuple(int(e) for e in extents)
    if len(extents) != origin.shape[0]:
        raise ConfigError("extents rank must match origin")
    if any(e < 2 for e in extents):
        raise ConfigError("need at least 2 grid nodes per axis")
    if cell_size <= 0:
        raise ConfigError("cell size must be positive")
    axes = [origin[k] + cell_size * np.arange(extents[k]) for k in range(len(extents))]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    values = obstacles.distance(points).reshape(extents)
    return SdfMap(origin, cell_size, values)


def hinge_cost_path(sdf_map: SdfMap, params: CollisionCostParams, path: np.ndarray, dim: int):
    """Hinge cost, gradient, and Gauss-Newton curvature along a state path.

    ``path`` has shape (M, n); only the leading ``dim`` position entries
    carry collision cost. Returns (V (M,), grad (M, n), gn (M, n, n),
    in_bounds (M,)). The curvature is the PSD rank-one surrogate
    2 * weight * gS gS^T, zeroed where the hinge is inactive.
    """
    path = np.atleast_2d(np.asarray(path, dtype=float))
    M, n = path.shape
    vals, gS, inb = sdf_map.interpolate(path[:, :dim])
    h = np.maximum(params.margin - vals, 0.0)
    V = params.weight * h * h
    grad = np.zeros((M, n))
    gn = np.zeros((M, n, n))
    active = h > 0.0
    grad[:, :dim] = (-2.0 * params.weight * h)[:, None] * gS
    outer = gS[:, :, None] * gS[:, None, :]
    gn[:, :dim, :dim] = np.where(active[:, None, None], 2.0 * params.weight * outer, 0.0)
    grad[~active] = 0.0
    return V, grad, gn, inb


def hinge_cost(sdf_map: SdfMap, params: CollisionCostParams, x: np.ndarray, dim: int):
    """Single-state hinge cost; see :func:`hinge_cost_path`."""
    V, grad, gn, inb = hinge_cost_path(sdf_map, params, np.asarray(x)[None, :], dim)
    return V[0], grad[0], gn[0], bool(inb[0])


def collision_free(sdf_map: SdfMap, params: CollisionCostParams,
                   mean_path: np.ndarray, dim: int) -> bool:
    """True iff the path clears the collision threshold at every knot and
    at the midpoint of every consecutive knot pair. Out-of-bounds counts
    as collision."""
    mean_path = np.atleast_2d(np.asarray(mean_path, dtype=float))
    if mean_path.shape[0] == 0:
        raise ValueError("path must be nonempty")
    pos = mean_path[:, :dim]
    mids = 0.5 * (pos[:-1] + pos[1:]) if pos.shape[0] > 1 else np.empty((0, dim))
    probe = np.vstack([pos, mids])
    vals, _, inb = sdf_map.interpolate(probe)
    return bool(np.all(inb) and np.all(vals > params.threshold))


# --- flat binary sidecar cache -------------------------------------------
# layout (little-endian): int64 dim; int64 extents[dim]; float64 origin[dim];
# float64 cell_size; float64 values row-major.

def save_sdf_cache(sdf_map: SdfMap, path) -> None:
    with open(path, "wb") as fh:
        d = sdf_map.dim
        fh.write(struct.pack("<q", d))
        fh.write(struct.pack(f"<{d}q", *sdf_map.extents))
        fh.write(struct.pack(f"<{d}d", *sdf_map.origin))
        fh.write(struct.pack("<d", sdf_map.cell_size))
        fh.write(np.ascontiguousarray(sdf_map.values, dtype="<f8").tobytes())


def load_sdf_cache(path) -> SdfMap:
    with open(path, "rb") as fh:
        (d,) = struct.unpack("<q", fh.read(8))
        if d not in (2, 3):
            raise ConfigError(f"bad SDF cache dimension {d}")
        extents = struct.unpack(f"<{d}q", fh.read(8 * d))
        origin = np.array(struct.unpack(f"<{d}d", fh.read(8 * d)))
        (cell,) = struct.unpack("<d", fh.read(8))
        count = int(np.prod(extents))
        values = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(extents)
    return SdfMap(origin, cell, values.copy())
