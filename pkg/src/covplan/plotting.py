"""Static plot emission: SVG scenes for 2D data and CSV moment tables.

The SVG shows obstacles, mean-trajectory polylines, and two families of
3-sigma position ellipses: solid strokes for the state covariance and dashed
strokes for the estimation-error covariance. CSV columns are written with
repr-exact floats so a re-parse reproduces the stored moments bit for bit.
"""

import math

import numpy as np

from .errors import ConfigError
from .sdf import Box, Sphere

SIGMA_LEVEL = 3.0
_FMT = "%.17g"


# --------------------------------------------------------------------------
# CSV moment tables
# --------------------------------------------------------------------------

def moments_csv_header(n: int) -> str:
    cols = ["segment", "knot", "t"]
    cols += [f"x{i}" for i in range(n)]
    cols += [f"Sigma_{i}_{j}" for i in range(n) for j in range(n)]
    cols += [f"P_{i}_{j}" for i in range(n) for j in range(n)]
    return ",".join(cols)


def write_moments_csv(segments: list, dt: float, path) -> None:
    """``segments`` is a list of dicts with keys xbar (N+1, n), Sigma, P."""
    if not segments:
        raise ConfigError("nothing to write")
    n = segments[0]["xbar"].shape[1]
    lines = [moments_csv_header(n)]
    for si, seg in enumerate(segments):
        xbar, Sigma, P = seg["xbar"], seg["Sigma"], seg["P"]
        for k in range(xbar.shape[0]):
            vals = [str(si), str(k), _FMT % (k * dt)]
            vals += [_FMT % v for v in xbar[k]]
            vals += [_FMT % v for v in Sigma[k].ravel()]
            vals += [_FMT % v for v in P[k].ravel()]
            lines.append(",".join(vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_moments_csv(path) -> list:
    """Inverse of :func:`write_moments_csv`; returns the segment list."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    n = sum(1 for c in header if c.startswith("x") and "_" not in c)
    segments = {}
    for row in rows:
        si = int(row[0])
        seg = segments.setdefault(si, {"xbar": [], "Sigma": [], "P": []})
        vals = [float(v) for v in row[2:]]
        seg["xbar"].append(vals[1:1 + n])
        seg["Sigma"].append(np.reshape(vals[1 + n:1 + n + n * n], (n, n)))
        seg["P"].append(np.reshape(vals[1 + n + n * n:], (n, n)))
    out = []
    for si in sorted(segments):
        seg = segments[si]
        out.append({k: np.asarray(v) for k, v in seg.items()})
    return out


# --------------------------------------------------------------------------
# SVG scene
# --------------------------------------------------------------------------

def _ellipse_params(cov2: np.ndarray):
    """3-sigma radii and rotation (degrees) of a 2x2 covariance ellipse."""
    w, V = np.linalg.eigh(0.5 * (cov2 + cov2.T))
    w = np.maximum(w, 0.0)
    rx, ry = SIGMA_LEVEL * math.sqrt(w[1]), SIGMA_LEVEL * math.sqrt(w[0])
    angle = math.degrees(math.atan2(V[1, 1], V[0, 1]))
    return rx, ry, angle


def _svg_ellipse(center, cov2, stroke, dashed=False) -> str:
    rx, ry, angle = _ellipse_params(cov2)
    dash = ' stroke-dasharray="0.08 0.06"' if dashed else ""
    return (f'<ellipse cx="0" cy="0" rx="{rx:.6g}" ry="{ry:.6g}" '
            f'fill="none" stroke="{stroke}" stroke-width="0.02"{dash} '
            f'transform="translate({center[0]:.6g} {center[1]:.6g}) '
            f'rotate({angle:.6g})"/>')


def _svg_obstacle(prim) -> str:
    if isinstance(prim, Box):
        lo, hi = prim.lo, prim.hi
        return (f'<rect x="{lo[0]:.6g}" y="{lo[1]:.6g}" '
                f'width="{hi[0] - lo[0]:.6g}" height="{hi[1] - lo[1]:.6g}" '
                f'fill="#8a8a8a"/>')
    if isinstance(prim, Sphere):
        c = prim.center
        return (f'<circle cx="{c[0]:.6g}" cy="{c[1]:.6g}" '
                f'r="{prim.radius:.6g}" fill="#8a8a8a"/>')
    raise ConfigError(f"cannot draw obstacle type {type(prim).__name__}")


def render_svg(segments: list, obstacles=None, bounds=None,
               ellipse_stride: int = 1) -> str:
    """SVG scene string for 2D segments (dicts of xbar/Sigma/P arrays).

    ``bounds`` is (lo, hi) world coordinates; derived from the data plus a
    margin when omitted. Only the leading two state entries (positions) are
    drawn.
    """
    if not segments:
        raise ConfigError("nothing to plot")
    pts = np.concatenate([seg["xbar"][:, :2] for seg in segments], axis=0)
    if bounds is None:
        lo = pts.min(axis=0) - 1.0
        hi = pts.max(axis=0) + 1.0
    else:
        lo = np.asarray(bounds[0], dtype=float)
        hi = np.asarray(bounds[1], dtype=float)
    w, h = hi - lo

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{lo[0]:.6g} '
        f'{lo[1]:.6g} {w:.6g} {h:.6g}" width="800" height="{800 * h / w:.0f}">',
        # flip the y axis so +y points up
        f'<g transform="translate(0 {lo[1] + hi[1]:.6g}) scale(1 -1)">',
        f'<rect x="{lo[0]:.6g}" y="{lo[1]:.6g}" width="{w:.6g}" '
        f'height="{h:.6g}" fill="#ffffff"/>',
    ]
    for prim in (obstacles.primitives if obstacles is not None else ()):
        parts.append(_svg_obstacle(prim))
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    for si, seg in enumerate(segments):
        color = palette[si % len(palette)]
        xy = seg["xbar"][:, :2]
        path = " ".join(f"{p[0]:.6g},{p[1]:.6g}" for p in xy)
        for k in range(0, xy.shape[0], ellipse_stride):
            parts.append(_svg_ellipse(xy[k], seg["Sigma"][k][:2, :2], color))
            parts.append(_svg_ellipse(xy[k], seg["P"][k][:2, :2], color,
                                      dashed=True))
        parts.append(f'<polyline points="{path}" fill="none" '
                     f'stroke="{color}" stroke-width="0.04"/>')
    parts.append("</g></svg>")
    return "\n".join(parts)


def save_svg(segments: list, path, obstacles=None, bounds=None,
             ellipse_stride: int = 1) -> None:
    with open(path, "w") as fh:
        fh.write(render_svg(segments, obstacles=obstacles, bounds=bounds,
                            ellipse_stride=ellipse_stride))
        fh.write("\n")
