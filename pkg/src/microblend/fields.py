"""Signed distance fields on periodic unit cells, and basis-class preprocessing.

Conventions used across the package:

* A scalar field is a ``float64`` array of shape ``(ny, nx)``, cell-centered on
  the unit square; cell ``[iy, ix]`` sits at ``((ix + 0.5)/nx, (iy + 0.5)/ny)``.
* A signed distance field (SDF) is positive inside solid material, negative in
  void, with magnitudes measured in cells (pixels).  Thresholding at zero
  recovers the solid set: ``solid = phi >= 0``.
* Unit cells tile periodically; all morphology and connectivity below wraps.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


def cell_centers(nx: int, ny: int):
    """Return (X, Y) arrays of cell-center coordinates on the unit square."""
    x = (np.arange(nx) + 0.5) / nx
    y = (np.arange(ny) + 0.5) / ny
    return np.meshgrid(x, y)


def sdf_from_binary(img, periodic: bool = True) -> np.ndarray:
    """Exact signed Euclidean distance field of a binary image.

    Positive inside the solid, negative outside.  The magnitude is the
    Euclidean distance in cells to the nearest opposite-phase cell center,
    minus a half-cell offset so the zero level sits on the interface.

    Parameters
    ----------
    img : array_like of bool
        Solid mask, shape (ny, nx).  Must contain both phases.
    periodic : bool
        Measure distances on the torus (unit cell tiling).
    """
    img = np.asarray(img, dtype=bool)
    if img.all() or not img.any():
        raise ValueError("binary image has no interface (all solid or all void)")
    if periodic:
        tiled = np.tile(img, (3, 3))
        d_solid = ndimage.distance_transform_edt(tiled)
        d_void = ndimage.distance_transform_edt(~tiled)
        ny, nx = img.shape
        d_solid = d_solid[ny:2 * ny, nx:2 * nx]
        d_void = d_void[ny:2 * ny, nx:2 * nx]
    else:
        d_solid = ndimage.distance_transform_edt(img)
        d_void = ndimage.distance_transform_edt(~img)
    return np.where(img, d_solid - 0.5, -(d_void - 0.5))


def truss_sdf(segments, grid) -> np.ndarray:
    """SDF of a union of periodic capsules (strut segments) in cell units.

    Each segment is ``((x1, y1), (x2, y2), halfwidth)`` with endpoints and
    halfwidth on the unit square.  The capsule field ``halfwidth - dist`` is
    evaluated against the segment and its eight periodic images, and the union
    is the pointwise max.
    """
    nx, ny = grid
    if not segments:
        raise ValueError("need at least one segment")
    X, Y = cell_centers(nx, ny)
    phi = np.full((ny, nx), -np.inf)
    for p1, p2, hw in segments:
        p1 = np.asarray(p1, dtype=float)
        p2 = np.asarray(p2, dtype=float)
        seg = p2 - p1
        seg2 = float(seg @ seg)
        if seg2 == 0.0 and hw <= 0.0:
            raise ValueError("zero-length segment with zero halfwidth")
        for ox in (-1.0, 0.0, 1.0):
            for oy in (-1.0, 0.0, 1.0):
                dx = X - (p1[0] + ox)
                dy = Y - (p1[1] + oy)
                if seg2 > 0.0:
                    t = np.clip((dx * seg[0] + dy * seg[1]) / seg2, 0.0, 1.0)
                    dx = dx - t * seg[0]
                    dy = dy - t * seg[1]
                dist = np.hypot(dx, dy)
                np.maximum(phi, hw - dist, out=phi)
    return phi * nx  # unit-square distances -> cells


def volume_fraction(phi, t: float = 0.0) -> float:
    """Fraction of cells with ``phi + t >= 0``; nondecreasing in ``t``."""
    phi = np.asarray(phi)
    return float(np.count_nonzero(phi + t >= 0.0)) / phi.size


def bisect_isovalue(phi, v_target: float, tol: float = 1e-3,
                    max_iter: int = 100) -> float:
    """Find isovalue ``t`` with ``volume_fraction(phi, t)`` close to target.

    Cell counting makes the volume a step function of ``t``, so the requested
    tolerance may be unattainable; after ``max_iter`` bisections the candidate
    closest to the target is returned.
    """
    phi = np.asarray(phi)
    if not 0.0 <= v_target <= 1.0:
        warnings.warn(f"volume target {v_target} clamped into [0, 1]")
        v_target = min(max(v_target, 0.0), 1.0)
    r = float(np.max(np.abs(phi))) + 1.0
    lo, hi = -r, r
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        v = volume_fraction(phi, mid)
        if abs(v - v_target) <= tol:
            return mid
        if v < v_target:
            lo = mid
        else:
            hi = mid
    candidates = [mid, lo, hi]
    errs = [abs(volume_fraction(phi, t) - v_target) for t in candidates]
    return candidates[int(np.argmin(errs))]


def disk_offsets(s: int) -> np.ndarray:
    """Pixel offsets of a discrete disk of diameter ``s`` (its bounding box
    minus corners outside the inscribed circle)."""
    if s < 1:
        raise ValueError("feature size must be >= 1 px")
    c = (s - 1) / 2.0
    r2 = (s / 2.0) ** 2
    offs = [(dy, dx) for dy in range(s) for dx in range(s)
            if (dy - c) ** 2 + (dx - c) ** 2 <= r2]
    return np.array(offs, dtype=int)


def _erode_periodic(img: np.ndarray, offs: np.ndarray) -> np.ndarray:
    out = np.ones_like(img, dtype=bool)
    for dy, dx in offs:
        out &= np.roll(img, (-dy, -dx), axis=(0, 1))
    return out


def _dilate_periodic(img: np.ndarray, offs: np.ndarray) -> np.ndarray:
    out = np.zeros_like(img, dtype=bool)
    for dy, dx in offs:
        out |= np.roll(img, (dy, dx), axis=(0, 1))
    return out


def binary_opening_periodic(img, s: int) -> np.ndarray:
    """Morphological opening with a diameter-``s`` disk under periodic wrap."""
    img = np.asarray(img, dtype=bool)
    offs = disk_offsets(s)
    return _dilate_periodic(_erode_periodic(img, offs), offs)


def min_feature_ok(img, s: int) -> bool:
    """True iff opening the solid with a diameter-``s`` disk keeps every cell.

    Cells whose removal is pure boundary jitter (4-adjacent to the opened
    body) are tolerated: discretizing a smooth boundary leaves staircase
    corner pixels that no disk translate covers exactly, and those are not
    features.  Any cell farther than one pixel from the opened body fails.
    """
    img = np.asarray(img, dtype=bool)
    opened = binary_opening_periodic(img, s)
    near = opened.copy()
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        near |= np.roll(opened, (dy, dx), axis=(0, 1))
    return bool(not (img & ~near).any())


def is_self_connected(img) -> bool:
    """True iff all solid cells form one 4-connected component on the torus."""
    img = np.asarray(img, dtype=bool)
    if not img.any():
        return False
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    labels, n = ndimage.label(img, structure=structure)
    if n <= 1:
        return True
    # union-find merge of labels that touch across the periodic seams
    parent = list(range(n + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    for a, b in zip(labels[0, :], labels[-1, :]):
        if a and b:
            union(a, b)
    for a, b in zip(labels[:, 0], labels[:, -1]):
        if a and b:
            union(a, b)
    roots = {find(l) for l in range(1, n + 1)}
    return len(roots) == 1


def feasible_solid(img, min_feature_px: int) -> bool:
    """Combined feasibility used for lower bounds: feature size + connectivity."""
    img = np.asarray(img, dtype=bool)
    return is_self_connected(img) and min_feature_ok(img, min_feature_px)


def gradient_magnitude(phi) -> np.ndarray:
    """|grad phi| by periodic central differences (cell units)."""
    phi = np.asarray(phi)
    gx = 0.5 * (np.roll(phi, -1, axis=1) - np.roll(phi, 1, axis=1))
    gy = 0.5 * (np.roll(phi, -1, axis=0) - np.roll(phi, 1, axis=0))
    return np.hypot(gx, gy)


@dataclass
class BasisClass:
    """A named basis microstructure class represented by its SDF."""
    name: str
    phi: np.ndarray  # (ny, nx), cell units


@dataclass
class BasisSet:
    """Preprocessed basis classes ready for blending.

    ``phi_star[d] = phi + t_star[d]`` all share the common volume ``v_star``;
    ``phi_lower[d] = phi + t_lower[d]`` is the smallest-volume isovalue whose
    solid passes the minimum-feature and self-connectedness checks.

    ``field_scale`` rescales cell-unit fields so that half the cell width maps
    to 1.0.  The blending operators consume the scaled fields: with sharpness
    beta2 = 32 the activation gate can then actually suppress a basis (in raw
    pixel units no attainable gate value is small enough to hide a 4 px strut).
    """
    bases: list[BasisClass]
    v_star: float
    t_star: np.ndarray
    t_lower: np.ndarray
    v_lower: np.ndarray
    v_min: float
    min_feature_px: int
    field_scale: float
    phi_star: list = field(default_factory=list)
    phi_lower: list = field(default_factory=list)

    @property
    def n_bases(self) -> int:
        return len(self.bases)

    @property
    def shape(self):
        return self.bases[0].phi.shape

    def scaled_star(self) -> np.ndarray:
        """(D, ny, nx) stack of representative fields in blend units."""
        return np.stack(self.phi_star) * self.field_scale

    def scaled_lower(self) -> np.ndarray:
        """(D, ny, nx) stack of lower-bound fields in blend units."""
        return np.stack(self.phi_lower) * self.field_scale


def _feasibility_boundary(phi, min_feature_px, scan_step, t_tol, v_cap):
    """Smallest t whose solid passes both feasibility checks.

    Scans upward from the infeasible (low volume) side, then bisects the
    feasibility boundary.  Returns None when no isovalue at volume <= v_cap
    is feasible.
    """
    t = -float(np.max(phi))  # just the peak cells solid
    t_end = float(np.max(np.abs(phi))) + 1.0
    t_lo = None
    while t <= t_end:
        if feasible_solid(phi + t >= 0.0, min_feature_px):
            if volume_fraction(phi, t) > v_cap:
                return None
            break
        t_lo = t
        t += scan_step
    else:
        return None
    if t_lo is None:
        return t
    t_hi = t
    while t_hi - t_lo > t_tol:
        mid = 0.5 * (t_lo + t_hi)
        if feasible_solid(phi + mid >= 0.0, min_feature_px):
            t_hi = mid
        else:
            t_lo = mid
    return t_hi


def prepare_basis_set(bases, v_star: float, min_feature_px: int,
                      scan_step: float = 0.25, t_tol: float = 1e-2,
                      lower_margin: float = 0.0,
                      v_cap: float = 0.95) -> BasisSet:
    """One-time preprocessing of basis classes.

    Finds ``t_star`` by bisection so every basis attains the common volume
    ``v_star``, and ``t_lower`` by an upward scan plus bisection on the
    feasibility boundary.  ``lower_margin`` (cells) is added to the boundary
    isovalue to keep blends of marginally feasible bounds robust.

    Raises
    ------
    ValueError
        If a basis has no feasible isovalue at volume <= ``v_cap``.
    """
    if not 0.0 < v_star < 1.0:
        raise ValueError("v_star must lie in (0, 1)")
    ny, nx = np.asarray(bases[0].phi).shape
    t_star, t_lower, v_lower = [], [], []
    for b in bases:
        phi = np.asarray(b.phi, dtype=float)
        if phi.shape != (ny, nx):
            raise ValueError(f"basis {b.name!r} grid differs from the set")
        ts = bisect_isovalue(phi, v_star, tol=1e-3)
        boundary = _feasibility_boundary(phi, min_feature_px, scan_step,
                                         t_tol, v_cap)
        if boundary is None:
            raise ValueError(
                f"basis {b.name!r} has no feasible isovalue: no solid at "
                f"volume <= {v_cap} passes min_feature_ok({min_feature_px}) "
                "and is_self_connected")
        tl = boundary + lower_margin
        t_star.append(ts)
        t_lower.append(tl)
        v_lower.append(volume_fraction(phi, tl))
    bs = BasisSet(
        bases=list(bases),
        v_star=v_star,
        t_star=np.array(t_star),
        t_lower=np.array(t_lower),
        v_lower=np.array(v_lower),
        v_min=float(np.min(v_lower)),
        min_feature_px=min_feature_px,
        field_scale=2.0 / nx,
    )
    bs.phi_star = [np.asarray(b.phi, dtype=float) + t
                   for b, t in zip(bases, bs.t_star)]
    bs.phi_lower = [np.asarray(b.phi, dtype=float) + t
                    for b, t in zip(bases, bs.t_lower)]
    return bs


def write_field(path, phi) -> None:
    """Plain-text field file: header ``nx ny`` then one row of reals per line."""
    phi = np.asarray(phi)
    ny, nx = phi.shape
    with open(path, "w") as f:
        f.write(f"{nx} {ny}\n")
        for row in phi:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_field(path) -> np.ndarray:
    with open(path) as f:
        nx, ny = map(int, f.readline().split())
        phi = np.loadtxt(f, ndmin=2)
    if phi.shape != (ny, nx):
        raise ValueError(f"{path}: field body {phi.shape} does not match "
                         f"header ({ny}, {nx})")
    return phi


def save_basis_set(bs: BasisSet, path) -> None:
    """Persist a basis set as one field file per basis plus a manifest."""
    import os
    os.makedirs(path, exist_ok=True)
    for b in bs.bases:
        write_field(os.path.join(path, f"{b.name}.field"), b.phi)
    manifest = {
        "names": [b.name for b in bs.bases],
        "v_star": bs.v_star,
        "t_star": [float(t) for t in bs.t_star],
        "t_lower": [float(t) for t in bs.t_lower],
        "v_lower": [float(v) for v in bs.v_lower],
        "v_min": bs.v_min,
        "min_feature_px": bs.min_feature_px,
        "field_scale": bs.field_scale,
    }
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_basis_set(path) -> BasisSet:
    import os
    with open(os.path.join(path, "manifest.json")) as f:
        m = json.load(f)
    bases = [BasisClass(name, read_field(os.path.join(path, f"{name}.field")))
             for name in m["names"]]
    bs = BasisSet(
        bases=bases,
        v_star=m["v_star"],
        t_star=np.array(m["t_star"]),
        t_lower=np.array(m["t_lower"]),
        v_lower=np.array(m["v_lower"]),
        v_min=m["v_min"],
        min_feature_px=m["min_feature_px"],
        field_scale=m["field_scale"],
    )
    bs.phi_star = [b.phi + t for b, t in zip(bases, bs.t_star)]
    bs.phi_lower = [b.phi + t for b, t in zip(bases, bs.t_lower)]
    return bs
