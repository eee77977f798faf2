"""Multiclass shape blending: weight schemes, activated union, and gradients.

A new microstructure class is a point in weight space; its field is built in
two steps.  Step one takes a weighted sum of the representative basis fields
(cross-dissolve), which can leave broken or thin shapes.  Step two restores
feasibility with a soft-max union against the lower feasible bound of every
activated basis, gated by a smooth Heaviside of the weights.

All blending operates on fields in the BasisSet's scaled units (half cell
width = 1.0); see ``fields.BasisSet``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .fields import BasisSet, volume_fraction


@dataclass
class BlendParams:
    """Fixed sharpness parameters of the blending scheme.

    beta1 controls the sigmoid volume relaxation, beta2 both the soft-max
    union and the Heaviside gate.  eta2 (the gate threshold) adapts to each
    weight vector as a percentile of its entries.
    """
    beta1: float = 64.0
    beta2: float = 32.0
    eta2_percentile: float = 75.0


def normalize_weights(c):
    """Map D-1 free weights in [0, 1] to D normalized class weights.

    Returns ``(c_tilde, jac)`` where ``c_tilde`` sums to one by telescoping
    construction and ``jac[i, k] = d c_tilde[i] / d c[k]`` in product-rule
    form (safe at zero weights).
    """
    c = np.asarray(c, dtype=float)
    dm1 = c.size
    d = dm1 + 1
    prods = np.concatenate([[1.0], np.cumprod(c)])
    c_tilde = np.empty(d)
    c_tilde[:dm1] = prods[:dm1] - prods[1:]
    c_tilde[dm1] = prods[dm1]

    # dprods[j, k] = d prods[j] / d c[k]  (prods[0] is constant)
    dprods = np.zeros((dm1 + 1, dm1))
    for k in range(dm1):
        partial = 1.0
        for j in range(dm1):
            if j != k:
                partial *= c[j]
            if j >= k:
                dprods[j + 1, k] = partial
    jac = np.empty((d, dm1))
    jac[:dm1] = dprods[:dm1] - dprods[1:]
    jac[dm1] = dprods[dm1]
    return c_tilde, jac


def global_interpolate(c_tilde_all, xi_hat):
    """Interpolate M class weight vectors at one element.

    Parameters
    ----------
    c_tilde_all : (M, D) array
        Normalized weights of the new classes.
    xi_hat : (M-1,) array
        Filtered distribution variables of the element, each in [0, 1].

    Returns
    -------
    c_hat : (D,) array
        Element weights (a convex combination, sums to one).
    w : (M,) array
        ``d c_hat[d] / d c_tilde_all[m, d]``, identical for every d.
    dxi : (D, M-1) array
        ``d c_hat[d] / d xi_hat[m]``.
    """
    c_tilde_all = np.atleast_2d(np.asarray(c_tilde_all, dtype=float))
    xi_hat = np.asarray(xi_hat, dtype=float)
    m = c_tilde_all.shape[0]
    if xi_hat.size != m - 1:
        raise ValueError(f"expected {m - 1} distribution values, "
                         f"got {xi_hat.size}")
    prods = np.concatenate([[1.0], np.cumprod(xi_hat)])
    w = np.empty(m)
    w[:m - 1] = prods[:m - 1] - prods[1:]
    w[m - 1] = prods[m - 1]
    c_hat = w @ c_tilde_all

    diffs = c_tilde_all[1:] - c_tilde_all[:-1]  # (M-1, D)
    dxi = np.zeros((c_tilde_all.shape[1], m - 1))
    for k in range(m - 1):
        partial = 1.0
        for j in range(m - 1):
            if j != k:
                partial *= xi_hat[j]
            if j >= k:
                dxi[:, k] += diffs[j] * partial
    return c_hat, w, dxi


def heaviside(c, beta2: float, eta2: float):
    """Smooth Heaviside gate of the weights and its derivative.

    Exactly 0 at c = 0 and 1 at c = 1; switches around ``eta2``.
    """
    c = np.asarray(c, dtype=float)
    th = np.tanh(beta2 * (c - eta2))
    denom = np.tanh(beta2 * eta2) + np.tanh(beta2 * (1.0 - eta2))
    a = (np.tanh(beta2 * eta2) + th) / denom
    da = beta2 * (1.0 - th * th) / denom
    return a, da


def eta2_from_weights(c_hat, percentile: float = 75.0) -> float:
    """Adaptive gate threshold: a percentile of the element weights."""
    return float(np.percentile(np.asarray(c_hat, dtype=float), percentile))


def _blend_terms(c_hat, basis: BasisSet, params: BlendParams, eta2, gate):
    c_hat = np.asarray(c_hat, dtype=float)
    if c_hat.size != basis.n_bases:
        raise ValueError(f"{c_hat.size} weights for {basis.n_bases} bases")
    if gate is not None:
        a = np.asarray(gate, dtype=float)
        da = np.zeros_like(a)
    else:
        if eta2 is None:
            eta2 = eta2_from_weights(c_hat, params.eta2_percentile)
        a, da = heaviside(c_hat, params.beta2, eta2)
    star = basis.scaled_star()      # (D, ny, nx)
    lower = basis.scaled_lower()    # (D, ny, nx)
    inner = np.einsum("d,dij->ij", c_hat, star)
    return a, da, star, lower, inner


def blend(c_hat, t_e: float, basis: BasisSet, params: BlendParams,
          eta2: float | None = None, gate=None) -> np.ndarray:
    """Two-step blended field at one element (soft-max union form).

    ``eta2=None`` applies the percentile rule to ``c_hat``; passing a value
    freezes the gate threshold (used by gradient checks, which treat eta2 as
    a constant).  ``gate`` overrides the Heaviside activations entirely with
    fixed constants.
    """
    a, _, star, lower, inner = _blend_terms(c_hat, basis, params, eta2, gate)
    b2 = params.beta2
    with np.errstate(over="ignore", under="ignore"):
        shift = np.maximum(b2 * (inner + t_e), b2 * lower.max(axis=0))
        s = np.exp(b2 * (inner + t_e) - shift)
        for ad, low in zip(a, lower):
            if ad > 0.0:
                s += ad * np.exp(b2 * low - shift)
        phi = (shift + np.log(s)) / b2
    if not np.all(np.isfinite(phi)):
        raise FloatingPointError("blend produced non-finite field; "
                                 "check beta2 and field scaling")
    return phi


def blend_grad(c_hat, t_e: float, basis: BasisSet, params: BlendParams,
               eta2: float | None = None, gate=None) -> np.ndarray:
    """Field sensitivities d phi / d c_hat[d], stacked as (D, ny, nx).

    The gate threshold eta2 is held constant during differentiation.
    """
    a, da, star, lower, inner = _blend_terms(c_hat, basis, params, eta2, gate)
    b2 = params.beta2
    shift = np.maximum(b2 * (inner + t_e), b2 * lower.max(axis=0))
    e0 = np.exp(b2 * (inner + t_e) - shift)
    e_low = np.exp(b2 * lower - shift)             # (D, ny, nx)
    denom = e0 + np.einsum("d,dij->ij", a, e_low)
    w0 = e0 / denom
    grads = w0[None] * star + (da / b2)[:, None, None] * (e_low / denom[None])
    return grads


def relaxed_volume(phi, beta1: float):
    """Sigmoid-relaxed volume fraction and its field derivative.

    Returns ``(v, dv)`` with ``v`` the mean of the sigmoid of the field and
    ``dv[u] = d v / d phi[u]``.
    """
    phi = np.asarray(phi, dtype=float)
    s = expit(beta1 * phi)
    v = float(s.mean())
    dv = beta1 * s * (1.0 - s) / phi.size
    return v, dv


class BlendedCell(NamedTuple):
    phi: np.ndarray
    t: float
    volume: float       # sharp volume fraction actually realized
    clamped: bool       # target below the activated lower-bound union


def blend_to_volume(c_hat, v_e: float, basis: BasisSet, params: BlendParams,
                    tol: float = 1e-3, max_iter: int = 100,
                    eta2: float | None = None, gate=None) -> BlendedCell:
    """Blend and bisect the isovalue so the sharp volume matches ``v_e``.

    Volumes below the activated lower-bound union are unattainable; the
    result is then clamped to that union's volume and flagged (the lower
    bounds act as an implicit volume constraint).
    """
    a, _, star, lower, inner = _blend_terms(c_hat, basis, params, eta2, gate)
    b2 = params.beta2
    # Activated union term never changes with t; precompute both summands so
    # each bisection step is a multiply and compare.  Scaled fields keep the
    # raw exponents representable.
    with np.errstate(over="ignore", under="ignore"):
        e0 = np.exp(b2 * inner)
        e_act = np.zeros_like(inner)
        for ad, low in zip(a, lower):
            if ad > 0.0:
                e_act += ad * np.exp(b2 * low)

    def sharp_volume(t):
        with np.errstate(over="ignore", under="ignore"):
            solid = e0 * np.exp(b2 * t) + e_act >= 1.0
        return float(np.count_nonzero(solid)) / solid.size

    v_floor = float(np.count_nonzero(e_act >= 1.0)) / e_act.size
    clamped = v_e < v_floor - tol
    v_target = min(max(v_e, v_floor), 1.0)

    lo = -float(np.max(inner)) - 40.0 / b2   # inner term negligible: floor
    hi = -float(np.min(inner)) + 1e-9        # inner nonnegative: full solid
    t = 0.5 * (lo + hi)
    for _ in range(max_iter):
        t = 0.5 * (lo + hi)
        v = sharp_volume(t)
        if abs(v - v_target) <= tol:
            break
        if v < v_target:
            lo = t
        else:
            hi = t
    else:
        cands = [t, lo, hi]
        errs = [abs(sharp_volume(tc) - v_target) for tc in cands]
        t = cands[int(np.argmin(errs))]
    phi = blend(c_hat, t, basis, params, eta2=eta2, gate=gate)
    return BlendedCell(phi, t, volume_fraction(phi), clamped)
