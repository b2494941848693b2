"""Sound output bounds of ReLU MLPs over input boxes.

Two methods are provided: interval bound propagation (:func:`ibp_bounds`) and
a CROWN-style backward linear relaxation (:func:`crown_bounds`). CROWN results
are intersected layer by layer with IBP, so they are never looser than IBP.

Both functions accept a single box (vectors of shape ``(n,)``) or a batch of
boxes (shape ``(B, n)``) and return the same leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import GradientSet, Layer, MlpParams, ShapeError


@dataclass(frozen=True)
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ShapeError(f"lower {lo.shape} and upper {hi.shape} differ")
        if np.any(lo > hi):
            raise ValueError("box has lower > upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(cls, center, radius: float) -> "BoxBounds":
        c = np.asarray(center, dtype=np.float64)
        return cls(c - radius, c + radius)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, atol: float = 0.0) -> np.ndarray:
        return np.all((x >= self.lower - atol) & (x <= self.upper + atol), axis=-1)

    def intersect(self, other: "BoxBounds") -> "BoxBounds":
        return BoxBounds(np.maximum(self.lower, other.lower), np.minimum(self.upper, other.upper))

    def __len__(self):
        return self.lower.shape[-1]


_SLACK = 1e-12


def _check(p: MlpParams, box: BoxBounds) -> None:
    if box.lower.ndim not in (1, 2) or box.lower.shape[-1] != p.in_dim:
        raise ShapeError(f"box width {box.lower.shape} does not match input dim {p.in_dim}")


def _affine_interval(layer: Layer, lo: np.ndarray, hi: np.ndarray):
    mid = (hi + lo) / 2.0
    rad = (hi - lo) / 2.0
    c = mid @ layer.weights.T + layer.biases
    r = rad @ np.abs(layer.weights).T
    return c - r, c + r


def _widen(lo: np.ndarray, hi: np.ndarray):
    # outward slack absorbs floating-point rounding, keeping the bounds sound at box corners
    return lo - _SLACK * (1.0 + np.abs(lo)), hi + _SLACK * (1.0 + np.abs(hi))


def ibp_bounds(p: MlpParams, box: BoxBounds) -> BoxBounds:
    _check(p, box)
    lo, hi = box.lower, box.upper
    for i, layer in enumerate(p.layers):
        if i:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        lo, hi = _widen(*_affine_interval(layer, lo, hi))
    return BoxBounds(lo, hi)


def _relu_relaxation(lo: np.ndarray, hi: np.ndarray):
    """Linear bounds ``sl*x <= relu(x) <= su*x + tu`` valid on ``[lo, hi]``.

    Unstable units use the chord as upper line; the lower line has slope 1
    when ``hi >= -lo`` (smaller relaxation area, ties included) and 0 otherwise.
    """
    active = lo >= 0.0
    unstable = (lo < 0.0) & (hi > 0.0)
    denom = np.where(unstable, hi - lo, 1.0)
    su = np.where(active, 1.0, np.where(unstable, hi / denom, 0.0))
    tu = np.where(unstable, -su * lo, 0.0)
    sl = np.where(active, 1.0, np.where(unstable & (hi >= -lo), 1.0, 0.0))
    return sl, su, tu


def _backsubstitute(p: MlpParams, k: int, relax, lo0: np.ndarray, hi0: np.ndarray):
    """Bounds on pre-activation of layer ``k`` given relaxations of layers < k."""
    w = p.layers[k].weights
    batch = lo0.shape[0]
    a_up = np.broadcast_to(w, (batch,) + w.shape)
    a_lo = a_up
    c_up = np.broadcast_to(p.layers[k].biases, (batch, w.shape[0])).copy()
    c_lo = c_up.copy()
    for j in range(k - 1, -1, -1):
        sl, su, tu = relax[j]
        pos_u, neg_u = np.maximum(a_up, 0.0), np.minimum(a_up, 0.0)
        pos_l, neg_l = np.maximum(a_lo, 0.0), np.minimum(a_lo, 0.0)
        c_up = c_up + np.einsum("bmn,bn->bm", pos_u, tu)
        c_lo = c_lo + np.einsum("bmn,bn->bm", neg_l, tu)
        a_up = pos_u * su[:, None, :] + neg_u * sl[:, None, :]
        a_lo = pos_l * sl[:, None, :] + neg_l * su[:, None, :]
        layer = p.layers[j]
        c_up = c_up + a_up @ layer.biases
        c_lo = c_lo + a_lo @ layer.biases
        a_up = a_up @ layer.weights
        a_lo = a_lo @ layer.weights
    up = (np.einsum("bmn,bn->bm", np.maximum(a_up, 0.0), hi0)
          + np.einsum("bmn,bn->bm", np.minimum(a_up, 0.0), lo0) + c_up)
    low = (np.einsum("bmn,bn->bm", np.maximum(a_lo, 0.0), lo0)
           + np.einsum("bmn,bn->bm", np.minimum(a_lo, 0.0), hi0) + c_lo)
    return low, up


def crown_bounds(p: MlpParams, box: BoxBounds) -> BoxBounds:
    """CROWN bounds intersected with IBP at every layer."""
    _check(p, box)
    single = box.lower.ndim == 1
    lo0 = np.atleast_2d(box.lower)
    hi0 = np.atleast_2d(box.upper)
    relax = []
    lo, hi = _widen(*_affine_interval(p.layers[0], lo0, hi0))
    for k in range(1, len(p.layers)):
        relax.append(_relu_relaxation(lo, hi))
        ibp_lo, ibp_hi = _widen(*_affine_interval(p.layers[k], np.maximum(lo, 0.0), np.maximum(hi, 0.0)))
        cr_lo, cr_hi = _widen(*_backsubstitute(p, k, relax, lo0, hi0))
        lo, hi = np.maximum(cr_lo, ibp_lo), np.minimum(cr_hi, ibp_hi)
    if single:
        lo, hi = lo[0], hi[0]
    return BoxBounds(lo, hi)


def perturbation_box(o: np.ndarray, eps, lo: float = 0.0, hi: float = 1.0) -> BoxBounds:
    """l_inf ball around ``o`` clipped to the pixel domain.

    ``eps`` may be an array of radii, giving a batch of boxes.
    """
    o = np.asarray(o, dtype=np.float64)
    eps_arr = np.asarray(eps, dtype=np.float64)
    if np.any(eps_arr < 0):
        raise ValueError("perturbation radius must be non-negative")
    if eps_arr.ndim == 1:
        eps_arr = eps_arr[:, None]
    return BoxBounds(np.clip(o - eps_arr, lo, hi), np.clip(o + eps_arr, lo, hi))


def composite_feature_bounds(g: MlpParams, o: np.ndarray, eps, norm: str = "linf") -> BoxBounds:
    """Bounds on ``g(o + delta)`` over ``||delta||_inf <= eps`` within [0, 1]."""
    if norm != "linf":
        raise ValueError("box propagation covers the l_inf norm; use smoothing for l2")
    return crown_bounds(g, perturbation_box(o, eps))


# ---- interval propagation with reverse mode, used by the training losses ----

@dataclass
class IbpTape:
    lows: list[np.ndarray]
    highs: list[np.ndarray]
    box: BoxBounds


def ibp_forward(p: MlpParams, box: BoxBounds) -> tuple[BoxBounds, IbpTape]:
    """IBP that also records what :func:`ibp_backward` needs."""
    _check(p, box)
    lows, highs = [], []
    lo, hi = box.lower, box.upper
    for i, layer in enumerate(p.layers):
        if i:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        lo, hi = _affine_interval(layer, lo, hi)
        lows.append(lo)
        highs.append(hi)
    return BoxBounds(lo, hi), IbpTape(lows, highs, box)


def ibp_backward(p: MlpParams, tape: IbpTape, d_lower: np.ndarray, d_upper: np.ndarray):
    """Vector-Jacobian product of IBP output bounds.

    Returns ``(GradientSet, d_input_lower, d_input_upper)``; gradients are
    summed over a leading batch axis if present.
    """
    grads: list[Layer] = [None] * len(p.layers)  # type: ignore[list-item]
    dl, du = np.asarray(d_lower, dtype=np.float64), np.asarray(d_upper, dtype=np.float64)
    for i in range(len(p.layers) - 1, -1, -1):
        layer = p.layers[i]
        if i:
            lo_in = np.maximum(tape.lows[i - 1], 0.0)
            hi_in = np.maximum(tape.highs[i - 1], 0.0)
        else:
            lo_in, hi_in = tape.box.lower, tape.box.upper
        mid = (hi_in + lo_in) / 2.0
        rad = (hi_in - lo_in) / 2.0
        d_mid = dl + du
        d_rad = du - dl
        sign = np.sign(layer.weights)
        if d_mid.ndim == 2:
            gw = d_mid.T @ mid + (d_rad.T @ rad) * sign
            gb = d_mid.sum(axis=0)
        else:
            gw = np.outer(d_mid, mid) + np.outer(d_rad, rad) * sign
            gb = d_mid.copy()
        grads[i] = Layer(gw, gb)
        d_mid_in = d_mid @ layer.weights
        d_rad_in = d_rad @ np.abs(layer.weights)
        dl = (d_mid_in - d_rad_in) / 2.0
        du = (d_mid_in + d_rad_in) / 2.0
        if i:
            dl = dl * (tape.lows[i - 1] > 0)
            du = du * (tape.highs[i - 1] > 0)
    return GradientSet(grads), dl, du
