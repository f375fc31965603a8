"""Exact samplers for the stable laws used by the particle system and the limit process."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import as_generator


@dataclass(frozen=True)
class SkewedStableSpec:
    """Totally right-skewed stable law with index in (1, 2].

    Characteristic function ``exp{-scale**index |z|**index (1 - i sgn(z) tan(pi index / 2))}``.
    """

    index: float
    scale: float = 1.0

    def __post_init__(self):
        if not 1.0 < self.index <= 2.0:
            raise ValueError(f"index must lie in (1, 2], got {self.index}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def charfn(self, z):
        z = np.asarray(z, dtype=float)
        a = self.index
        mod = (self.scale * np.abs(z)) ** a
        return np.exp(-mod * (1.0 - 1j * np.sign(z) * np.tan(0.5 * np.pi * a)))


def one_sided_charfn(a: float, z):
    """Characteristic function of the positive a-stable law with Laplace transform exp(-lam**a)."""
    z = np.asarray(z, dtype=float)
    return np.exp(-np.abs(z) ** a * np.exp(-0.5j * np.pi * a * np.sign(z)))


def sample_one_sided_stable(a: float, stream, size=None) -> np.ndarray | float:
    """Kanter's representation of the positive stable law, Laplace transform exp(-lam**a)."""
    if not 0.0 < a < 1.0:
        raise ValueError(f"one-sided stable index must lie in (0, 1), got {a}")
    rng = as_generator(stream)
    u = rng.uniform(0.0, np.pi, size=size)
    e = rng.standard_exponential(size=size)
    x = (np.sin(a * u) / np.sin(u) ** (1.0 / a)) * (np.sin((1.0 - a) * u) / e) ** ((1.0 - a) / a)
    # u on the open interval keeps x finite, but float rounding can still give exact zeros
    x = np.where(x > 0, x, np.finfo(float).tiny)
    return x if size is not None else float(x)


def sample_skewed_stable(spec: SkewedStableSpec, stream, size=None):
    """Chambers-Mallows-Stuck draw with skewness +1 and zero shift."""
    rng = as_generator(stream)
    a = spec.index
    if a == 2.0:
        x = rng.normal(0.0, np.sqrt(2.0) * spec.scale, size=size)
        return x if size is not None else float(x)
    v = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size=size)
    w = rng.standard_exponential(size=size)
    return _cms(a, v, w) * spec.scale


def _cms(a, v, w):
    t = np.tan(0.5 * np.pi * a)
    b = np.arctan(t) / a
    s = (1.0 + t * t) ** (0.5 / a)
    return s * np.sin(a * (v + b)) / np.cos(v) ** (1.0 / a) * (np.cos(v - a * (v + b)) / w) ** ((1.0 - a) / a)


def sample_skewed_standard(index: float, rng: np.random.Generator, size) -> np.ndarray:
    """Unit-scale skewed draws; callers multiply by per-cell scales."""
    if index == 2.0:
        return rng.normal(0.0, np.sqrt(2.0), size=size)
    v = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size=size)
    w = rng.standard_exponential(size=size)
    return _cms(index, v, w)


def sample_isotropic_increment(alpha: float, t, d: int, stream, size=None) -> np.ndarray:
    """Increment of the standard symmetric alpha-stable process over duration ``t``.

    Characteristic function ``exp(-t |z|**alpha)``. For alpha < 2 a Gaussian vector is
    subordinated by a positive (alpha/2)-stable variate, which keeps isotropy exact.
    ``t`` may be an array broadcast against ``size``; the result has shape ``size + (d,)``.
    """
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("duration must be positive")
    rng = as_generator(stream)
    shape = () if size is None else (size if isinstance(size, tuple) else (size,))
    g = rng.standard_normal(size=shape + (d,))
    if alpha == 2.0:
        var = 2.0 * np.broadcast_to(t, shape)
    else:
        s = sample_one_sided_stable(alpha / 2.0, rng, size=shape if shape else 1)
        s = np.reshape(s, shape)
        var = 2.0 * np.broadcast_to(t, shape) ** (2.0 / alpha) * s
    return g * np.sqrt(var)[..., None]
