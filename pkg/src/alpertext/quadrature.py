"""Composite Gauss-Legendre tensor rules with breakpoints at discontinuity lines.

Integrands here are products of piecewise polynomials and mollified piecewise
polynomials.  Off the smoothing strips [line - eps, line + eps] everything is
polynomial, so a fixed order is exact there; inside a strip the integrand is
smooth and gets a higher order.  A phase rule caps the sub-interval width so
that oscillatory factors e^{-i Phi(x).xi} are resolved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

ORDER_REGULAR = 10
ORDER_STRIP = 16
NODES_PER_WAVELENGTH = 8


@lru_cache(maxsize=None)
def gauss_legendre(n: int):
    g, w = np.polynomial.legendre.leggauss(n)
    g.setflags(write=False)
    w.setflags(write=False)
    return g, w


def phase_width(xi_max: float, x_max: float, order: int = ORDER_REGULAR) -> float:
    """Largest sub-interval width giving >= 8 nodes per local wavelength.

    The local frequency of x -> Phi(x).xi is at most |xi| sqrt(1 + 4|x|^2).
    """
    if xi_max <= 0:
        return math.inf
    G = xi_max * math.sqrt(1.0 + 4.0 * x_max ** 2)
    return 2 * math.pi * order / (NODES_PER_WAVELENGTH * G)


def _merge(points: Iterable[float], lo: float, hi: float) -> np.ndarray:
    pts = np.array(sorted({lo, hi, *(p for p in points if lo < p < hi)}))
    tol = 1e-13 * max(1.0, hi - lo)
    keep = np.concatenate([[True], np.diff(pts) > tol])
    pts = pts[keep]
    pts[-1] = hi
    return pts


@dataclass(frozen=True)
class AxisRule:
    nodes: np.ndarray
    weights: np.ndarray
    breaks: np.ndarray

    def __len__(self):
        return len(self.nodes)


def axis_rule(lo: float, hi: float, features: Sequence[tuple[float, float]] = (),
              max_width: float = math.inf, order: int = ORDER_REGULAR,
              strip_order: int = ORDER_STRIP, refine: int = 1) -> AxisRule:
    """1D composite rule on [lo, hi].

    ``features`` are (position, eps) pairs; eps = 0 marks a plain breakpoint,
    eps > 0 a smoothing strip with breakpoints at position +- eps whose
    interior intervals use ``strip_order``.  ``refine`` splits every interval into that many pieces.
    """
    pts = []
    strips = []
    for p, e in features:
        if e > 0:
            pts += [p - e, p + e]
            strips.append((p - e, p + e))
        else:
            pts.append(p)
    br = _merge(pts, lo, hi)
    nodes, wts = [], []
    for a, b in zip(br[:-1], br[1:]):
        mid = 0.5 * (a + b)
        in_strip = any(s0 <= mid <= s1 for s0, s1 in strips)
        n = strip_order if in_strip else order
        k = max(1, math.ceil((b - a) / max_width - 1e-9)) * refine
        sub = np.linspace(a, b, k + 1)
        g, w = gauss_legendre(n)
        h = np.diff(sub)
        nodes.append((sub[:-1, None] + 0.5 * h[:, None] * (g[None, :] + 1)).ravel())
        wts.append((0.5 * h[:, None] * w[None, :]).ravel())
    return AxisRule(np.concatenate(nodes), np.concatenate(wts), br)


@dataclass(frozen=True)
class TensorRule:
    x: AxisRule
    y: AxisRule

    @property
    def shape(self):
        return (len(self.x), len(self.y))

    @property
    def size(self) -> int:
        return len(self.x) * len(self.y)

    def mesh(self):
        return np.meshgrid(self.x.nodes, self.y.nodes, indexing="ij")

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.x.weights, self.y.weights)

    def integrate(self, values) -> complex | float:
        v = np.asarray(values).reshape(self.shape)
        return self.x.weights @ v @ self.y.weights

    @property
    def domain(self):
        return (self.x.breaks[0], self.x.breaks[-1], self.y.breaks[0], self.y.breaks[-1])


def tensor_rule(domain, xfeatures=(), yfeatures=(), xi_max: float = 0.0,
                order: int = ORDER_REGULAR, strip_order: int = ORDER_STRIP,
                refine: int = 1) -> TensorRule:
    x0, x1, y0, y1 = domain
    x_max = math.hypot(max(abs(x0), abs(x1)), max(abs(y0), abs(y1)))
    width = phase_width(xi_max, x_max, order)
    return TensorRule(axis_rule(x0, x1, xfeatures, width, order, strip_order, refine),
                      axis_rule(y0, y1, yfeatures, width, order, strip_order, refine))


@dataclass
class Field2D:
    """Samples of a function on a tensor quadrature rule.

    ``source`` re-samples the function on another rule (used for refinement
    self-checks); ``xi_max`` is the largest |xi| the rule resolves.
    """

    rule: TensorRule
    values: np.ndarray
    xi_max: float = 0.0
    source: Callable | None = field(default=None, repr=False)
    features: tuple = ((), ())
    label: str = ""
    strip_order: int = ORDER_STRIP

    def __post_init__(self):
        self.values = np.asarray(self.values).reshape(self.rule.shape)

    @property
    def domain(self):
        return self.rule.domain

    def sup(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def l1(self) -> float:
        return float(self.rule.integrate(np.abs(self.values)))

    def integral(self):
        return self.rule.integrate(self.values)

    def weighted(self) -> np.ndarray:
        return self.values * self.rule.weights

    def scaled(self, t) -> "Field2D":
        src = None if self.source is None else (lambda X, Y, s=self.source: t * s(X, Y))
        return Field2D(self.rule, t * self.values, self.xi_max, src, self.features, self.label,
                       self.strip_order)

    def with_values(self, values, label=None) -> "Field2D":
        return Field2D(self.rule, values, self.xi_max, None, self.features, label or self.label,
                       self.strip_order)

    def refined(self, factor: int = 2) -> "Field2D":
        if self.source is None:
            raise ValueError("field has no source callable to refine from")
        x0, x1, y0, y1 = self.domain
        r = tensor_rule(self.domain, *self.features, xi_max=self.xi_max, refine=factor,
                        strip_order=self.strip_order)
        X, Y = r.mesh()
        return Field2D(r, self.source(X, Y), self.xi_max, self.source, self.features, self.label,
                       self.strip_order)


def sample(fn: Callable, domain, xfeatures=(), yfeatures=(), xi_max: float = 0.0,
           label: str = "", refine: int = 1, strip_order: int | None = None) -> Field2D:
    """Sample a vectorized callable f(X, Y) on a rule adapted to its features."""
    so = strip_order or ORDER_STRIP
    r = tensor_rule(domain, xfeatures, yfeatures, xi_max=xi_max, refine=refine, strip_order=so)
    X, Y = r.mesh()
    return Field2D(r, fn(X, Y), xi_max, fn, (tuple(xfeatures), tuple(yfeatures)), label,
                   strip_order=so)
