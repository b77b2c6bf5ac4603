"""Arclength-parameterized cubic-spline centerlines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.interpolate import CubicSpline


@njit(cache=True)
def eval_piecewise(coeffs, ds, length, s):
    """Value and slope of a uniform-knot piecewise cubic at ``s``.

    ``coeffs`` has at least ``length / ds`` rows of four coefficients, highest
    power first in the local coordinate ``s - s_j``; extra rows are ignored.  Outside ``[0, length]`` the end value is
    extended linearly along the end slope.
    """
    n_seg = int(round(length / ds))
    if s <= 0.0:
        c = coeffs[0]
        return c[3] + c[2] * s, c[2]
    if s >= length:
        c = coeffs[n_seg - 1]
        tau = length - (n_seg - 1) * ds
        val = ((c[0] * tau + c[1]) * tau + c[2]) * tau + c[3]
        slope = (3.0 * c[0] * tau + 2.0 * c[1]) * tau + c[2]
        return val + slope * (s - length), slope
    j = int(s / ds)
    if j >= n_seg:
        j = n_seg - 1
    c = coeffs[j]
    tau = s - j * ds
    val = ((c[0] * tau + c[1]) * tau + c[2]) * tau + c[3]
    slope = (3.0 * c[0] * tau + 2.0 * c[1]) * tau + c[2]
    return val, slope


def _uniform_pp(s, values):
    cs = CubicSpline(s, values, bc_type="not-a-knot")
    return np.ascontiguousarray(cs.c.T)


@dataclass(frozen=True, eq=False)
class CenterlineSpline:
    """Lane centerline ``(c_x(s), c_y(s))`` and signed curvature ``kappa(s)``,
    each a cubic spline in arclength on a uniform knot grid, plus a constant
    lane half-width."""

    ds: float
    length: float
    x_coeffs: np.ndarray
    y_coeffs: np.ndarray
    kappa_coeffs: np.ndarray
    half_width: float

    @classmethod
    def from_points(cls, points, half_width: float, resolution: float = 0.05) -> "CenterlineSpline":
        """Fit a spline through ordered ``(x, y)`` knot points.

        The points are first interpolated with a chord-length cubic spline,
        which is then resampled uniformly in arclength.
        """
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise ValueError("need at least three (x, y) knot points")
        chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        param = CubicSpline(chord, pts, bc_type="not-a-knot")
        dense = np.linspace(0.0, chord[-1], 20 * len(pts) * 50 + 1)
        d = param(dense, 1)
        speed = np.linalg.norm(d, axis=1)
        arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(dense))])
        length = float(arc[-1])
        n_seg = max(3, int(round(length / resolution)))
        s = np.linspace(0.0, length, n_seg + 1)
        xy = param(np.interp(s, arc, dense))
        ds = length / n_seg
        xc = _uniform_pp(s, xy[:, 0])
        yc = _uniform_pp(s, xy[:, 1])
        sx, sy = CubicSpline(s, xy[:, 0]), CubicSpline(s, xy[:, 1])
        dx, dy = sx(s, 1), sy(s, 1)
        ddx, ddy = sx(s, 2), sy(s, 2)
        kappa = (dx * ddy - dy * ddx) / np.power(dx * dx + dy * dy, 1.5)
        return cls(ds, length, xc, yc, _uniform_pp(s, kappa), float(half_width))

    @classmethod
    def straight(cls, start, heading: float, length: float, half_width: float) -> "CenterlineSpline":
        start = np.asarray(start, dtype=float)
        d = np.array([np.cos(heading), np.sin(heading)])
        pts = start + np.linspace(0, length, 8)[:, None] * d
        return cls.from_points(pts, half_width)

    def _eval(self, coeffs, s):
        s = np.asarray(s, dtype=float)
        flat = s.ravel()
        out = np.empty((flat.size, 2))
        for i, si in enumerate(flat):
            out[i] = eval_piecewise(coeffs, self.ds, self.length, float(si))
        return out[:, 0].reshape(s.shape), out[:, 1].reshape(s.shape)

    def position(self, s) -> np.ndarray:
        x, _ = self._eval(self.x_coeffs, s)
        y, _ = self._eval(self.y_coeffs, s)
        return np.stack([x, y], axis=-1)

    def heading(self, s):
        _, dx = self._eval(self.x_coeffs, s)
        _, dy = self._eval(self.y_coeffs, s)
        return np.arctan2(dy, dx)

    def curvature(self, s):
        return self._eval(self.kappa_coeffs, s)[0]

    def curvature_slope(self, s):
        return self._eval(self.kappa_coeffs, s)[1]

    def project(self, p, s_guess: float | None = None) -> tuple[float, float]:
        """Closest-point projection of ``p`` onto the centerline: ``(s, n)``
        with ``n`` positive to the left of the direction of travel."""
        p = np.asarray(p, dtype=float)
        if s_guess is None:
            grid = np.linspace(0.0, self.length, int(self.length / (0.5 * self.ds)) + 2)
            d2 = np.sum((self.position(grid) - p) ** 2, axis=1)
            s = float(grid[np.argmin(d2)])
        else:
            s = float(s_guess)
        for _ in range(50):
            c = self.position(s)
            th = float(self.heading(s))
            t = np.array([np.cos(th), np.sin(th)])
            step = float((p - c) @ t)
            s += step
            if abs(step) < 1e-12:
                break
        c = self.position(s)
        th = float(self.heading(s))
        n = float((p - c) @ np.array([-np.sin(th), np.cos(th)]))
        return s, n
