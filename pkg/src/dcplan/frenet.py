"""Reference-path geometry, Cartesian/Frenet conversion and quintic curves.

The reference path is a polyline with linear interpolation and an arc-length
table; curvature effects on the Frenet dynamics are ignored (speeds are low
and curvature gentle), which keeps the conversion exact and testable.

Conventions:
  * b is the driving distance along the path, d the lateral offset,
    positive d to the left of the path tangent.
  * at polyline kinks the projection tie-break picks the smallest b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateHorizon, FarFromPath, OutOfRange

__all__ = [
    "ReferencePath",
    "FrenetPose",
    "QuinticCurve",
    "to_frenet",
    "to_cartesian",
    "fit_quintic",
    "fit_quintic_batch",
    "jerk_integral",
    "curve_cost",
]

_MIN_GAP = 1e-6
MAX_PROJECTION_DISTANCE = 50.0


class ReferencePath:
    """Polyline reference path with precomputed arc-length tables.

    Args:
        waypoints: (N, 2) array of points in meters, N >= 2, consecutive
            points separated by more than 1e-6 m.
    """

    def __init__(self, waypoints) -> None:
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("waypoints must be an (N>=2, 2) array")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= _MIN_GAP):
            raise ValueError("consecutive waypoints must be distinct (> 1e-6 m apart)")
        self.waypoints = pts
        self.seg_len = seg_len
        self.cum_arclen = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self.cum_arclen[-1])
        self.tangents = seg / seg_len[:, None]          # unit tangent per segment
        self.normals = np.stack([-self.tangents[:, 1], self.tangents[:, 0]], axis=1)
        self.headings = np.arctan2(self.tangents[:, 1], self.tangents[:, 0])
        # per-segment curvature from the heading change at interior waypoints
        dh = np.zeros(len(seg_len))
        if len(seg_len) > 1:
            turn = np.diff(np.unwrap(self.headings))
            ds = 0.5 * (seg_len[:-1] + seg_len[1:])
            kappa_node = turn / ds
            dh[:-1] = kappa_node
            dh[1:] = 0.5 * (dh[1:] + kappa_node)
        self.curvatures = dh

    @classmethod
    def from_waypoint_file(cls, path) -> "ReferencePath":
        """Load a path from a plain-text file, one "x y" pair per line."""
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                x, y = line.split()
                rows.append((float(x), float(y)))
        if len(rows) < 2:
            raise ValueError(f"waypoint file {path!r} needs at least 2 points")
        return cls(np.array(rows))

    def write_waypoint_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for x, y in self.waypoints:
                fh.write(f"{x:.6f} {y:.6f}\n")

    # -- projection ----------------------------------------------------

    def project(self, points):
        """Project points onto the polyline.

        Args:
            points: (..., 2) array.

        Returns:
            (b, d, dist): arc length, signed lateral offset (left positive)
            and unsigned distance, each shaped like ``points[..., 0]``.
        """
        p = np.asarray(points, dtype=float)
        flat = p.reshape(-1, 2)
        a = self.waypoints[:-1]                         # (S, 2)
        u = self.tangents                               # (S, 2)
        rel = flat[:, None, :] - a[None, :, :]          # (M, S, 2)
        t = np.clip(np.einsum("msk,sk->ms", rel, u), 0.0, self.seg_len)
        closest = a[None] + t[..., None] * u[None]
        delta = flat[:, None, :] - closest
        dist2 = np.einsum("msk,msk->ms", delta, delta)
        b_all = self.cum_arclen[:-1][None, :] + t
        # tie-break at kinks: among (near-)minimal distances choose smallest b
        d2min = dist2.min(axis=1, keepdims=True)
        tie = dist2 <= d2min + 1e-12
        b_masked = np.where(tie, b_all, np.inf)
        seg_idx = np.argmin(b_masked, axis=1)
        m = np.arange(flat.shape[0])
        b = b_all[m, seg_idx]
        dvec = delta[m, seg_idx]
        useg = u[seg_idx]
        cross = useg[:, 0] * dvec[:, 1] - useg[:, 1] * dvec[:, 0]
        dist = np.sqrt(dist2[m, seg_idx])
        # |d| always equals the distance, including clamped corner
        # projections where delta is not perpendicular to the tangent
        d = np.where(cross >= 0.0, dist, -dist)
        shape = p.shape[:-1]
        return b.reshape(shape), d.reshape(shape), dist.reshape(shape)

    def segment_at(self, b):
        """Segment index containing arc length b (clamped to valid range)."""
        idx = np.searchsorted(self.cum_arclen, b, side="right") - 1
        return np.clip(idx, 0, len(self.seg_len) - 1)

    def point_at(self, b, d=0.0):
        """Cartesian point at (b, d). Vectorized over b/d."""
        b = np.asarray(b, dtype=float)
        idx = self.segment_at(b)
        local = b - self.cum_arclen[idx]
        return self.waypoints[idx] + local[..., None] * self.tangents[idx] \
            + np.asarray(d)[..., None] * self.normals[idx]

    def heading_at(self, b):
        return self.headings[self.segment_at(b)]

    def curvature_at(self, b):
        return self.curvatures[self.segment_at(b)]


@dataclass(frozen=True)
class FrenetPose:
    """Path-relative pose: arc length b, lateral offset d and derivatives."""

    b: float
    d: float
    b_dot: float = 0.0
    d_dot: float = 0.0
    b_ddot: float = 0.0
    d_ddot: float = 0.0

    def state_b(self):
        return np.array([self.b, self.b_dot, self.b_ddot])

    def state_d(self):
        return np.array([self.d, self.d_dot, self.d_ddot])


def to_frenet(path: ReferencePath, position, velocity=(0.0, 0.0), acceleration=(0.0, 0.0)) -> FrenetPose:
    """Project a Cartesian state onto the path.

    Raises:
        FarFromPath: if the position is more than 50 m from every waypoint.
    """
    pos = np.asarray(position, dtype=float)
    b, d, dist = path.project(pos)
    if dist > MAX_PROJECTION_DISTANCE:
        raise FarFromPath(f"point {pos.tolist()} is {dist:.1f} m from the reference path")
    seg = path.segment_at(min(float(b), path.length - 1e-12))
    u = path.tangents[seg]
    n = path.normals[seg]
    v = np.asarray(velocity, dtype=float)
    a = np.asarray(acceleration, dtype=float)
    return FrenetPose(
        b=float(b), d=float(d),
        b_dot=float(v @ u), d_dot=float(v @ n),
        b_ddot=float(a @ u), d_ddot=float(a @ n),
    )


def to_cartesian(path: ReferencePath, pose: FrenetPose):
    """Inverse of :func:`to_frenet` on the position component.

    Returns:
        (position (2,), heading): heading is the path tangent heading plus
        the velocity direction within the frame (tangent heading when the
        pose is at rest).

    Raises:
        OutOfRange: if b lies outside [0, path length].
    """
    if pose.b < -1e-9 or pose.b > path.length + 1e-9:
        raise OutOfRange(f"b={pose.b:.3f} outside [0, {path.length:.3f}]")
    b = min(max(pose.b, 0.0), path.length)
    position = path.point_at(b, pose.d)
    heading = float(path.heading_at(b))
    if abs(pose.b_dot) > 1e-12 or abs(pose.d_dot) > 1e-12:
        heading += float(np.arctan2(pose.d_dot, pose.b_dot))
    return position, heading


# -- quintic boundary-value curves -------------------------------------


def fit_quintic(start, end, horizon: float) -> np.ndarray:
    """Fit the unique quintic through two (p, p', p'') boundary states.

    Returns coefficients [a0..a5] of a0 + a1 t + ... + a5 t^5.

    Raises:
        DegenerateHorizon: if horizon <= 1e-6 s.
    """
    coeffs = fit_quintic_batch(np.asarray(start, dtype=float)[None, :],
                               np.asarray(end, dtype=float)[None, :], horizon)
    return coeffs[0]


def fit_quintic_batch(starts, ends, horizon: float) -> np.ndarray:
    """Vectorized :func:`fit_quintic` for (K, 3) boundary arrays -> (K, 6)."""
    if horizon <= 1e-6:
        raise DegenerateHorizon(f"horizon {horizon} s is too short")
    s = np.asarray(starts, dtype=float)
    e = np.asarray(ends, dtype=float)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(e))):
        raise ValueError("boundary states must be finite")
    H = float(horizon)
    a0 = s[:, 0]
    a1 = s[:, 1]
    a2 = 0.5 * s[:, 2]
    A = np.array([
        [H ** 3, H ** 4, H ** 5],
        [3 * H ** 2, 4 * H ** 3, 5 * H ** 4],
        [6 * H, 12 * H ** 2, 20 * H ** 3],
    ])
    rhs = np.stack([
        e[:, 0] - a0 - a1 * H - a2 * H ** 2,
        e[:, 1] - a1 - 2 * a2 * H,
        e[:, 2] - 2 * a2,
    ], axis=1)
    tail = np.linalg.solve(A[None, :, :], rhs[:, :, None])[:, :, 0]
    return np.concatenate([np.stack([a0, a1, a2], axis=1), tail], axis=1)


_D1 = np.arange(1, 6, dtype=float)                       # derivative factors


def poly_eval(coeffs, t):
    """Evaluate polynomial(s) with coefficients [a0..a5] at times t."""
    c = np.asarray(coeffs, dtype=float)
    t = np.asarray(t, dtype=float)
    out = np.zeros(np.broadcast_shapes(c.shape[:-1], t.shape))
    for k in range(c.shape[-1] - 1, -1, -1):
        out = out * t + c[..., k]
    return out


def poly_derivative(coeffs):
    c = np.asarray(coeffs, dtype=float)
    return c[..., 1:] * _D1[: c.shape[-1] - 1]


@dataclass(frozen=True)
class QuinticCurve:
    """Per-axis quintic trajectory in Frenet coordinates over a horizon."""

    coeffs_b: np.ndarray
    coeffs_d: np.ndarray
    horizon: float

    @classmethod
    def from_boundary(cls, start: FrenetPose, end: FrenetPose, horizon: float) -> "QuinticCurve":
        cb = fit_quintic(start.state_b(), end.state_b(), horizon)
        cd = fit_quintic(start.state_d(), end.state_d(), horizon)
        return cls(coeffs_b=cb, coeffs_d=cd, horizon=float(horizon))

    def _axis(self, axis: str) -> np.ndarray:
        if axis == "b":
            return self.coeffs_b
        if axis == "d":
            return self.coeffs_d
        raise ValueError(f"axis must be 'b' or 'd', got {axis!r}")

    def position(self, t, axis="b"):
        return poly_eval(self._axis(axis), t)

    def velocity(self, t, axis="b"):
        return poly_eval(poly_derivative(self._axis(axis)), t)

    def acceleration(self, t, axis="b"):
        return poly_eval(poly_derivative(poly_derivative(self._axis(axis))), t)

    def jerk(self, t, axis="b"):
        c = self._axis(axis)
        j = poly_derivative(poly_derivative(poly_derivative(c)))
        return poly_eval(j, t)

    def frenet_state(self, t) -> FrenetPose:
        return FrenetPose(
            b=float(self.position(t, "b")), d=float(self.position(t, "d")),
            b_dot=float(self.velocity(t, "b")), d_dot=float(self.velocity(t, "d")),
            b_ddot=float(self.acceleration(t, "b")), d_ddot=float(self.acceleration(t, "d")),
        )


def jerk_integral(curve: QuinticCurve, axis: str = "b", t0: float = 0.0, t1: float | None = None) -> float:
    """Closed-form integral of squared jerk over [t0, t1] for one axis.

    The jerk of a quintic is the quadratic c0 + c1 t + c2 t^2, so the
    integral of its square is a quintic evaluated at the endpoints.
    """
    if t1 is None:
        t1 = curve.horizon
    c = poly_derivative(poly_derivative(poly_derivative(curve._axis(axis))))
    c0, c1, c2 = float(c[0]), float(c[1]), float(c[2])

    def antider(t: float) -> float:
        return (c0 * c0 * t + c0 * c1 * t ** 2 + (c1 * c1 + 2 * c0 * c2) * t ** 3 / 3.0
                + c1 * c2 * t ** 4 / 2.0 + c2 * c2 * t ** 5 / 5.0)

    return antider(float(t1)) - antider(float(t0))


def curve_cost(curve: QuinticCurve, weights: dict, fixed_time_term: float = 0.0) -> float:
    """Lattice curve cost: k_j * (lateral + longitudinal squared-jerk
    integrals) + k_t * g(H) + k_p * |terminal lateral offset|.

    ``fixed_time_term`` is the value g(H); it is fixed to 0 in this study so
    k_t is inert but kept for interface fidelity.
    """
    k_j = float(weights["k_j"])
    k_t = float(weights["k_t"])
    k_p = float(weights["k_p"])
    if min(k_j, k_t, k_p) <= 0:
        raise ValueError("cost weights must be positive")
    j_total = jerk_integral(curve, "b") + jerk_integral(curve, "d")
    d_end = abs(float(curve.position(curve.horizon, "d")))
    return k_j * j_total + k_t * float(fixed_time_term) + k_p * d_end
