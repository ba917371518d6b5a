"""Preview tracking controller.

Converts a selected quintic curve into per-step (accel, steer) commands:
a PD law on the previewed longitudinal and lateral curve errors plus
path-curvature feedforward, clamped to the ego command limits. A plain PD
preview is enough here because the planner replans at 10 Hz and only needs
a bounded tracking error over a 3 s horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frenet import QuinticCurve, ReferencePath, poly_derivative, poly_eval

__all__ = ["PreviewConfig", "track", "track_arrays", "brake_policy"]

_V_FLOOR = 0.5          # speed floor for curvature-to-steer conversion
_REST_EPS = 1e-3


@dataclass(frozen=True)
class PreviewConfig:
    """Preview tracking gains and command limits."""

    preview_time: float = 0.5
    kp_lon: float = 6.0
    kd_lon: float = 4.5
    kp_lat: float = 15.0
    kd_lat: float = 1.5
    accel_min: float = -4.0
    accel_max: float = 3.0
    steer_max: float = 0.7
    yaw_rate_max: float = 2.5
    wheelbase: float = 2.8

    def __post_init__(self):
        if self.preview_time <= 0:
            raise ValueError("preview_time must be positive")
        for g in (self.kp_lon, self.kd_lon, self.kp_lat, self.kd_lat):
            if g <= 0:
                raise ValueError("gains must be positive")


def preview_refs(coeffs_b, coeffs_d, horizon, t_along, cfg: PreviewConfig):
    """Curve reference values the command law needs.

    Position references look ahead by the preview time; feedforward and
    velocity references stay at the current time because the kinematic
    plant has no actuation lag (previewing them would phase-lead the
    curve). Broadcasts (K, 6) coefficients against any t shape.
    """
    t_now = np.clip(np.asarray(t_along, float), 0.0, horizon)
    tp = np.clip(t_now + cfg.preview_time, 0.0, horizon)
    cb = np.asarray(coeffs_b, float)
    cd = np.asarray(coeffs_d, float)
    return (
        poly_eval(cb, tp),                                        # b_ref
        poly_eval(cd, tp),                                        # d_ref
        poly_eval(poly_derivative(cb), t_now),                    # bd_now
        poly_eval(poly_derivative(poly_derivative(cb)), t_now),   # ba_now
        poly_eval(poly_derivative(cd), t_now),                    # dd_now
        poly_eval(poly_derivative(poly_derivative(cd)), t_now),   # da_now
    )


def commands_from_refs(refs, b, d, b_dot_raw, d_dot, kappa_here, speed,
                       cfg: PreviewConfig):
    """Preview PD command law given references and a projected ego state.

    ``b_dot_raw`` is the plain tangential velocity component; the law
    rescales it by 1/(1 - kappa*d) because that is how the projected arc
    length actually advances when the ego rides an offset on a curve.
    Shared by the scalar controller and the batched rollout engine so both
    apply literally the same arithmetic.
    """
    b_ref, d_ref, bd_now, ba_now, dd_now, da_now = refs
    curv_scale = np.maximum(1.0 - kappa_here * d, 0.3)
    b_dot = b_dot_raw / curv_scale

    # ego previewed along the reference acceleration (not its own accel
    # state, which would close an unstable discrete feedback loop)
    dt_prev = cfg.preview_time
    pred_b = b + b_dot * dt_prev + 0.5 * ba_now * dt_prev ** 2
    accel = ba_now + cfg.kp_lon * (b_ref - pred_b) + cfg.kd_lon * (bd_now - b_dot)
    # back to ground units before clamping against the plant limits
    accel = accel * curv_scale
    accel = np.minimum(np.maximum(accel, cfg.accel_min), cfg.accel_max)

    pred_d = d + d_dot * dt_prev + 0.5 * da_now * dt_prev ** 2
    lat_acc = da_now + cfg.kp_lat * (d_ref - pred_d) + cfg.kd_lat * (dd_now - d_dot)
    v_eff = np.maximum(speed, _V_FLOOR)
    yaw_cap = cfg.yaw_rate_max / v_eff
    kappa_cmd = kappa_here + lat_acc / (v_eff * v_eff)
    # respect the yaw-rate bound that the plant enforces
    kappa_cmd = np.minimum(np.maximum(kappa_cmd, -yaw_cap), yaw_cap)
    steer = np.arctan(cfg.wheelbase * kappa_cmd)
    steer = np.minimum(np.maximum(steer, -cfg.steer_max), cfg.steer_max)
    return accel, steer


def commands_from_frenet(coeffs_b, coeffs_d, horizon, b, d, b_dot_raw, d_dot,
                         kappa_here, speed, t_along, cfg: PreviewConfig):
    refs = preview_refs(coeffs_b, coeffs_d, horizon, t_along, cfg)
    return commands_from_refs(refs, b, d, b_dot_raw, d_dot, kappa_here, speed, cfg)


def track_arrays(coeffs_b, coeffs_d, horizon, path: ReferencePath,
                 x, y, heading, speed, t_along, cfg: PreviewConfig):
    """Vectorized preview tracking for K curves against K ego states.

    Args:
        coeffs_b, coeffs_d: (K, 6) quintic coefficients per candidate.
        x, y, heading, speed: (K,) ego states (broadcastable).
        t_along: time already spent on each curve, scalar or (K,).

    Returns:
        (accel_cmd, steer_cmd): (K,) command arrays within limits.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    heading = np.asarray(heading, float)
    speed = np.asarray(speed, float)
    pts = np.stack([x, y], axis=-1)
    b, d, _ = path.project(pts)
    seg = path.segment_at(np.minimum(b, path.length - 1e-9))
    u = path.tangents[seg]
    n = path.normals[seg]
    vx = speed * np.cos(heading)
    vy = speed * np.sin(heading)
    b_dot_raw = vx * u[..., 0] + vy * u[..., 1]
    d_dot = vx * n[..., 0] + vy * n[..., 1]
    kappa_here = path.curvatures[seg]
    return commands_from_frenet(coeffs_b, coeffs_d, horizon, b, d, b_dot_raw,
                                d_dot, kappa_here, speed, t_along, cfg)


def track(curve: QuinticCurve, path: ReferencePath, ego, t_along_curve: float,
          cfg: PreviewConfig = PreviewConfig()):
    """Commands for one ego state tracking one curve.

    ``ego`` is anything with x, y, heading, speed attributes.
    """
    if not (0.0 <= t_along_curve <= curve.horizon + 1e-9):
        raise ValueError(f"t_along_curve {t_along_curve} outside [0, {curve.horizon}]")
    accel, steer = track_arrays(
        curve.coeffs_b[None, :], curve.coeffs_d[None, :], curve.horizon, path,
        np.array([ego.x]), np.array([ego.y]), np.array([ego.heading]),
        np.array([ego.speed]), t_along_curve, cfg)
    return float(accel[0]), float(steer[0])


def brake_policy(ego, cfg: PreviewConfig = PreviewConfig()):
    """Maximum deceleration, zero steering; all-zero once at rest."""
    if ego.speed <= _REST_EPS:
        return 0.0, 0.0
    return cfg.accel_min, 0.0
