"""Synthetic odometry sources and their loosely-coupled EKF fusion.

Three sources are derived from the ground-truth trajectory: a body-frame
velocity estimator (50 Hz), an IMU orientation/rate stream (200 Hz), and a
drifting pose source standing in for visual-inertial odometry (90 Hz, with
dropout windows). The EKF treats IMU orientation as a direct input, predicts
position from the fused velocity, and applies velocity / pose measurement
updates with Mahalanobis gating. Removing the pose source changes nothing but
skipping its update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import quat_conj, quat_mul, quat_normalize, quat_rotate, rotation_matrix
from .sensorsim import RobotState

log = logging.getLogger(__name__)


@dataclass
class EstimatorErrors:
    vel_sigma: np.ndarray = field(default_factory=lambda: np.array([0.02, 0.02, 0.01]))
    bias: np.ndarray = field(default_factory=lambda: np.array([0.03, 0.02, 0.02]))

    def __post_init__(self):
        self.vel_sigma = np.asarray(self.vel_sigma, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if (self.vel_sigma < 0).any():
            raise ValueError("sigma must be non-negative")


@dataclass
class ImuErrors:
    orient_sigma: float = 0.002  # rad, per-axis small-angle
    gyro_sigma: float = 0.01  # rad/s

    def __post_init__(self):
        if self.orient_sigma < 0 or self.gyro_sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass
class VioErrors:
    walk_rate: float = 0.005  # m / sqrt(s) position random walk
    sample_sigma: float = 0.01  # m per-sample noise
    dropouts: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.walk_rate < 0 or self.sample_sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass
class SourceErrorModel:
    estimator: EstimatorErrors = field(default_factory=EstimatorErrors)
    imu: ImuErrors = field(default_factory=ImuErrors)
    vio: VioErrors = field(default_factory=VioErrors)


@dataclass
class SourceStreams:
    estimator: list[tuple[float, np.ndarray]]  # (t, v_body)
    imu: list[tuple[float, np.ndarray, np.ndarray]]  # (t, quat, omega_body)
    vio: list[tuple[float, np.ndarray, np.ndarray]]  # (t, position, quat)


def _nearest_states(states: list[RobotState], times: np.ndarray) -> list[RobotState]:
    ts = np.array([s.t for s in states])
    idx = np.clip(np.searchsorted(ts, times), 0, len(states) - 1)
    left = np.clip(idx - 1, 0, len(states) - 1)
    pick = np.where(np.abs(ts[left] - times) < np.abs(ts[idx] - times), left, idx)
    return [states[i] for i in pick]


def make_source_streams(
    states: list[RobotState],
    model: SourceErrorModel,
    seed: int,
    rates: tuple[float, float, float] = (50.0, 200.0, 90.0),
) -> SourceStreams:
    """Sample the three sources from ground truth. Deterministic per seed."""
    if not states:
        raise ValueError("empty ground-truth stream")
    t_end = states[-1].t
    root = np.random.SeedSequence(seed)
    rng_est, rng_imu, rng_vio = (np.random.default_rng(s) for s in root.spawn(3))

    est_rate, imu_rate, vio_rate = rates
    est_times = np.arange(0.0, t_end + 1e-9, 1.0 / est_rate)
    imu_times = np.arange(0.0, t_end + 1e-9, 1.0 / imu_rate)
    vio_times = np.arange(0.0, t_end + 1e-9, 1.0 / vio_rate)

    estimator = []
    for t, s in zip(est_times, _nearest_states(states, est_times)):
        v = s.lin_vel_body + model.estimator.bias
        v = v + rng_est.normal(0.0, 1.0, 3) * model.estimator.vel_sigma
        estimator.append((float(t), v))

    imu = []
    for t, s in zip(imu_times, _nearest_states(states, imu_times)):
        if model.imu.orient_sigma > 0:
            dtheta = rng_imu.normal(0.0, model.imu.orient_sigma, 3)
            dq = np.concatenate([[1.0], 0.5 * dtheta])
            q = quat_normalize(quat_mul(s.quat, dq))
        else:
            q = s.quat.copy()
        w = s.ang_vel_body + rng_imu.normal(0.0, 1.0, 3) * model.imu.gyro_sigma
        imu.append((float(t), q, w))

    vio = []
    walk = np.zeros(3)
    dt_vio = 1.0 / vio_rate
    for t, s in zip(vio_times, _nearest_states(states, vio_times)):
        walk = walk + rng_vio.normal(0.0, 1.0, 3) * model.vio.walk_rate * np.sqrt(dt_vio)
        noise = rng_vio.normal(0.0, 1.0, 3) * model.vio.sample_sigma
        if any(t0 <= t < t1 for t0, t1 in model.vio.dropouts):
            continue
        vio.append((float(t), s.position + walk + noise, s.quat.copy()))

    return SourceStreams(estimator=estimator, imu=imu, vio=vio)


@dataclass
class EkfConfig:
    q_pos: float = 1e-8  # process noise densities (per second)
    q_vel: float = 1e-3
    q_att: float = 1e-6
    r_vel: float = 2.5e-3  # velocity measurement variance, m^2/s^2
    r_pos: float = 1e-4  # pose measurement variance, m^2
    r_att: float = 1e-5  # attitude pseudo-measurement variance, rad^2
    gate: float = 9.0  # Mahalanobis rejection threshold


@dataclass
class EkfState:
    """Fused pose/velocity with a 9x9 covariance over
    (position, velocity, attitude error)."""

    position: np.ndarray
    velocity: np.ndarray
    quat: np.ndarray
    cov: np.ndarray
    t: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.quat = quat_normalize(self.quat)
        self.cov = np.asarray(self.cov, dtype=float).reshape(9, 9)


def _check_psd(P: np.ndarray, context: str) -> np.ndarray:
    P = 0.5 * (P + P.T)
    w = np.linalg.eigvalsh(P)
    if w.min() < -1e-9:
        raise RuntimeError(f"covariance lost positive semi-definiteness in {context}")
    return P


class OdometryEkf:
    """Loosely-coupled fusion: IMU orientation in, velocity and optional
    pose measurement updates. Fixed per-tick order: predict, velocity, pose.
    """

    def __init__(self, initial: EkfState, cfg: EkfConfig | None = None):
        self.state = initial
        self.cfg = cfg or EkfConfig()
        self.rejected_velocity = 0
        self.rejected_pose = 0

    def predict(self, imu_quat: np.ndarray, dt: float) -> EkfState:
        if dt <= 0:
            raise ValueError("dt must be positive")
        s, c = self.state, self.cfg
        F = np.eye(9)
        F[0:3, 3:6] = dt * np.eye(3)
        Q = np.zeros((9, 9))
        Q[0:3, 0:3] = c.q_pos * dt * np.eye(3)
        Q[3:6, 3:6] = c.q_vel * dt * np.eye(3)
        Q[6:9, 6:9] = c.q_att * dt * np.eye(3)
        P = F @ s.cov @ F.T + Q
        # orientation comes straight from the IMU, so its error stays at the
        # IMU noise level and decorrelates from the translational states
        P[6:9, 6:9] = np.eye(3) * c.r_att
        P[0:6, 6:9] = 0.0
        P[6:9, 0:6] = 0.0
        P = _check_psd(P, "predict")
        self.state = EkfState(
            position=s.position + s.velocity * dt,
            velocity=s.velocity,
            quat=imu_quat,
            cov=P,
            t=s.t + dt,
        )
        return self.state

    def _update(self, H: np.ndarray, innovation: np.ndarray, R: np.ndarray) -> bool:
        s, c = self.state, self.cfg
        S = H @ s.cov @ H.T + R
        maha = float(innovation @ np.linalg.solve(S, innovation))
        if maha > c.gate:
            return False
        K = s.cov @ H.T @ np.linalg.inv(S)
        dx = K @ innovation
        I_KH = np.eye(9) - K @ H
        P = I_KH @ s.cov @ I_KH.T + K @ R @ K.T  # Joseph form
        P = _check_psd(P, "update")
        self.state = replace(
            s,
            position=s.position + dx[0:3],
            velocity=s.velocity + dx[3:6],
            cov=P,
        )
        return True

    def update_velocity(self, v_body: np.ndarray) -> bool:
        """World-frame velocity update from a body-frame estimator sample."""
        z = quat_rotate(self.state.quat, np.asarray(v_body, dtype=float))
        H = np.zeros((3, 9))
        H[:, 3:6] = np.eye(3)
        ok = self._update(H, z - self.state.velocity, self.cfg.r_vel * np.eye(3))
        if not ok:
            self.rejected_velocity += 1
        return ok

    def update_pose(self, position: np.ndarray) -> bool:
        """Position update from the drifting pose (VIO stand-in) source."""
        H = np.zeros((3, 9))
        H[:, 0:3] = np.eye(3)
        ok = self._update(
            H, np.asarray(position, dtype=float) - self.state.position,
            self.cfg.r_pos * np.eye(3),
        )
        if not ok:
            self.rejected_pose += 1
        return ok


@dataclass
class FusedTrajectory:
    t: np.ndarray
    positions: np.ndarray  # (N, 3)
    quats: np.ndarray  # (N, 4)
    velocities: np.ndarray  # (N, 3) world frame


def fuse_streams(
    streams: SourceStreams,
    initial: EkfState,
    cfg: EkfConfig | None = None,
    use_vio: bool = True,
) -> FusedTrajectory:
    """Run the EKF over timestamp-merged streams. Within one tick, updates
    are applied in the fixed order: predict, velocity, pose.
    """
    ekf = OdometryEkf(initial, cfg)
    events: list[tuple[float, int, tuple]] = []
    for t, q, w in streams.imu:
        events.append((t, 0, (q, w)))
    for t, v in streams.estimator:
        events.append((t, 1, (v,)))
    if use_vio:
        for t, p, q in streams.vio:
            events.append((t, 2, (p, q)))
    events.sort(key=lambda e: (e[0], e[1]))

    ts, ps, qs, vs = [], [], [], []
    for t, kind, payload in events:
        if kind == 0:
            q, _w = payload
            dt = t - ekf.state.t
            if dt > 0:
                ekf.predict(q, dt)
            else:
                ekf.state = replace(ekf.state, quat=q)
        elif kind == 1:
            ekf.update_velocity(payload[0])
        else:
            ekf.update_pose(payload[0])
        ts.append(ekf.state.t)
        ps.append(ekf.state.position.copy())
        qs.append(ekf.state.quat.copy())
        vs.append(ekf.state.velocity.copy())
    return FusedTrajectory(
        t=np.array(ts), positions=np.array(ps), quats=np.array(qs), velocities=np.array(vs)
    )


def initial_state_from(state: RobotState, cov_scale: float = 1e-6) -> EkfState:
    v_world = quat_rotate(state.quat, state.lin_vel_body)
    return EkfState(
        position=state.position.copy(),
        velocity=v_world,
        quat=state.quat.copy(),
        cov=np.eye(9) * cov_scale,
        t=state.t,
    )
