"""Kinematic robot trajectory and ray-cast depth sensing.

The robot motion is kinematic: commanded body-frame velocity integrated over
yaw, base height glued to the terrain plus the nominal trunk height. The trot
oscillator only exists so the body filter and air-time bookkeeping have
realistic inputs. Depth cameras are pinhole models whose rays are intersected
with the heightfield surface (coarse march plus bisection refinement).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_conj, quat_from_euler, quat_rotate, rotz
from .pointcloud import PointCloud, empty_cloud
from .scene import Heightfield

log = logging.getLogger(__name__)

N_JOINTS = 12
N_FEET = 4

# Go1-like standing configuration: (hip, thigh, calf) x (FL, FR, RL, RR)
Q_STAND = np.array([0.0, 0.8, -1.5] * 4)
# hip positions in the base frame, same foot order
HIP_OFFSETS = np.array(
    [
        [0.188, 0.128, 0.0],
        [0.188, -0.128, 0.0],
        [-0.188, 0.128, 0.0],
        [-0.188, -0.128, 0.0],
    ]
)
TROT_PHASE_OFFSETS = np.array([0.0, np.pi, np.pi, 0.0])


@dataclass
class RobotState:
    t: float
    position: np.ndarray  # (3,) world
    quat: np.ndarray  # (4,) wxyz, unit
    lin_vel_body: np.ndarray  # (3,)
    ang_vel_body: np.ndarray  # (3,)
    q: np.ndarray  # (12,)
    dq: np.ndarray  # (12,)
    foot_contacts: np.ndarray  # (4,) bool
    foot_air_times: np.ndarray  # (4,) seconds, 0 while in stance
    foot_touchdown_air: np.ndarray  # (4,) completed air time, nonzero only on touchdown tick

    @property
    def pose(self) -> Pose:
        return Pose(self.position, self.quat)


@dataclass
class CameraModel:
    name: str
    mount: Pose  # relative to base
    h_fov: float  # radians
    v_fov: float
    width: int
    height: int
    min_range: float
    max_range: float
    rate: float = 30.0
    noise_sigma0: float = 0.0  # range noise: sigma(r) = sigma0 + k * r^2
    noise_k: float = 0.0
    dropout: float = 0.0

    def __post_init__(self):
        if not (0 < self.h_fov < np.pi and 0 < self.v_fov < np.pi):
            raise ValueError("fov must lie in (0, pi)")
        if not (0 <= self.min_range < self.max_range):
            raise ValueError("need 0 <= min_range < max_range")
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame (x forward, y left, z up)."""
        au = (np.arange(self.width) + 0.5) / self.width - 0.5
        av = (np.arange(self.height) + 0.5) / self.height - 0.5
        ty = np.tan(au * self.h_fov)
        tz = np.tan(av * self.v_fov)
        gy, gz = np.meshgrid(ty, tz, indexing="ij")
        dirs = np.stack([np.ones_like(gy), gy, gz], axis=-1).reshape(-1, 3)
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


@dataclass
class CommandProfile:
    """Piecewise-constant (v_x, v_y, w_z) command segments."""

    segments: list[tuple[float, tuple[float, float, float]]]  # (duration, cmd)

    def __post_init__(self):
        if any(d <= 0 for d, _ in self.segments):
            raise ValueError("segment durations must be positive")

    @property
    def total_duration(self) -> float:
        return sum(d for d, _ in self.segments)

    def at(self, t: float) -> np.ndarray:
        acc = 0.0
        for d, cmd in self.segments:
            acc += d
            if t < acc:
                return np.asarray(cmd, dtype=float)
        return np.asarray(self.segments[-1][1], dtype=float)

    def boundaries(self) -> list[tuple[float, float, np.ndarray]]:
        out, acc = [], 0.0
        for d, cmd in self.segments:
            out.append((acc, acc + d, np.asarray(cmd, dtype=float)))
            acc += d
        return out

    @classmethod
    def constant(cls, cmd, duration: float) -> "CommandProfile":
        return cls(segments=[(duration, tuple(cmd))])


@dataclass
class GaitParams:
    frequency: float = 2.0  # strides per second
    duty: float = 0.5  # stance fraction of the stride
    swing_amplitude: float = 0.3  # rad, thigh/calf oscillation
    trunk_height: float = 0.30  # nominal base height above terrain
    pitch_tau: float = 0.2  # terrain-slope low-pass time constant
    q_default: np.ndarray = field(default_factory=lambda: Q_STAND.copy())


@dataclass
class Trajectory:
    states: list[RobotState]
    truncated: bool = False

    def __iter__(self):
        return iter(self.states)

    def __len__(self):
        return len(self.states)


def _footprint_heights(hf: Heightfield, xy: np.ndarray, yaw: float) -> np.ndarray:
    feet = HIP_OFFSETS[:, :2] @ rotz(yaw)[:2, :2].T + xy
    return hf.heights_at(feet)


def simulate_trajectory(
    profile: CommandProfile,
    hf: Heightfield,
    dt: float,
    gait: GaitParams,
    seed: int = 0,
    start_xy=(0.5, None),
    start_yaw: float = 0.0,
    duration: float | None = None,
) -> Trajectory:
    """Integrate the commanded kinematic motion over the heightfield.

    Deterministic given the seed. If the base footprint leaves the
    heightfield the stream is truncated and flagged.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    duration = profile.total_duration if duration is None else duration
    n_steps = int(round(duration / dt))

    sx, sy = start_xy
    if sy is None:
        sy = hf.size[1] / 2.0
    xy = np.array([sx, sy], dtype=float)
    yaw = start_yaw
    pitch = 0.0
    air = np.zeros(N_FEET)
    prev_contact = np.ones(N_FEET, dtype=bool)
    prev_pos = None
    states: list[RobotState] = []
    truncated = False

    for i in range(n_steps + 1):
        t = i * dt
        cmd = profile.at(t)
        foot_h = _footprint_heights(hf, xy, yaw)
        if not np.isfinite(foot_h).all():
            truncated = True
            log.warning("trajectory left the heightfield at t=%.3f", t)
            break
        z = float(foot_h.mean()) + gait.trunk_height
        # terrain slope between front and rear hip pairs, low-passed into pitch
        front, rear = foot_h[:2].mean(), foot_h[2:].mean()
        pitch_target = -np.arctan2(front - rear, 2 * abs(HIP_OFFSETS[0, 0]))
        alpha = min(1.0, dt / gait.pitch_tau)
        pitch += alpha * (pitch_target - pitch)
        quat = quat_from_euler(0.0, pitch, yaw)

        pos = np.array([xy[0], xy[1], z])
        if prev_pos is None:
            v_world = quat_rotate(quat, np.array([cmd[0], cmd[1], 0.0]))
        else:
            v_world = (pos - prev_pos) / dt
            v_world[:2] = quat_rotate(quat, np.array([cmd[0], cmd[1], 0.0]))[:2]
        v_body = quat_rotate(quat_conj(quat), v_world)
        w_body = np.array([0.0, 0.0, cmd[2]])

        # trot oscillator: contacts, joints and air-time bookkeeping
        moving = bool(np.linalg.norm(cmd) > 1e-9)
        phase = (2 * np.pi * gait.frequency * t + TROT_PHASE_OFFSETS) % (2 * np.pi)
        if moving:
            contact = phase / (2 * np.pi) < gait.duty
        else:
            contact = np.ones(N_FEET, dtype=bool)
        touchdown_air = np.zeros(N_FEET)
        td = contact & ~prev_contact
        touchdown_air[td] = air[td]
        air[contact] = 0.0
        air[~contact] += dt

        q = gait.q_default.copy()
        dq = np.zeros(N_JOINTS)
        if moving:
            # swing progress in [0, 1]; thigh/calf fold-unfold during swing
            s = (phase / (2 * np.pi) - gait.duty) / (1 - gait.duty)
            swing = np.where(contact, 0.0, np.sin(np.pi * np.clip(s, 0.0, 1.0)))
            dswing = np.where(
                contact,
                0.0,
                np.pi * np.cos(np.pi * np.clip(s, 0.0, 1.0))
                * gait.frequency / (1 - gait.duty),
            )
            for f in range(N_FEET):
                q[3 * f + 1] -= gait.swing_amplitude * swing[f]
                q[3 * f + 2] += gait.swing_amplitude * swing[f]
                dq[3 * f + 1] = -gait.swing_amplitude * dswing[f]
                dq[3 * f + 2] = -dq[3 * f + 1]

        states.append(
            RobotState(
                t=t,
                position=pos,
                quat=quat,
                lin_vel_body=v_body,
                ang_vel_body=w_body,
                q=q,
                dq=dq,
                foot_contacts=contact.copy(),
                foot_air_times=air.copy(),
                foot_touchdown_air=touchdown_air,
            )
        )
        prev_contact = contact
        prev_pos = pos

        # advance base: body-frame command rotated by yaw
        step = rotz(yaw)[:2, :2] @ np.array([cmd[0], cmd[1]]) * dt
        xy = xy + step
        yaw += cmd[2] * dt

    return Trajectory(states=states, truncated=truncated)


def render_depth(
    camera: CameraModel,
    base_state: RobotState,
    hf: Heightfield,
    march_step: float | None = None,
) -> PointCloud:
    """Ray-cast one depth frame. Points are returned in the sensor frame;
    per-point ray directions are attached for noise injection.
    """
    cam_pose = base_state.pose.compose(camera.mount)
    origin = cam_pose.position
    try_h = hf.heights_at(origin[:2].reshape(1, 2), fill=-np.inf)[0]
    if np.isfinite(try_h) and origin[2] <= try_h:
        log.warning("camera %s below terrain; returning empty cloud", camera.name)
        return empty_cloud(base_state.t, camera.name)

    dirs = quat_rotate(cam_pose.quat, camera.ray_directions())
    # fast heightfield lookup; out-of-extent cells can never be hit
    cells = hf.cells
    nx, ny = cells.shape
    ox, oy = hf.origin
    inv_res = 1.0 / hf.resolution

    def terrain(x, y):
        ix = np.floor((x - ox) * inv_res).astype(np.int64)
        iy = np.floor((y - oy) * inv_res).astype(np.int64)
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        h = np.full(ix.shape, -1e9)
        h[ok] = cells[ix[ok], iy[ok]]
        return h

    # coarse march; the terrain primitives are wide enough that a crossing
    # cannot be skipped, and bisection restores exact precision
    step = max(hf.resolution, 0.05) if march_step is None else march_step
    ts = np.arange(1e-4, camera.max_range + step, step)
    px = origin[0] + dirs[:, 0:1] * ts
    py = origin[1] + dirs[:, 1:2] * ts
    pz = origin[2] + dirs[:, 2:3] * ts
    below = pz <= terrain(px, py)
    hit_any = below.any(axis=1)
    first = np.argmax(below, axis=1)
    hit = hit_any & (first > 0)

    if not hit.any():
        return empty_cloud(base_state.t, camera.name)

    d = dirs[hit]
    lo = ts[first[hit] - 1]
    hi = ts[first[hit]]
    for _ in range(33):
        mid = 0.5 * (lo + hi)
        under = origin[2] + d[:, 2] * mid <= terrain(
            origin[0] + d[:, 0] * mid, origin[1] + d[:, 1] * mid
        )
        hi = np.where(under, mid, hi)
        lo = np.where(under, lo, mid)
    t_hit = 0.5 * (lo + hi)

    in_range = (t_hit >= camera.min_range) & (t_hit <= camera.max_range)
    t_hit = t_hit[in_range]
    d = d[in_range]
    world = origin + d * t_hit[:, None]
    sensor_pts = cam_pose.inverse_transform(world)
    rays = sensor_pts / np.linalg.norm(sensor_pts, axis=1, keepdims=True)
    return PointCloud(t=base_state.t, frame=camera.name, points=sensor_pts, rays=rays)


def inject_sensor_noise(
    cloud: PointCloud, camera: CameraModel, rng: np.random.Generator | int
) -> PointCloud:
    """Range noise along each ray plus i.i.d. dropout. Deterministic per rng."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if len(cloud) == 0:
        return cloud
    if camera.noise_sigma0 == 0 and camera.noise_k == 0 and camera.dropout == 0:
        return cloud
    ranges = np.linalg.norm(cloud.points, axis=1)
    rays = cloud.rays
    if rays is None:
        rays = cloud.points / ranges[:, None]
    sigma = camera.noise_sigma0 + camera.noise_k * ranges**2
    noisy_r = ranges + rng.normal(0.0, 1.0, len(cloud)) * sigma
    pts = rays * noisy_r[:, None]
    keep = rng.random(len(cloud)) >= camera.dropout
    return PointCloud(t=cloud.t, frame=cloud.frame, points=pts[keep], rays=rays[keep])


def default_front_camera() -> CameraModel:
    """Stereo depth camera at the nose, pitched 60 degrees downward."""
    return CameraModel(
        name="front",
        mount=Pose(np.array([0.25, 0.0, 0.05]), quat_from_euler(0.0, np.deg2rad(50), 0.0)),
        h_fov=np.deg2rad(74),
        v_fov=np.deg2rad(40),
        width=32,
        height=24,
        min_range=0.15,
        max_range=3.0,
    )


def default_rear_camera() -> CameraModel:
    """ToF camera at the tail, aimed at the region beneath the robot."""
    return CameraModel(
        name="rear",
        mount=Pose(np.array([-0.25, 0.0, 0.05]), quat_from_euler(0.0, np.deg2rad(70), 0.0)),
        h_fov=np.deg2rad(84),
        v_fov=np.deg2rad(76),
        width=28,
        height=22,
        min_range=0.1,
        max_range=2.0,
    )
