"""Parametric ground-truth terrains and exact height queries.

Terrain primitives are profiles along x, extruded along y. A heightfield is
sampled once at cell centers; lookups are piecewise-constant so vertical step
faces stay sharp (no interpolation smoothing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .geometry import Pose, rotz
from .pointcloud import PointCloud

GT_PATCH_RESOLUTION = 0.0175  # scanner-analog grid pitch
SAMPLE_REGION = (0.5, 0.3)  # evaluated / sampled area around the base


class SceneError(ValueError):
    pass


class OutOfBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class FlatRegion:
    z: float = 0.0


@dataclass(frozen=True)
class Step:
    """Raised box: z = height for x in [x_start, x_start + depth)."""

    x_start: float
    height: float
    depth: float

    def x_interval(self) -> tuple[float, float]:
        return (self.x_start, self.x_start + self.depth)


@dataclass(frozen=True)
class Platform:
    """Rising steps to a platform, then a downward ramp back to ground."""

    x_start: float
    rise_steps: tuple[tuple[float, float], ...]  # (height, depth) per rise
    platform_height: float
    platform_length: float
    ramp_slope: float

    def x_interval(self) -> tuple[float, float]:
        depth = sum(d for _, d in self.rise_steps) + self.platform_length
        depth += self.platform_height / self.ramp_slope
        return (self.x_start, self.x_start + depth)


Primitive = FlatRegion | Step | Platform


@dataclass
class SceneSpec:
    primitives: list[Primitive]
    extent: tuple[float, float]  # world size in x and y, base height z = 0

    def __post_init__(self):
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise SceneError("scene extent must be positive")
        self.validate()

    def validate(self) -> None:
        intervals = []
        for p in self.primitives:
            if isinstance(p, Step):
                if p.height == 0 or p.depth <= 0:
                    raise SceneError(f"degenerate step: {p}")
                intervals.append((p.x_interval(), p))
            elif isinstance(p, Platform):
                if p.platform_height <= 0 or p.platform_length <= 0 or p.ramp_slope <= 0:
                    raise SceneError(f"degenerate platform: {p}")
                for h, d in p.rise_steps:
                    if h <= 0 or d <= 0:
                        raise SceneError(f"degenerate rise step in {p}")
                intervals.append((p.x_interval(), p))
        intervals.sort(key=lambda iv: iv[0][0])
        for (a, pa), (b, pb) in zip(intervals, intervals[1:]):
            if b[0] < a[1]:
                raise SceneError(
                    f"primitives overlap in x: {pa} spans {a}, {pb} spans {b}"
                )

    def base_height(self) -> float:
        for p in self.primitives:
            if isinstance(p, FlatRegion):
                return p.z
        return 0.0

    def profile_height(self, x: np.ndarray) -> np.ndarray:
        """Terrain height as a function of x (y-invariant)."""
        x = np.asarray(x, dtype=float)
        z = np.full_like(x, self.base_height())
        for p in self.primitives:
            if isinstance(p, FlatRegion):
                continue
            if isinstance(p, Step):
                mask = (x >= p.x_start) & (x < p.x_start + p.depth)
                z[mask] = p.height
            elif isinstance(p, Platform):
                cur = p.x_start
                level = 0.0
                for h, d in p.rise_steps:
                    level += h
                    mask = (x >= cur) & (x < cur + d)
                    z[mask] = level
                    cur += d
                mask = (x >= cur) & (x < cur + p.platform_length)
                z[mask] = p.platform_height
                cur += p.platform_length
                ramp_len = p.platform_height / p.ramp_slope
                mask = (x >= cur) & (x < cur + ramp_len)
                z[mask] = p.platform_height - (x[mask] - cur) * p.ramp_slope
        return z

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        prims: list[Primitive] = []
        for pd in d.get("primitives", []):
            pd = dict(pd)
            kind = pd.pop("type")
            if kind == "flat":
                prims.append(FlatRegion(**pd))
            elif kind == "step":
                prims.append(Step(**pd))
            elif kind == "platform":
                pd["rise_steps"] = tuple(tuple(r) for r in pd["rise_steps"])
                prims.append(Platform(**pd))
            else:
                raise SceneError(f"unknown primitive type {kind!r}")
        return cls(primitives=prims, extent=tuple(d["extent"]))

    @classmethod
    def from_yaml(cls, path) -> "SceneSpec":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))


def obstacle_scene(extent=(8.0, 3.0), x_start=3.0) -> SceneSpec:
    """Two 0.10 m steps up to a 0.30 m platform, then a downward ramp."""
    return SceneSpec(
        primitives=[
            FlatRegion(z=0.0),
            Platform(
                x_start=x_start,
                rise_steps=((0.10, 0.30), (0.10, 0.30)),
                platform_height=0.30,
                platform_length=1.0,
                ramp_slope=0.3,
            ),
        ],
        extent=extent,
    )


@dataclass(frozen=True)
class Heightfield:
    """Dense ground-truth z-grid. Immutable after construction."""

    resolution: float
    origin: tuple[float, float]  # world xy of cell (0, 0) lower corner
    cells: np.ndarray  # (nx, ny) heights

    def __post_init__(self):
        if self.resolution <= 0:
            raise SceneError("resolution must be positive")
        if self.cells.ndim != 2 or min(self.cells.shape) < 1:
            raise SceneError("heightfield needs at least a 1x1 grid")
        if not np.isfinite(self.cells).all():
            raise SceneError("heightfield contains non-finite heights")
        self.cells.setflags(write=False)

    @property
    def extent(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def size(self) -> tuple[float, float]:
        nx, ny = self.cells.shape
        return (nx * self.resolution, ny * self.resolution)

    def cell_index(self, x: float, y: float) -> tuple[int, int]:
        ix = math.floor((x - self.origin[0]) / self.resolution)
        iy = math.floor((y - self.origin[1]) / self.resolution)
        return ix, iy

    def height_at(self, x: float, y: float) -> float:
        """Piecewise-constant lookup of the containing cell."""
        ix, iy = self.cell_index(x, y)
        nx, ny = self.cells.shape
        if not (0 <= ix < nx and 0 <= iy < ny):
            raise OutOfBoundsError(f"({x}, {y}) outside heightfield")
        return float(self.cells[ix, iy])

    def heights_at(self, xy: np.ndarray, fill: float = np.nan) -> np.ndarray:
        """Vectorized lookup; out-of-extent entries get `fill`."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        idx = np.floor((xy - np.asarray(self.origin)) / self.resolution).astype(int)
        nx, ny = self.cells.shape
        ok = (
            (idx[:, 0] >= 0)
            & (idx[:, 0] < nx)
            & (idx[:, 1] >= 0)
            & (idx[:, 1] < ny)
        )
        out = np.full(len(xy), fill, dtype=float)
        out[ok] = self.cells[idx[ok, 0], idx[ok, 1]]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(
                f"# resolution={self.resolution} origin={self.origin[0]},{self.origin[1]}\n"
            )
            np.savetxt(f, self.cells, delimiter=",", fmt="%.9g")

    @classmethod
    def from_csv(cls, path) -> "Heightfield":
        with open(path) as f:
            header = f.readline()
            parts = dict(tok.split("=") for tok in header.lstrip("# ").split())
            res = float(parts["resolution"])
            ox, oy = (float(v) for v in parts["origin"].split(","))
            cells = np.loadtxt(f, delimiter=",", ndmin=2)
        return cls(resolution=res, origin=(ox, oy), cells=cells)


def build_scene(spec: SceneSpec, resolution: float) -> Heightfield:
    """Sample the scene's analytic profile at cell centers."""
    if resolution <= 0:
        raise SceneError("resolution must be positive")
    nx = max(1, int(round(spec.extent[0] / resolution)))
    ny = max(1, int(round(spec.extent[1] / resolution)))
    xc = (np.arange(nx) + 0.5) * resolution
    col = spec.profile_height(xc)
    cells = np.repeat(col[:, None], ny, axis=1)
    return Heightfield(resolution=resolution, origin=(0.0, 0.0), cells=cells)


def ground_truth_patch(
    hf: Heightfield,
    base_pose: Pose,
    region: tuple[float, float] = SAMPLE_REGION,
    resolution: float = GT_PATCH_RESOLUTION,
) -> tuple[PointCloud, int]:
    """One point per ground-truth cell center in the yaw-aligned region
    around the base. Returns (cloud in world frame, clipped point count).
    """
    nx = math.ceil(region[0] / resolution)
    ny = math.ceil(region[1] / resolution)
    xs = (np.arange(nx) - (nx - 1) / 2) * resolution
    ys = (np.arange(ny) - (ny - 1) / 2) * resolution
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    local = np.stack([gx.ravel(), gy.ravel()], axis=1)
    R = rotz(base_pose.yaw)[:2, :2]
    world = local @ R.T + base_pose.position[:2]
    z = hf.heights_at(world)
    ok = np.isfinite(z)
    clipped = int((~ok).sum())
    pts = np.column_stack([world[ok], z[ok]])
    return PointCloud(t=0.0, frame="world", points=pts), clipped
