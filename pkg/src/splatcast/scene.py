"""Gaussian scene model: parameterization, cameras, analytic motions, datasets.

A scene is a set of anisotropic 3D Gaussians, each carrying a time-varying
10-vector (position, quaternion, log-scale) plus static opacity and color
coefficients.  Scales live in log-space and opacity pre-sigmoid so positivity
and range hold by construction.  Quaternions are renormalized whenever a
rotation is consumed; the raw 10-vector handed to sequence models is not.

Synthetic scenes attach an analytic motion to every Gaussian, giving exact
closed-form trajectories on [t_min, inf) that serve as the ground-truth oracle
for both training data and extrapolation evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import DomainError


# ---- quaternion helpers -----------------------------------------------------


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise DomainError("quaternion has zero norm")
    return q / n


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit-norm (w, x, y, z) quaternion to a 3x3 rotation matrix."""
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def axis_angle_quat(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        raise DomainError("rotation axis has zero norm")
    axis = axis / n
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    return quat_to_rotmat(axis_angle_quat(axis, angle))


def covariance(q: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    """3x3 covariance R S S^T R^T with S = diag(exp(log_scale))."""
    r = quat_to_rotmat(q)
    rs = r * np.exp(np.asarray(log_scale, dtype=np.float64))
    return rs @ rs.T


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


# ---- domain types -----------------------------------------------------------


@dataclass
class CanonicalGaussian:
    """Static reference Gaussian: only (mu, q, log_scale) vary over time."""

    mu: np.ndarray                 # (3,)
    q: np.ndarray                  # (4,) unit (w, x, y, z)
    log_scale: np.ndarray          # (3,), scale = exp(log_scale)
    alpha: float = 2.0             # pre-sigmoid opacity
    color: np.ndarray = None       # (3 * sh_blocks,); block 0 is base RGB in [0, 1]

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(3)
        self.q = quat_normalize(np.asarray(self.q, dtype=np.float64).reshape(4))
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.alpha = float(self.alpha)
        if self.color is None:
            self.color = np.array([0.8, 0.8, 0.8])
        self.color = np.asarray(self.color, dtype=np.float64).reshape(-1)
        if self.color.size % 3 != 0 or self.color.size == 0:
            raise ValueError(f"color block must have 3*k entries, got {self.color.size}")

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.alpha))

    @property
    def base_color(self) -> np.ndarray:
        return self.color[:3]

    def params10(self) -> np.ndarray:
        return np.concatenate([self.mu, self.q, self.log_scale])


@dataclass
class GaussianState:
    """Time-varying 10-vector (mu 3, q 4, log_scale 3) at timestamp t."""

    params: np.ndarray
    t: float

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64).reshape(10)
        self.t = float(self.t)

    @property
    def mu(self):
        return self.params[0:3]

    @property
    def q(self):
        return self.params[3:7]

    @property
    def log_scale(self):
        return self.params[7:10]


@dataclass
class Camera:
    """Pinhole camera; x_cam = rotation @ x_world + translation."""

    rotation: np.ndarray     # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation is not orthonormal")
        if not np.isclose(np.linalg.det(self.rotation), 1.0, atol=1e-9):
            raise ValueError("camera rotation must have determinant +1")

    @staticmethod
    def look_from_z(distance: float, fx: float, width: int, height: int) -> "Camera":
        """Camera on +z looking at the origin, y flipped into image rows."""
        rot = np.diag([1.0, -1.0, -1.0])
        trans = -rot @ np.array([0.0, 0.0, distance])
        return Camera(rot, trans, fx, fx, (width - 1) / 2, (height - 1) / 2,
                      width, height)


# ---- motions ----------------------------------------------------------------

# Every motion kind produces a C^2 trajectory on [t_min, inf); this is what
# makes second-difference (acceleration) penalties meaningful on targets.


@dataclass
class StaticMotion:
    kind: str = field(default="static", init=False)


@dataclass
class LinearMotion:
    velocity: np.ndarray
    kind: str = field(default="linear", init=False)

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(3)


@dataclass
class CircularMotion:
    center: np.ndarray
    axis: np.ndarray
    omega: float            # rad per unit time
    phase: float = 0.0
    kind: str = field(default="circular", init=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.axis = np.asarray(self.axis, dtype=np.float64).reshape(3)
        if np.linalg.norm(self.axis) == 0:
            raise ValueError("circular motion axis has zero norm")
        self.axis = self.axis / np.linalg.norm(self.axis)
        self.omega = float(self.omega)
        self.phase = float(self.phase)


@dataclass
class HarmonicMotion:
    amplitude: np.ndarray
    omega: float
    phase: float = 0.0
    center: np.ndarray | None = None  # defaults to the canonical position
    kind: str = field(default="harmonic", init=False)

    def __post_init__(self):
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64).reshape(3)
        self.omega = float(self.omega)
        self.phase = float(self.phase)
        if self.center is not None:
            self.center = np.asarray(self.center, dtype=np.float64).reshape(3)


@dataclass
class SpinMotion:
    """Rotation of the Gaussian about its own local z axis; position fixed."""

    omega: float
    kind: str = field(default="spin", init=False)

    def __post_init__(self):
        self.omega = float(self.omega)


Motion = StaticMotion | LinearMotion | CircularMotion | HarmonicMotion | SpinMotion

_MOTION_KINDS = {
    "static": StaticMotion,
    "linear": LinearMotion,
    "circular": CircularMotion,
    "harmonic": HarmonicMotion,
    "spin": SpinMotion,
}


# ---- scene spec ---------------------------------------------------------------


@dataclass
class SceneSpec:
    """Gaussians, their motions, cameras, and the observed time window."""

    gaussians: list[CanonicalGaussian]
    motions: list[Motion]
    cameras: list[Camera]
    t_min: float = 0.0
    t_max: float = 1.0

    def __post_init__(self):
        if len(self.gaussians) != len(self.motions):
            raise ValueError(
                f"{len(self.gaussians)} gaussians but {len(self.motions)} motions"
            )
        if not self.t_min < self.t_max:
            raise ValueError(f"degenerate window [{self.t_min}, {self.t_max}]")

    @property
    def num_gaussians(self) -> int:
        return len(self.gaussians)

    def static_colors(self) -> np.ndarray:
        return np.stack([g.base_color for g in self.gaussians])

    def static_opacities(self) -> np.ndarray:
        return np.array([g.opacity for g in self.gaussians])

    # -- JSON schema: {"t_min", "t_max", "gaussians": [{"mu", "q", "log_scale",
    # "alpha", "color"}], "motions": [{"kind", ...}], "cameras": [{"rotation",
    # "translation", "fx", "fy", "cx", "cy", "width", "height"}]}

    def to_json(self) -> str:
        def motion_dict(m):
            d = {"kind": m.kind}
            for k, v in vars(m).items():
                if k == "kind" or v is None:
                    continue
                d[k] = v.tolist() if isinstance(v, np.ndarray) else v
            return d

        doc = {
            "t_min": self.t_min,
            "t_max": self.t_max,
            "gaussians": [
                {
                    "mu": g.mu.tolist(),
                    "q": g.q.tolist(),
                    "log_scale": g.log_scale.tolist(),
                    "alpha": g.alpha,
                    "color": g.color.tolist(),
                }
                for g in self.gaussians
            ],
            "motions": [motion_dict(m) for m in self.motions],
            "cameras": [
                {
                    "rotation": c.rotation.tolist(),
                    "translation": c.translation.tolist(),
                    "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
                    "width": c.width, "height": c.height,
                }
                for c in self.cameras
            ],
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "SceneSpec":
        doc = json.loads(text)
        gaussians = [
            CanonicalGaussian(
                mu=g["mu"], q=g["q"], log_scale=g["log_scale"],
                alpha=g["alpha"], color=np.asarray(g["color"]),
            )
            for g in doc["gaussians"]
        ]
        motions = []
        for m in doc["motions"]:
            kind = m.pop("kind")
            if kind not in _MOTION_KINDS:
                raise ValueError(f"unknown motion kind {kind!r}")
            motions.append(_MOTION_KINDS[kind](**m))
        cameras = [Camera(**c) for c in doc["cameras"]]
        return SceneSpec(gaussians, motions, cameras,
                         t_min=doc["t_min"], t_max=doc["t_max"])

    def save(self, path):
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path) -> "SceneSpec":
        return SceneSpec.from_json(Path(path).read_text())


# ---- analytic trajectories ------------------------------------------------------


def _rodrigues_apply(axis: np.ndarray, angles: np.ndarray,
                     vec: np.ndarray) -> np.ndarray:
    """Rotate one vector by a batch of angles about a unit axis, shape (T, 3)."""
    cos = np.cos(angles)[:, None]
    sin = np.sin(angles)[:, None]
    k = axis
    cross = np.cross(k, vec)
    dot = float(np.dot(k, vec))
    return vec[None, :] * cos + cross[None, :] * sin + k[None, :] * (dot * (1 - cos))


def _gaussian_states_over_times(spec: SceneSpec, k: int,
                                times: np.ndarray) -> np.ndarray:
    """Closed-form (T, 10) trajectory of one Gaussian."""
    g = spec.gaussians[k]
    m = spec.motions[k]
    t_count = times.size
    mu = np.broadcast_to(g.mu, (t_count, 3)).copy()
    q = np.broadcast_to(g.q, (t_count, 4)).copy()
    s = np.broadcast_to(g.log_scale, (t_count, 3)).copy()
    if isinstance(m, StaticMotion):
        pass
    elif isinstance(m, LinearMotion):
        mu = g.mu[None, :] + m.velocity[None, :] * times[:, None]
    elif isinstance(m, CircularMotion):
        angles = m.omega * times + m.phase
        mu = m.center[None, :] + _rodrigues_apply(m.axis, angles, g.mu - m.center)
    elif isinstance(m, HarmonicMotion):
        center = g.mu if m.center is None else m.center
        mu = center[None, :] + m.amplitude[None, :] * \
            np.sin(m.omega * times + m.phase)[:, None]
    elif isinstance(m, SpinMotion):
        local_z = quat_to_rotmat(g.q) @ np.array([0.0, 0.0, 1.0])
        half = 0.5 * m.omega * times
        rw, rxyz = np.cos(half), np.sin(half)[:, None] * local_z[None, :]
        bw, bx, by, bz = g.q
        q = np.stack([
            rw * bw - rxyz[:, 0] * bx - rxyz[:, 1] * by - rxyz[:, 2] * bz,
            rw * bx + rxyz[:, 0] * bw + rxyz[:, 1] * bz - rxyz[:, 2] * by,
            rw * by - rxyz[:, 0] * bz + rxyz[:, 1] * bw + rxyz[:, 2] * bx,
            rw * bz + rxyz[:, 0] * by - rxyz[:, 1] * bx + rxyz[:, 2] * bw,
        ], axis=1)
    else:
        raise ValueError(f"unknown motion kind {type(m).__name__}")
    return np.concatenate([mu, q, s], axis=1)


def analytic_state(spec: SceneSpec, k: int, t: float) -> GaussianState:
    """Exact closed-form state of Gaussian k at time t (the test oracle)."""
    if t < spec.t_min:
        raise ValueError(f"t={t} precedes the scene window start {spec.t_min}")
    params = _gaussian_states_over_times(spec, k, np.array([float(t)]))
    return GaussianState(params[0], t)


def analytic_states(spec: SceneSpec, times) -> np.ndarray:
    """States for all Gaussians at the given times, shape (M, T, 10)."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size and times.min() < spec.t_min:
        raise ValueError(f"t={times.min()} precedes the scene window start")
    return np.stack([_gaussian_states_over_times(spec, k, times)
                     for k in range(spec.num_gaussians)])


@dataclass
class AnalyticTrajectories:
    """Continuous trajectory source backed by closed-form motion (bypass mode)."""

    spec: SceneSpec
    t_min: float
    t_max: float

    @property
    def num_gaussians(self) -> int:
        return self.spec.num_gaussians

    def states_at(self, times) -> np.ndarray:
        return analytic_states(self.spec, times)


# ---- trajectory sets -------------------------------------------------------------

_TRAJ_MAGIC = b"OGTJ"


@dataclass
class TrajectorySet:
    """Per-Gaussian parameter sequences on a shared timestamp grid."""

    timestamps: np.ndarray   # (T,)
    params: np.ndarray       # (M, T, 10)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.ndim != 3 or self.params.shape[1] != self.timestamps.size \
                or self.params.shape[2] != 10:
            raise ValueError(
                f"params shape {self.params.shape} does not match "
                f"{self.timestamps.size} timestamps"
            )
        if self.timestamps.size >= 2 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def num_gaussians(self) -> int:
        return self.params.shape[0]

    @property
    def t_min(self) -> float:
        return float(self.timestamps[0])

    @property
    def t_max(self) -> float:
        return float(self.timestamps[-1])

    def states_at(self, times) -> np.ndarray:
        """Linear interpolation in time, shape (M, len(times), 10)."""
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        out = np.empty((self.num_gaussians, times.size, 10))
        for c in range(10):
            for k in range(self.num_gaussians):
                out[k, :, c] = np.interp(times, self.timestamps, self.params[k, :, c])
        return out

    def slice_time(self, start: int, stop: int) -> "TrajectorySet":
        return TrajectorySet(self.timestamps[start:stop], self.params[:, start:stop])

    def save(self, path):
        import struct

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        m, t = self.params.shape[0], self.timestamps.size
        chunks = [
            _TRAJ_MAGIC,
            struct.pack("<I", 1),
            struct.pack("<II", m, t),
            self.timestamps.astype("<f8").tobytes(),
            np.ascontiguousarray(self.params).astype("<f4").tobytes(),
        ]
        path.write_bytes(b"".join(chunks))

    @staticmethod
    def load(path) -> "TrajectorySet":
        import struct

        buf = Path(path).read_bytes()
        if buf[:4] != _TRAJ_MAGIC:
            raise ValueError(f"{path}: bad magic {buf[:4]!r}")
        version, m, t = struct.unpack_from("<III", buf, 4)
        if version != 1:
            raise ValueError(f"{path}: unsupported version {version}")
        pos = 16
        ts = np.frombuffer(buf, dtype="<f8", count=t, offset=pos)
        pos += 8 * t
        params = np.frombuffer(buf, dtype="<f4", count=m * t * 10, offset=pos)
        return TrajectorySet(ts.astype(np.float64),
                             params.astype(np.float64).reshape(m, t, 10))


# ---- dataset generation -----------------------------------------------------------


@dataclass
class FrameSet:
    """Rendered frames plus poses/timestamps and the underlying trajectories."""

    timestamps: np.ndarray        # (n_frames,)
    camera_indices: np.ndarray    # (n_frames,)
    images: list                  # rasterizer.Image per frame
    n_train: int
    trajectories: TrajectorySet

    @property
    def train_timestamps(self) -> np.ndarray:
        return self.timestamps[: self.n_train]

    @property
    def eval_timestamps(self) -> np.ndarray:
        return self.timestamps[self.n_train:]


def split_timestamps(t_min: float, t_max: float, n_frames: int,
                     split: float) -> tuple[np.ndarray, int]:
    """Train times uniform on [t_min, t_split]; eval times fill (t_split, t_max]."""
    if n_frames < 2:
        raise ValueError(f"need at least 2 frames, got {n_frames}")
    if not 0.0 < split < 1.0:
        raise ValueError(f"split must be in (0, 1), got {split}")
    if not t_min < t_max:
        raise ValueError(f"degenerate window [{t_min}, {t_max}]")
    n_train = int(round(n_frames * split))
    n_train = min(max(n_train, 1), n_frames - 1)
    n_eval = n_frames - n_train
    t_split = t_min + split * (t_max - t_min)
    if n_train == 1:
        train = np.array([t_min])
    else:
        train = t_min + np.arange(n_train) * ((t_split - t_min) / (n_train - 1))
    evals = t_split + np.arange(1, n_eval + 1) * ((t_max - t_split) / n_eval)
    return np.concatenate([train, evals]), n_train


def generate_dataset(spec: SceneSpec, n_frames: int, split: float,
                     camera_cycle: bool = True) -> FrameSet:
    """Render frames at split timestamps and collect ground-truth trajectories."""
    from .rasterizer import render

    times, n_train = split_timestamps(spec.t_min, spec.t_max, n_frames, split)
    params = analytic_states(spec, times)
    colors = spec.static_colors()
    opacities = spec.static_opacities()
    n_cams = len(spec.cameras)
    cam_idx = (np.arange(n_frames) % n_cams) if camera_cycle else np.zeros(n_frames, int)
    images = [
        render(params[:, j], colors, opacities, spec.cameras[int(cam_idx[j])])
        for j in range(n_frames)
    ]
    return FrameSet(times, cam_idx, images, n_train, TrajectorySet(times, params))


# ---- synthetic presets --------------------------------------------------------------


def _ring_gaussians(rng: np.random.Generator, n: int, radius: float,
                    scale_range=(0.05, 0.11)) -> list[CanonicalGaussian]:
    gaussians = []
    for i in range(n):
        theta = 2 * np.pi * i / n + rng.uniform(-0.1, 0.1)
        r = radius * rng.uniform(0.75, 1.0)
        mu = np.array([r * np.cos(theta), r * np.sin(theta), rng.uniform(-0.15, 0.15)])
        q = quat_normalize(rng.normal(size=4))
        s = np.log(rng.uniform(*scale_range, size=3))
        hue = i / n
        color = np.array([
            0.5 + 0.5 * np.cos(2 * np.pi * hue),
            0.5 + 0.5 * np.cos(2 * np.pi * (hue + 1 / 3)),
            0.5 + 0.5 * np.cos(2 * np.pi * (hue + 2 / 3)),
        ])
        alpha = rng.uniform(1.5, 3.0)  # opacity ~ 0.82..0.95
        gaussians.append(CanonicalGaussian(mu, q, s, alpha, color))
    return gaussians


def build_preset(name: str, n_gaussians: int, *, seed: int = 0,
                 image_size: int = 64, period: float = 1.25,
                 t_min: float = 0.0, t_max: float = 1.0) -> SceneSpec:
    """Deterministic desk-scale scenes: circular, linear, harmonic, mixed."""
    if n_gaussians < 1:
        raise ValueError(f"need at least one gaussian, got {n_gaussians}")
    rng = np.random.default_rng(seed)
    camera = Camera.look_from_z(4.0, fx=1.4 * image_size,
                                width=image_size, height=image_size)
    gaussians = _ring_gaussians(rng, n_gaussians, radius=1.0)
    omega = 2 * np.pi / period
    if name == "circular":
        motions = [CircularMotion(center=np.zeros(3), axis=np.array([0.0, 0.0, 1.0]),
                                  omega=omega) for _ in range(n_gaussians)]
    elif name == "linear":
        motions = [LinearMotion(velocity=rng.uniform(-0.5, 0.5, size=3) * [1, 1, 0.2])
                   for _ in range(n_gaussians)]
    elif name == "harmonic":
        motions = [HarmonicMotion(amplitude=rng.uniform(0.1, 0.45, size=3) * [1, 1, 0.3],
                                  omega=omega, phase=rng.uniform(0, 2 * np.pi))
                   for _ in range(n_gaussians)]
    elif name == "mixed":
        motions = []
        for i in range(n_gaussians):
            mod = i % 4
            if mod == 0:
                motions.append(CircularMotion(center=np.zeros(3),
                                              axis=np.array([0.0, 0.0, 1.0]),
                                              omega=omega))
            elif mod == 1:
                motions.append(HarmonicMotion(
                    amplitude=rng.uniform(0.1, 0.4, size=3) * [1, 1, 0.3],
                    omega=omega, phase=rng.uniform(0, 2 * np.pi)))
            elif mod == 2:
                motions.append(LinearMotion(
                    velocity=rng.uniform(-0.4, 0.4, size=3) * [1, 1, 0.2]))
            else:
                motions.append(SpinMotion(omega=omega))
    else:
        raise ValueError(f"unknown preset {name!r}")
    return SceneSpec(gaussians, motions, [camera], t_min=t_min, t_max=t_max)
