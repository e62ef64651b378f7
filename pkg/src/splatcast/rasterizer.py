"""Forward-only CPU splat rasterizer.

Each Gaussian is projected to screen space with the standard EWA
linearization: the 2D covariance is J W Sigma W^T J^T where W is the
world-to-camera rotation and J the Jacobian of perspective projection at the
camera-space mean.  Splats are composited front to back per pixel; a splat's
footprint is truncated outside its 3-sigma ellipse and a pixel stops
accumulating once its transmittance drops below 1e-4.

The renderer is deterministic by construction: splats are sorted by depth with
ties broken by input index, and pixels accumulate in a fixed order.  It is not
differentiable; the forecasting pipeline is supervised on trajectories, and
rendering is used for evaluation only.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import Camera

NEAR_PLANE = 0.01
COV2D_FLOOR = 0.3          # anti-aliasing floor added to the screen covariance
CUTOFF_MAHALANOBIS = 9.0   # 3-sigma ellipse
MIN_TRANSMITTANCE = 1e-4


@dataclass
class Image:
    """RGB image, float32 channels in [0, 1], row-major (height, width, 3)."""

    rgb: np.ndarray

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float32)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got {self.rgb.shape}")

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]


@dataclass
class Splat2D:
    mean2d: np.ndarray    # (2,) pixel coordinates (x, y)
    cov2d: np.ndarray     # (2, 2) symmetric positive definite after flooring
    depth: float          # camera-space z
    color: np.ndarray     # (3,)
    opacity: float        # (0, 1)


def project(mu: np.ndarray, q: np.ndarray, log_scale: np.ndarray,
            opacity: float, color: np.ndarray, cam: Camera) -> Splat2D | None:
    """EWA-project one Gaussian; returns None when culled by the near plane."""
    from .scene import covariance

    p_cam = cam.rotation @ np.asarray(mu, dtype=np.float64) + cam.translation
    z = p_cam[2]
    if z <= NEAR_PLANE:
        return None
    x, y = p_cam[0], p_cam[1]
    mean2d = np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])
    jac = np.array([
        [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
        [0.0, cam.fy / z, -cam.fy * y / (z * z)],
    ])
    jw = jac @ cam.rotation
    cov2d = jw @ covariance(q, log_scale) @ jw.T + COV2D_FLOOR * np.eye(2)
    return Splat2D(mean2d, cov2d, float(z), np.asarray(color, dtype=np.float64),
                   float(opacity))


def render(states: np.ndarray, colors: np.ndarray, opacities: np.ndarray,
           cam: Camera, return_weight_sum: bool = False):
    """Composite Gaussians into an image, front to back.

    ``states`` is (M, 10) rows of (mu, q, log_scale); quaternions are
    renormalized here, at the point of consumption.  ``colors`` is (M, 3) and
    ``opacities`` (M,) of values in (0, 1).
    """
    states = np.asarray(states, dtype=np.float64).reshape(-1, 10)
    h, w = cam.height, cam.width
    color_buf = np.zeros((h, w, 3))
    transmittance = np.ones((h, w))

    splats = []
    for i in range(states.shape[0]):
        s = project(states[i, 0:3], states[i, 3:7], states[i, 7:10],
                    float(opacities[i]), colors[i], cam)
        if s is not None:
            splats.append(s)
    # stable sort: equal depths keep input (gaussian index) order
    order = np.argsort([s.depth for s in splats], kind="stable")

    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    for idx in order:
        s = splats[idx]
        a, b_, c = s.cov2d[0, 0], s.cov2d[0, 1], s.cov2d[1, 1]
        det = a * c - b_ * b_
        radius = 3.0 * np.sqrt(max(a, c))
        x0 = max(int(np.floor(s.mean2d[0] - radius)), 0)
        x1 = min(int(np.ceil(s.mean2d[0] + radius)) + 1, w)
        y0 = max(int(np.floor(s.mean2d[1] - radius)), 0)
        y1 = min(int(np.ceil(s.mean2d[1] + radius)) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        dx = xs[x0:x1] - s.mean2d[0]
        dy = ys[y0:y1] - s.mean2d[1]
        # Mahalanobis distance under the inverse 2x2 covariance
        d = (c * dx[None, :] ** 2 - 2 * b_ * dy[:, None] * dx[None, :]
             + a * dy[:, None] ** 2) / det
        alpha = np.where(d <= CUTOFF_MAHALANOBIS,
                         s.opacity * np.exp(-0.5 * d), 0.0)
        t_patch = transmittance[y0:y1, x0:x1]
        active = t_patch >= MIN_TRANSMITTANCE
        contrib = np.where(active, t_patch * alpha, 0.0)
        color_buf[y0:y1, x0:x1] += contrib[:, :, None] * s.color[None, None, :]
        transmittance[y0:y1, x0:x1] = np.where(active, t_patch * (1 - alpha), t_patch)

    image = Image(np.clip(color_buf, 0.0, 1.0).astype(np.float32))
    if return_weight_sum:
        return image, 1.0 - transmittance
    return image


# ---- PPM I/O -----------------------------------------------------------------


def write_ppm(image: Image, path):
    """Binary PPM (P6, maxval 255); quantization is bit-exact reproducible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    quantized = np.clip(np.round(image.rgb.astype(np.float64) * 255.0), 0, 255)
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    path.write_bytes(header + quantized.astype(np.uint8).tobytes())


def read_ppm(path) -> Image:
    buf = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos] in b" \t\r\n":
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos] not in b" \t\r\n":
            pos += 1
        fields.append(buf[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos)
    return Image(data.reshape(h, w, 3).astype(np.float32) / maxval)
