"""Labels, calibration, synthetic scenes, and dataset I/O.

Labels follow the KITTI object-detection text format (15+ whitespace
separated columns per object).  Synthetic scenes place boxes of roughly
car-like dimensions on a flat ground plane and derive their 2D boxes by
projecting the eight corners of the yawed 3D box.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, ParseError
from .geometry import CameraIntrinsics, project_to_image


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned 2D box in pixels, corners as left/top/right/bottom."""

    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        if self.right <= self.left or self.bottom <= self.top:
            raise DomainError(f"degenerate box {self.as_tuple()}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox2D":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def center(self) -> tuple[float, float]:
        return ((self.left + self.right) / 2.0, (self.top + self.bottom) / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)


@dataclass
class ObjectLabel:
    """One annotated object.

    dims are (height, width, length) in meters; location is the object
    center in the camera frame (KITTI files store the bottom-face center,
    which is kept verbatim when parsing).
    """

    category: str
    bbox: BBox2D
    dims: tuple[float, float, float]
    location: tuple[float, float, float]
    yaw: float
    truncated: float = 0.0
    occluded: int = 0
    alpha: float = 0.0


@dataclass
class Scene:
    image_size: tuple[int, int]
    intrinsics: CameraIntrinsics
    objects: list[ObjectLabel] = field(default_factory=list)


def usable_objects(scene: Scene, categories=("Car",)) -> list[ObjectLabel]:
    """Objects suitable for clustering/training: matching category, in
    front of the camera, with positive dimensions and a nonempty box."""
    keep = []
    for obj in scene.objects:
        if categories is not None and obj.category not in categories:
            continue
        if obj.location[2] <= 0:
            continue
        if min(obj.dims) <= 0:
            continue
        keep.append(obj)
    return keep


# ---------------------------------------------------------------------------
# KITTI text formats


def parse_kitti_label(text: str) -> list[ObjectLabel]:
    """Parse KITTI label text, one object per non-empty line.

    Column order: type, truncated, occluded, alpha, bbox (l t r b),
    dims (h w l), location (x y z), rotation_y.  Extra columns (score)
    are ignored.
    """
    objects = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < 15:
            raise ParseError(f"expected >= 15 fields, got {len(fields)}", line=lineno)
        try:
            vals = [float(f) for f in fields[1:15]]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        try:
            box = BBox2D(vals[3], vals[4], vals[5], vals[6])
        except DomainError as exc:
            raise ParseError(str(exc), line=lineno) from None
        objects.append(
            ObjectLabel(
                category=fields[0],
                truncated=vals[0],
                occluded=int(vals[1]),
                alpha=vals[2],
                bbox=box,
                dims=(vals[7], vals[8], vals[9]),
                location=(vals[10], vals[11], vals[12]),
                yaw=vals[13],
            )
        )
    return objects


def format_kitti_label(objects) -> str:
    """Serialize objects back to KITTI label text (inverse of parsing)."""
    lines = []
    for o in objects:
        nums = (
            o.truncated,
            float(o.occluded),
            o.alpha,
            *o.bbox.as_tuple(),
            *o.dims,
            *o.location,
            o.yaw,
        )
        lines.append(o.category + " " + " ".join(f"{v:.6f}" for v in nums))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_kitti_calib(text: str) -> CameraIntrinsics:
    """Extract pinhole intrinsics from the P2 projection matrix."""
    for line in text.splitlines():
        if not line.startswith("P2:"):
            continue
        parts = line.split()[1:]
        if len(parts) != 12:
            raise ParseError(f"P2 needs 12 numbers, got {len(parts)}")
        try:
            m = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"P2: {exc}") from None
        return CameraIntrinsics(fx=m[0], fy=m[5], cx=m[2], cy=m[6])
    raise ParseError("no P2 line found")


def format_kitti_calib(intr: CameraIntrinsics, image_size=None) -> str:
    m = [intr.fx, 0.0, intr.cx, 0.0, 0.0, intr.fy, intr.cy, 0.0, 0.0, 0.0, 1.0, 0.0]
    text = "P2: " + " ".join(f"{v:.6f}" for v in m) + "\n"
    if image_size is not None:
        text += f"S2: {image_size[0]} {image_size[1]}\n"
    return text


def parse_image_size(text: str, default=(1242, 375)) -> tuple[int, int]:
    """Read the optional S2 size line written by this package."""
    for line in text.splitlines():
        if line.startswith("S2:"):
            w, h = line.split()[1:3]
            return (int(w), int(h))
    return default


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass
class SynthConfig:
    """Sampling ranges for ground-plane scene generation.

    Defaults mirror common KITTI scales: 1242x375 images, camera 1.65 m
    above ground, car-sized boxes 5..80 m ahead.
    """

    image_size: tuple[int, int] = (1242, 375)
    fx: float = 721.5
    fy: float = 721.5
    cx: float = 609.6
    cy: float = 172.9
    camera_height: float = 1.65
    z_range: tuple[float, float] = (5.0, 80.0)
    x_range: tuple[float, float] = (-20.0, 20.0)
    count_range: tuple[int, int] = (2, 6)
    dim_means: tuple[float, float, float] = (1.5, 1.6, 3.9)
    dim_spreads: tuple[float, float, float] = (0.08, 0.08, 0.2)
    dim_clip_frac: float = 0.3
    # "uniform" draws z flat over z_range; "near_heavy" favors close
    # objects with density falling linearly to zero at z_range[1].
    z_sampling: str = "uniform"
    category: str = "Car"

    def __post_init__(self):
        if self.z_range[0] >= self.z_range[1] or self.z_range[0] <= 0:
            raise ConfigError(f"bad z_range {self.z_range}")
        if self.x_range[0] >= self.x_range[1]:
            raise ConfigError(f"bad x_range {self.x_range}")
        if self.count_range[0] > self.count_range[1] or self.count_range[0] < 0:
            raise ConfigError(f"bad count_range {self.count_range}")
        if min(self.dim_means) <= 0:
            raise ConfigError(f"bad dim_means {self.dim_means}")
        if self.z_sampling not in ("uniform", "near_heavy"):
            raise ConfigError(f"unknown z_sampling {self.z_sampling!r}")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy)


def box_corners_3d(location, dims, yaw) -> np.ndarray:
    """The 8 corners of a yawed 3D box, (8, 3), camera frame.

    The box is centered at `location`; in the object frame x spans the
    length, y the height (down), z the width, rotated about y by `yaw`.
    """
    h, w, l = dims
    dx = np.array([+l, +l, +l, +l, -l, -l, -l, -l]) / 2.0
    dy = np.array([+h, +h, -h, -h, +h, +h, -h, -h]) / 2.0
    dz = np.array([+w, -w, +w, -w, +w, -w, +w, -w]) / 2.0
    c, s = math.cos(yaw), math.sin(yaw)
    x = c * dx + s * dz
    z = -s * dx + c * dz
    return np.stack([x, dy, z], axis=1) + np.asarray(location, dtype=float)


def generate_synthetic_scene(rng_seed: int, config: SynthConfig | None = None) -> Scene:
    """Deterministic ground-plane scene for a given seed.

    Objects rest on the ground (center at camera_height - h/2 below the
    horizon, y down); their 2D box is the axis-aligned hull of the eight
    projected 3D corners, clamped to the image.  Samples whose center
    projects outside the image or whose corners reach behind the camera
    are rejected and redrawn.
    """
    cfg = config if config is not None else SynthConfig()
    rng = np.random.default_rng(rng_seed)
    intr = cfg.intrinsics
    img_w, img_h = cfg.image_size
    count = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))

    objects = []
    for _ in range(count):
        for _attempt in range(1000):
            if cfg.z_sampling == "near_heavy":
                z0, z1 = cfg.z_range
                z = z0 + (z1 - z0) * (1.0 - math.sqrt(rng.uniform()))
            else:
                z = rng.uniform(*cfg.z_range)
            x = rng.uniform(*cfg.x_range)
            dims = []
            for mean, spread in zip(cfg.dim_means, cfg.dim_spreads):
                lo, hi = mean * (1 - cfg.dim_clip_frac), mean * (1 + cfg.dim_clip_frac)
                dims.append(float(np.clip(rng.normal(mean, spread), lo, hi)))
            dims = tuple(dims)
            yaw = rng.uniform(-math.pi, math.pi)
            y = cfg.camera_height - dims[0] / 2.0
            location = (x, y, z)

            corners = box_corners_3d(location, dims, yaw)
            if np.any(corners[:, 2] <= 1e-6):
                continue
            u = intr.fx * corners[:, 0] / corners[:, 2] + intr.cx
            v = intr.fy * corners[:, 1] / corners[:, 2] + intr.cy
            uc, vc = project_to_image(intr, location)
            if not (1.0 <= uc <= img_w - 1.0 and 1.0 <= vc <= img_h - 1.0):
                continue
            left = max(float(u.min()), 0.0)
            right = min(float(u.max()), float(img_w))
            top = max(float(v.min()), 0.0)
            bottom = min(float(v.max()), float(img_h))
            if right - left < 1e-6 or bottom - top < 1e-6:
                continue
            alpha = yaw - math.atan2(x, z)
            objects.append(
                ObjectLabel(
                    category=cfg.category,
                    bbox=BBox2D(left, top, right, bottom),
                    dims=dims,
                    location=location,
                    yaw=yaw,
                    alpha=alpha,
                )
            )
            break
        else:
            raise ConfigError("could not place an object; sampling ranges too tight")

    return Scene(image_size=cfg.image_size, intrinsics=intr, objects=objects)


def letterbox_scene(scene: Scene, size) -> Scene:
    """Rescale a scene into a `size` canvas, preserving aspect ratio.

    Boxes and intrinsics are transformed consistently, so projection and
    back-projection remain exact in the letterboxed frame.
    """
    if isinstance(size, int):
        out_w = out_h = size
    else:
        out_w, out_h = size
    w, h = scene.image_size
    s = min(out_w / w, out_h / h)
    ox = (out_w - s * w) / 2.0
    oy = (out_h - s * h) / 2.0
    intr = scene.intrinsics
    new_intr = CameraIntrinsics(intr.fx * s, intr.fy * s, intr.cx * s + ox, intr.cy * s + oy)
    new_objects = []
    for o in scene.objects:
        b = o.bbox
        nb = BBox2D(b.left * s + ox, b.top * s + oy, b.right * s + ox, b.bottom * s + oy)
        new_objects.append(replace(o, bbox=nb))
    return Scene(image_size=(out_w, out_h), intrinsics=new_intr, objects=new_objects)


def object_intensity(obj: ObjectLabel) -> float:
    """Deterministic per-object paint value in [0.6, 1.0].

    Hashed from the 3D location so repeated renders agree bit-for-bit
    while overlapping objects stay distinguishable.
    """
    key = struct.pack("<3d", *obj.location)
    h = zlib.crc32(key) & 0xFFFFFF
    return 0.6 + 0.4 * (h / float(0xFFFFFF))


def _axis_coverage(lo: float, hi: float, n: int) -> tuple[int, int, np.ndarray]:
    """Per-pixel coverage of the interval [lo, hi] along one axis."""
    lo = max(lo, 0.0)
    hi = min(hi, float(n))
    if hi <= lo:
        return 0, 0, np.zeros(0)
    i0 = int(math.floor(lo))
    i1 = min(int(math.ceil(hi)), n)
    idx = np.arange(i0, i1, dtype=float)
    cov = np.minimum(hi, idx + 1.0) - np.maximum(lo, idx)
    return i0, i1, np.clip(cov, 0.0, 1.0)


def render_scene(scene: Scene, canvas_size=None) -> np.ndarray:
    """Grayscale render: each box a filled rectangle, far objects first.

    Boxes are scaled from scene image coordinates to the canvas; edge
    pixels carry fractional coverage.  Returns (rows, cols) in [0, 1].
    """
    if canvas_size is None:
        canvas_size = scene.image_size
    cw, ch = canvas_size
    sx = cw / scene.image_size[0]
    sy = ch / scene.image_size[1]
    canvas = np.zeros((ch, cw), dtype=float)
    for obj in sorted(scene.objects, key=lambda o: -o.location[2]):
        b = obj.bbox
        x0, x1, cov_x = _axis_coverage(b.left * sx, b.right * sx, cw)
        y0, y1, cov_y = _axis_coverage(b.top * sy, b.bottom * sy, ch)
        if len(cov_x) == 0 or len(cov_y) == 0:
            continue
        alpha = cov_y[:, None] * cov_x[None, :]
        tile = canvas[y0:y1, x0:x1]
        canvas[y0:y1, x0:x1] = tile * (1.0 - alpha) + object_intensity(obj) * alpha
    return canvas


# ---------------------------------------------------------------------------
# Portable graymap + dataset directories


def format_pgm(image: np.ndarray) -> str:
    """ASCII PGM (P2) with 255 gray levels."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    levels = np.round(img * 255).astype(int)
    lines = [f"P2", f"{img.shape[1]} {img.shape[0]}", "255"]
    for row in levels:
        lines.append(" ".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_pgm(text: str) -> np.ndarray:
    tokens = []
    for line in text.splitlines():
        body = line.split("#", 1)[0]
        tokens.extend(body.split())
    if not tokens or tokens[0] != "P2":
        raise ParseError("not an ASCII PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array([int(t) for t in tokens[4 : 4 + w * h]], dtype=float)
    if len(vals) != w * h:
        raise ParseError("truncated PGM data")
    return vals.reshape(h, w) / maxval


def save_dataset(root, scenes, images=False, canvas_size=None):
    """Write scenes as one label + calib (+ optional PGM) file per frame."""
    root = Path(root)
    label_dir = root / "label_2"
    calib_dir = root / "calib"
    label_dir.mkdir(parents=True, exist_ok=True)
    calib_dir.mkdir(parents=True, exist_ok=True)
    if images:
        image_dir = root / "image_2"
        image_dir.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(scenes):
        stem = f"{i:06d}"
        (label_dir / f"{stem}.txt").write_text(format_kitti_label(scene.objects))
        (calib_dir / f"{stem}.txt").write_text(
            format_kitti_calib(scene.intrinsics, scene.image_size)
        )
        if images:
            (image_dir / f"{stem}.pgm").write_text(format_pgm(render_scene(scene)))


def load_dataset(labels_dir, calib_dir, frames=None, default_image_size=(1242, 375)) -> list[Scene]:
    """Load scenes from per-frame label and calib files.

    `frames` is an optional explicit list of frame stems; by default all
    label files present are used, sorted by name.
    """
    labels_dir = Path(labels_dir)
    calib_dir = Path(calib_dir)
    if frames is None:
        frames = sorted(p.stem for p in labels_dir.glob("*.txt"))
    scenes = []
    for stem in frames:
        label_path = labels_dir / f"{stem}.txt"
        calib_path = calib_dir / f"{stem}.txt"
        if not label_path.exists():
            raise ParseError(f"missing label file {label_path}")
        if not calib_path.exists():
            raise ParseError(f"missing calib file {calib_path}")
        calib_text = calib_path.read_text()
        scenes.append(
            Scene(
                image_size=parse_image_size(calib_text, default_image_size),
                intrinsics=parse_kitti_calib(calib_text),
                objects=parse_kitti_label(label_path.read_text()),
            )
        )
    return scenes


def read_frame_list(path) -> list[str]:
    """Frame stems from a text file, one per line, blanks ignored."""
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
