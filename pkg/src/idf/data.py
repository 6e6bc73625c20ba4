"""Person records, the dataset manifest, and the procedural toy corpus.

Files are named ``<identity>_c<camera>_<frame>.png`` and listed in a
``manifest.txt`` next to them, one ``path,identity,camera,frame,original_height``
record per line (paths relative to the manifest directory).
"""

from __future__ import annotations

import colorsys
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage

from .errors import IngestionError, ParameterError, ProtocolError
from .image_core import TARGET_SIZE, load_and_resize

MANIFEST_NAME = "manifest.txt"
FILENAME_RE = re.compile(r"^(\d+)_c(\d+)_(\d+)\.\w+$")


@dataclass(frozen=True)
class PersonRecord:
    path: str
    identity: int
    camera: int
    frame: int
    original_height: int
    image: torch.Tensor | None = None

    def with_image(self, image: torch.Tensor) -> "PersonRecord":
        return replace(self, image=image)


def record_filename(identity: int, camera: int, frame: int, ext: str = "png") -> str:
    return f"{identity:04d}_c{camera}_{frame:06d}.{ext}"


def parse_filename(name: str) -> tuple[int, int, int]:
    m = FILENAME_RE.match(Path(name).name)
    if m is None:
        raise IngestionError(f"not a <identity>_c<camera>_<frame> file name: {name}")
    return int(m.group(1)), int(m.group(2)), int(m.group(3))


def write_manifest(records: list[PersonRecord], root: str | Path) -> Path:
    path = Path(root) / MANIFEST_NAME
    lines = [f"{r.path},{r.identity},{r.camera},{r.frame},{r.original_height}" for r in records]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(root: str | Path) -> list[PersonRecord]:
    root = Path(root)
    path = root / MANIFEST_NAME if root.is_dir() else root
    if not path.is_file():
        raise IngestionError(f"no dataset manifest at {path}")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) != 5:
            raise IngestionError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            ident, cam, frame, height = (int(p) for p in parts[1:])
        except ValueError as exc:
            raise IngestionError(f"{path}:{lineno}: {exc}") from exc
        records.append(PersonRecord(parts[0], ident, cam, frame, height))
    return records


def dataset_root(root: str | Path) -> Path:
    root = Path(root)
    return root if root.is_dir() else root.parent


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get("IDF_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def load_records(
    root: str | Path,
    records: list[PersonRecord] | None = None,
    size: tuple[int, int] = TARGET_SIZE,
) -> list[PersonRecord]:
    """Decode every record's file to a 3x256x128 image, then to ``size`` if different.

    Decoding runs on up to ``IDF_NUM_WORKERS`` threads; output order follows the input.
    """
    base = dataset_root(root)
    if records is None:
        records = read_manifest(root)

    def _load(rec: PersonRecord) -> PersonRecord:
        img = load_and_resize(base / rec.path)
        if tuple(size) != TARGET_SIZE:
            img = F.interpolate(img[None], size=tuple(size), mode="bilinear",
                                align_corners=False, antialias=True)[0].clamp(0, 1)
        return rec.with_image(img)

    workers = num_workers()
    if workers == 1:
        return [_load(r) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_load, records))


def stack_images(records: list[PersonRecord]) -> torch.Tensor:
    return torch.stack([r.image for r in records])


# ---------------------------------------------------------------------------
# toy corpus

PATTERNS = ("plain", "hstripes", "vstripes", "dot", "split")


@dataclass(frozen=True)
class IdentityLook:
    shirt: np.ndarray
    pants: np.ndarray
    hair: np.ndarray
    accent: np.ndarray
    pattern: str
    girth: float
    bag: bool


@dataclass(frozen=True)
class CameraLook:
    background: np.ndarray
    texture: str
    cast: np.ndarray
    gain: float


def _color(rng: np.random.Generator, sat=(0.5, 1.0), val=(0.45, 1.0)) -> np.ndarray:
    rgb = colorsys.hsv_to_rgb(rng.uniform(), rng.uniform(*sat), rng.uniform(*val))
    return np.array(rgb)


def identity_look(seed: int, identity: int) -> IdentityLook:
    rng = np.random.default_rng((seed, 0, identity))
    return IdentityLook(
        shirt=_color(rng),
        pants=_color(rng, sat=(0.2, 0.9), val=(0.3, 0.9)),
        hair=_color(rng, sat=(0.0, 0.6), val=(0.1, 0.6)),
        accent=_color(rng),
        pattern=PATTERNS[rng.integers(len(PATTERNS))],
        girth=float(rng.uniform(0.28, 0.42)),
        bag=bool(rng.uniform() < 0.5),
    )


def camera_look(seed: int, camera: int) -> CameraLook:
    rng = np.random.default_rng((seed, 1, camera))
    return CameraLook(
        background=_color(rng, sat=(0.0, 0.4), val=(0.4, 0.85)),
        texture=("noise", "checker", "gradient", "bricks")[rng.integers(4)],
        cast=rng.uniform(0.8, 1.2, size=3),
        gain=float(rng.uniform(0.95, 1.3)),
    )


def _background(cam: CameraLook, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    v, u = np.mgrid[0:h, 0:w] / np.array([h, w]).reshape(2, 1, 1)
    if cam.texture == "checker":
        tex = ((np.floor(u * 6) + np.floor(v * 12)) % 2) * 0.3 + 0.85
    elif cam.texture == "gradient":
        tex = 0.7 + 0.5 * v
    elif cam.texture == "bricks":
        tex = 0.85 + 0.3 * ((np.floor(v * 16) % 2) * (np.floor(u * 4 + 0.5 * (np.floor(v * 16) % 2)) % 2))
    else:
        tex = 0.9 + 0.2 * rng.uniform(size=(h, w))
    return np.clip(cam.background[None, None, :] * tex[..., None], 0, 1)


def render_person(look: IdentityLook, cam: CameraLook, height: int, rng: np.random.Generator) -> np.ndarray:
    """Render one sample as an HxWx3 float array in [0, 1] (before degradation)."""
    h, w = height, max(2, height // 2)
    img = _background(cam, h, w, rng)
    v, u = np.mgrid[0:h, 0:w] / np.array([h, w]).reshape(2, 1, 1)

    scale = rng.uniform(0.85, 1.0)
    cx = 0.5 + rng.uniform(-0.06, 0.06)
    top = 0.04 + rng.uniform(0, 0.06)
    girth = look.girth * scale * rng.uniform(0.93, 1.07)

    def paint(mask, color):
        img[mask] = color

    head_r = 0.09 * scale
    head_cy = top + head_r
    paint(((u - cx) / (head_r * 1.8)) ** 2 + ((v - head_cy) / head_r) ** 2 <= 1, np.array([0.85, 0.7, 0.6]))
    paint((((u - cx) / (head_r * 1.8)) ** 2 + ((v - head_cy) / head_r) ** 2 <= 1) & (v < head_cy - 0.3 * head_r), look.hair)

    t0, t1 = head_cy + head_r, head_cy + head_r + 0.38 * scale
    torso = (np.abs(u - cx) <= girth) & (v >= t0) & (v <= t1)
    paint(torso, look.shirt)
    if look.pattern == "hstripes":
        paint(torso & (np.floor((v - t0) * 40) % 2 == 0), look.accent)
    elif look.pattern == "vstripes":
        paint(torso & (np.floor((u - cx) * 30) % 2 == 0), look.accent)
    elif look.pattern == "dot":
        paint(((u - cx) / girth) ** 2 + ((v - (t0 + t1) / 2) / (0.1 * scale)) ** 2 <= 0.3, look.accent)
    elif look.pattern == "split":
        paint(torso & (u > cx), look.accent)

    legs = (np.abs(np.abs(u - cx) - girth * 0.45) <= girth * 0.4) & (v > t1) & (v <= min(t1 + 0.45 * scale, 0.98))
    paint(legs, look.pants)
    if look.bag:
        side = 1 if rng.uniform() < 0.5 else -1
        bx = cx + side * (girth + 0.07)
        paint((np.abs(u - bx) <= 0.07) & (np.abs(v - (t0 + t1) / 2 - 0.05) <= 0.08), look.accent * 0.6)

    img = img * cam.cast[None, None, :] * cam.gain * rng.uniform(0.9, 1.1)
    img = img + rng.normal(0, 0.02, size=img.shape)
    return np.clip(img, 0, 1)


def synthesize(
    out_dir: str | Path,
    n_identities: int,
    images_per_identity: int,
    cameras: int,
    seed: int = 0,
    gamma_range: tuple[float, float] = (2.0, 5.0),
    height_range: tuple[int, int] = (60, 320),
) -> list[PersonRecord]:
    """Render the toy corpus and write it plus its manifest to ``out_dir``.

    ``images_per_identity`` images are produced for every (identity, camera) pair.
    """
    if n_identities < 2:
        raise ParameterError("n_identities must be >= 2")
    if cameras < 2:
        raise ProtocolError("cameras must be >= 2: cross-camera evaluation needs at least two views")
    if images_per_identity < 1:
        raise ParameterError("images_per_identity must be >= 1")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IngestionError(f"cannot create dataset directory {out}: {exc}") from exc

    cams = [camera_look(seed, c) for c in range(1, cameras + 1)]
    records = []
    for ident in range(n_identities):
        look = identity_look(seed, ident)
        for c, cam in enumerate(cams, start=1):
            for k in range(images_per_identity):
                rng = np.random.default_rng((seed, 2, ident, c, k))
                height = int(rng.integers(height_range[0], height_range[1] + 1))
                clean = render_person(look, cam, height, rng)
                gamma = rng.uniform(*gamma_range)
                dark = np.clip(np.floor(clean ** gamma * 255 + 0.5), 0, 255).astype(np.uint8)
                frame = c * 1000 + k
                name = record_filename(ident, c, frame)
                try:
                    PILImage.fromarray(dark).save(out / name, format="PNG")
                except OSError as exc:
                    raise IngestionError(f"cannot write {out / name}: {exc}") from exc
                records.append(PersonRecord(name, ident, c, frame, height))
    write_manifest(records, out)
    return records
