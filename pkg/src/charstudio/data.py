"""Dataset ingestion, bicubic resampling, and silhouette/color pair tooling.

On-disk format is 8-bit PNG laid out as ``root/<ClassName>/*.png``.  Pixel
values map to [-1, 1] via v8 = round((v + 1) * 127.5); quantization happens
exactly once, at write time, so decode -> encode round-trips are bit exact.

The synthetic corpus stands in for the proprietary character sets: simple
articulated figures (head, torso, limbs) with class-dependent proportions,
rendered as black-on-white silhouettes plus flat-colored variants.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import Rng

log = logging.getLogger(__name__)

CLASS_NAMES = ("Man", "Monster", "Woman")
SILHOUETTE_THRESHOLD = 0.95
LUMA = (0.299, 0.587, 0.114)


class DataError(ValueError):
    pass


# --------------------------------------------------------------------------
# pixel codecs
# --------------------------------------------------------------------------


def to_bytes(values: np.ndarray) -> np.ndarray:
    """[-1, 1] float -> uint8, the single quantization point of the pipeline."""
    return np.clip(np.round((values + 1.0) * 127.5), 0, 255).astype(np.uint8)


def to_floats(bytes_: np.ndarray) -> np.ndarray:
    return (bytes_.astype(np.float32) / 127.5) - 1.0


def encode_png(pixels: np.ndarray) -> bytes:
    """CHW float pixels in [-1, 1] -> PNG bytes (L for 1 channel, RGB for 3)."""
    arr = to_bytes(pixels)
    if arr.shape[0] == 1:
        img = Image.fromarray(arr[0], mode="L")
    elif arr.shape[0] == 3:
        img = Image.fromarray(np.moveaxis(arr, 0, 2), mode="RGB")
    else:
        raise DataError(f"cannot encode {arr.shape[0]}-channel image")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_png(source, channels: int = 3) -> np.ndarray:
    """PNG file path or bytes -> CHW float pixels in [-1, 1]."""
    img = Image.open(io.BytesIO(source) if isinstance(source, (bytes, bytearray)) else source)
    img = img.convert("RGB" if channels == 3 else "L")
    arr = np.asarray(img, dtype=np.uint8)
    if channels == 3:
        arr = np.moveaxis(arr, 2, 0)
    else:
        arr = arr[None, :, :]
    return to_floats(arr)


# --------------------------------------------------------------------------
# bicubic resampling (Catmull-Rom, a = -0.5, edge clamped)
# --------------------------------------------------------------------------


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    a = -0.5
    at = np.abs(t)
    inner = (a + 2) * at**3 - (a + 3) * at**2 + 1
    outer = a * at**3 - 5 * a * at**2 + 8 * a * at - 4 * a
    return np.where(at <= 1, inner, np.where(at < 2, outer, 0.0))


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic weights for one separable axis."""
    scale = n_in / n_out
    out_idx = np.arange(n_out, dtype=np.float64)
    src = (out_idx + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    # widen the kernel when minifying so it acts as a low-pass filter
    width = max(1.0, scale)
    support = int(np.ceil(2 * width))
    for tap in range(-support + 1, support + 1):
        idx = base + tap
        w = _cubic_kernel((src - idx) / width) / width
        np.add.at(mat, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), w)
    mat /= mat.sum(axis=1, keepdims=True)  # exact partition of unity
    return mat


def resample_bicubic(image: np.ndarray, target: int) -> np.ndarray:
    """Separable bicubic resample of a CHW image to target x target."""
    if target < 1:
        raise DataError(f"target size must be >= 1, got {target}")
    c, h, w = image.shape
    if (h, w) == (target, target):
        return image.copy()
    wr = _resample_matrix(h, target)
    wc = _resample_matrix(w, target)
    x = image.astype(np.float64)
    x = np.tensordot(wr, x, axes=(1, 1)).transpose(1, 0, 2)  # rows
    x = np.tensordot(x, wc, axes=(2, 1))  # cols
    return np.clip(x, -1.0, 1.0).astype(image.dtype)


# --------------------------------------------------------------------------
# records and datasets
# --------------------------------------------------------------------------


@dataclass
class ImageRecord:
    identifier: str
    label: int
    class_name: str
    pixels: np.ndarray  # CHW in [-1, 1]
    source_path: str = ""


@dataclass
class Dataset:
    records: list[ImageRecord]
    class_names: tuple[str, ...]
    resolution: int

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def images(self) -> np.ndarray:
        return np.stack([r.pixels for r in self.records])

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def label_histogram(self) -> dict[str, int]:
        counts = dict.fromkeys(self.class_names, 0)
        for r in self.records:
            counts[r.class_name] += 1
        return counts


def load_dataset(root, resolution: int, merge: bool = False, channels: int = 3) -> Dataset:
    """Decode every PNG under ``root/<ClassName>/``, resampled and scaled.

    Undecodable files are skipped with a logged warning; records come back in
    sorted-path order regardless of filesystem enumeration.
    """
    root = Path(root)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        # a flat directory of PNGs (e.g. sampler output) loads as one class
        if any(root.glob("*.png")):
            class_dirs = [root]
        else:
            raise DataError(f"no class directories under {root}")
    records: list[ImageRecord] = []
    skipped = 0
    for label, cdir in enumerate(class_dirs):
        for path in sorted(cdir.glob("*.png")):
            try:
                pixels = decode_png(path, channels)
            except Exception as err:  # noqa: BLE001 - any decode failure skips
                skipped += 1
                log.warning("skipping undecodable %s: %s", path, err)
                continue
            pixels = resample_bicubic(pixels, resolution)
            records.append(
                ImageRecord(
                    identifier=f"{cdir.name}/{path.stem}",
                    label=0 if merge else label,
                    class_name="merged" if merge else cdir.name,
                    pixels=pixels,
                    source_path=str(path),
                )
            )
    if not records:
        raise DataError(f"no decodable images under {root} ({skipped} skipped)")
    if skipped:
        log.warning("skipped %d undecodable file(s)", skipped)
    class_names = ("merged",) if merge else tuple(d.name for d in class_dirs)
    return Dataset(records, class_names, resolution)


# --------------------------------------------------------------------------
# silhouettes and pairs
# --------------------------------------------------------------------------


def silhouette_from_colored(image: np.ndarray, threshold: float = SILHOUETTE_THRESHOLD) -> np.ndarray:
    """Luminance-threshold a colored image into a {-1, +1} silhouette.

    Assumes the white-background convention: pixels darker than ``threshold``
    (luminance on [0, 1]) become figure (-1), the rest ground (+1).
    """
    if image.shape[0] != 3:
        raise DataError(f"expected a 3-channel image, got {image.shape}")
    unit = (image + 1.0) / 2.0
    lum = LUMA[0] * unit[0] + LUMA[1] * unit[1] + LUMA[2] * unit[2]
    return np.where(lum < threshold, -1.0, 1.0).astype(image.dtype)[None, :, :]


@dataclass
class PairRecord:
    identifier: str
    class_name: str
    silhouette_path: str
    colored_path: str


def make_pairs(colored_dir, out_dir, threshold: float = SILHOUETTE_THRESHOLD) -> Path:
    """Derive a silhouette for every colored image and write a manifest.

    Silhouettes land in ``out_dir/<ClassName>/`` mirroring the source names;
    the manifest (one tab-separated record per line: id, class, silhouette
    path, colored path) is rewritten deterministically, so reruns are
    byte-identical.
    """
    colored_dir = Path(colored_dir)
    out_dir = Path(out_dir)
    rows: list[PairRecord] = []
    seen: set[str] = set()
    for cdir in sorted(d for d in colored_dir.iterdir() if d.is_dir()):
        for path in sorted(cdir.glob("*.png")):
            identifier = f"{cdir.name}/{path.stem}"
            if identifier in seen:
                raise DataError(f"duplicate pair identifier {identifier}")
            seen.add(identifier)
            sil = silhouette_from_colored(decode_png(path, 3), threshold)
            sil_path = out_dir / cdir.name / f"{path.stem}.png"
            sil_path.parent.mkdir(parents=True, exist_ok=True)
            sil_path.write_bytes(encode_png(sil))
            rows.append(PairRecord(identifier, cdir.name, str(sil_path), str(path)))
    if not rows:
        raise DataError(f"no colored images under {colored_dir}")
    manifest = out_dir / "pairs.tsv"
    lines = [f"{r.identifier}\t{r.class_name}\t{r.silhouette_path}\t{r.colored_path}" for r in rows]
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_pairs(manifest_path, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Manifest -> (silhouettes (N,1,R,R), colored (N,3,R,R)) arrays."""
    sils, cols = [], []
    for line in Path(manifest_path).read_text().splitlines():
        if not line.strip():
            continue
        _, _, sil_path, col_path = line.split("\t")
        sils.append(resample_bicubic(decode_png(sil_path, 1), resolution))
        cols.append(resample_bicubic(decode_png(col_path, 3), resolution))
    if not sils:
        raise DataError(f"empty pair manifest {manifest_path}")
    return np.stack(sils), np.stack(cols)


# --------------------------------------------------------------------------
# synthetic toy corpus
# --------------------------------------------------------------------------


@dataclass
class SynthRecord:
    identifier: str
    class_name: str
    silhouette: np.ndarray  # (1, R, R) in {-1, +1}
    colored: np.ndarray  # (3, R, R) in [-1, 1]


def _figure_masks(kind: str, rng: Rng, res: int) -> dict[str, np.ndarray]:
    """Part masks for one articulated figure on a [0,1]^2 canvas."""
    ys, xs = np.meshgrid(
        (np.arange(res) + 0.5) / res, (np.arange(res) + 0.5) / res, indexing="ij"
    )

    def jitter(v, amount=0.12):
        return v * (1.0 + float(rng.uniform((), -amount, amount)))

    def ellipse(cx, cy, rx, ry):
        return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0

    def rect(cx, cy, hw, hh):
        return (np.abs(xs - cx) <= hw) & (np.abs(ys - cy) <= hh)

    cx = 0.5 + float(rng.uniform((), -0.04, 0.04))
    if kind == "Man":
        head_r = jitter(0.075)
        torso_w, torso_h = jitter(0.13), jitter(0.17)
        arm_w, leg_h = jitter(0.225), jitter(0.2)
        head_cy = 0.22
    elif kind == "Monster":
        head_r = jitter(0.115)
        torso_w, torso_h = jitter(0.175), jitter(0.15)
        arm_w, leg_h = jitter(0.28), jitter(0.13)
        head_cy = 0.26
    else:  # Woman
        head_r = jitter(0.062)
        torso_w, torso_h = jitter(0.105), jitter(0.19)
        arm_w, leg_h = jitter(0.19), jitter(0.21)
        head_cy = 0.21

    head = ellipse(cx, head_cy, head_r, head_r * 1.1)
    torso_cy = head_cy + head_r + torso_h + 0.02
    if kind == "Woman":
        # trapezoid torso, wider at the hips
        half = torso_w * (0.6 + 0.9 * np.clip((ys - (torso_cy - torso_h)) / (2 * torso_h), 0, 1))
        torso = (np.abs(xs - cx) <= half) & (np.abs(ys - torso_cy) <= torso_h)
    else:
        torso = rect(cx, torso_cy, torso_w, torso_h)
    arm_cy = torso_cy - torso_h * 0.55
    arms = rect(cx, arm_cy, arm_w, jitter(0.032))
    leg_top = torso_cy + torso_h
    leg_cy = min(leg_top + leg_h / 2, 0.93)
    leg_dx = torso_w * 0.5
    leg_hw = jitter(0.036)
    legs = rect(cx - leg_dx, leg_cy, leg_hw, leg_h / 2) | rect(cx + leg_dx, leg_cy, leg_hw, leg_h / 2)
    parts = {"head": head, "torso": torso, "arms": arms, "legs": legs}
    if kind == "Monster":
        horn_y = head_cy - head_r * 1.05
        horns = ellipse(cx - head_r * 0.8, horn_y, 0.025, 0.05) | ellipse(
            cx + head_r * 0.8, horn_y, 0.025, 0.05
        )
        parts["horns"] = horns
    return parts


_PALETTES = {
    "Man": {"head": (0.82, 0.64, 0.47), "torso": (0.25, 0.35, 0.62), "arms": (0.25, 0.35, 0.62), "legs": (0.27, 0.25, 0.24)},
    "Monster": {"head": (0.39, 0.59, 0.31), "torso": (0.33, 0.48, 0.26), "arms": (0.39, 0.59, 0.31), "legs": (0.30, 0.42, 0.24), "horns": (0.72, 0.68, 0.55)},
    "Woman": {"head": (0.85, 0.66, 0.50), "torso": (0.62, 0.27, 0.40), "arms": (0.85, 0.66, 0.50), "legs": (0.35, 0.28, 0.33)},
}


def synth_toy_corpus(n: int, classes=CLASS_NAMES, resolution: int = 64, seed: int = 0) -> list[SynthRecord]:
    """Procedural figure corpus, deterministic per seed, classes round-robin."""
    if n < 1:
        raise DataError(f"n must be >= 1, got {n}")
    records = []
    for i in range(n):
        kind = classes[i % len(classes)]
        rng = Rng(seed, stream=1000 + i)
        parts = _figure_masks(kind, rng, resolution)
        figure = np.zeros((resolution, resolution), dtype=bool)
        colored = np.ones((3, resolution, resolution), dtype=np.float32)  # white ground
        palette = _PALETTES[kind]
        for name, mask in parts.items():
            figure |= mask
            color = palette[name]
            tint = 1.0 + float(rng.uniform((), -0.08, 0.08))
            for ch in range(3):
                # palette is on [0, 1]; map to [-1, 1]
                colored[ch][mask] = np.float32(np.clip(color[ch] * tint, 0.02, 0.9) * 2.0 - 1.0)
        silhouette = np.where(figure, -1.0, 1.0).astype(np.float32)[None, :, :]
        records.append(SynthRecord(f"{kind}/fig_{i:05d}", kind, silhouette, colored))
    return records


def write_corpus(records: list[SynthRecord], out_dir) -> Path:
    """Write silhouettes/, colored/, and the pair manifest for a toy corpus."""
    out_dir = Path(out_dir)
    lines = []
    for r in records:
        stem = r.identifier.split("/")[-1]
        sil_path = out_dir / "silhouettes" / r.class_name / f"{stem}.png"
        col_path = out_dir / "colored" / r.class_name / f"{stem}.png"
        sil_path.parent.mkdir(parents=True, exist_ok=True)
        col_path.parent.mkdir(parents=True, exist_ok=True)
        sil_path.write_bytes(encode_png(r.silhouette))
        col_path.write_bytes(encode_png(r.colored))
        lines.append(f"{r.identifier}\t{r.class_name}\t{sil_path}\t{col_path}")
    manifest = out_dir / "pairs.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
