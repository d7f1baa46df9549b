"""Scene I/O, tiling, normalization, augmentation and synthetic scenes.

Images are grayscale 8- or 16-bit rasters, masks are boolean rasters of the
same size. Everything takes an explicit seed; per-scene seeds are derived
from (global seed, scene index) so serial and parallel runs agree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .postprocess import TargetRegion, cluster8


class DataError(ValueError):
    pass


@dataclass
class Scene:
    image: np.ndarray
    mask: np.ndarray
    id: str

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise DataError("image and mask dimensions differ")


# ---------------------------------------------------------------------------
# PNG + manifest I/O


def save_image(path, image: np.ndarray):
    image = np.asarray(image)
    if image.dtype == np.uint8:
        Image.fromarray(image, mode="L").save(path)
    elif image.dtype == np.uint16:
        Image.fromarray(image.astype("<u2")).save(path)
    else:
        raise DataError(f"unsupported raster dtype {image.dtype}")


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.dtype == np.int32:  # Pillow reads I;16 as 32-bit
        arr = arr.astype(np.uint16)
    if arr.ndim != 2:
        raise DataError(f"{path}: expected single-channel grayscale")
    return arr


def save_mask(path, mask: np.ndarray):
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def load_mask(path) -> np.ndarray:
    return load_image(path) > 127


def save_prob_map(path, prob: np.ndarray):
    """Probabilities as 16-bit PNG, value = round(p * 65535)."""
    q = np.round(np.clip(prob, 0.0, 1.0) * 65535.0).astype(np.uint16)
    save_image(path, q)


def load_prob_map(path) -> np.ndarray:
    arr = load_image(path)
    return arr.astype(np.float64) / 65535.0


def write_manifest(path, entries: list[dict]):
    Path(path).write_text(json.dumps(entries, indent=2) + "\n")


def read_manifest(path) -> list[dict]:
    try:
        entries = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    for e in entries:
        for key in ("id", "image_path", "mask_path"):
            if key not in e:
                raise DataError(f"manifest entry missing '{key}'")
    return entries


def load_scene(entry: dict, root: Path | None = None) -> Scene:
    root = Path(root) if root else Path(".")
    return Scene(image=load_image(root / entry["image_path"]),
                 mask=load_mask(root / entry["mask_path"]),
                 id=entry["id"])


def save_scene_files(scene: Scene, out_dir: Path, split: str = "train") -> dict:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    img_rel = f"images/{scene.id}.png"
    mask_rel = f"masks/{scene.id}.png"
    save_image(out_dir / img_rel, scene.image)
    save_mask(out_dir / mask_rel, scene.mask)
    return {"id": scene.id, "image_path": img_rel, "mask_path": mask_rel,
            "split": split}


# ---------------------------------------------------------------------------
# Tiling


@dataclass
class TileSet:
    source_shape: tuple
    tile_size: int
    pad_bottom: int
    pad_right: int
    tiles: list  # (origin_row, origin_col, raster)


def tile(raster: np.ndarray, tile_size: int = 1024) -> TileSet:
    """Cut into a non-overlapping grid, zero-padding the right/bottom edge."""
    if tile_size < 32:
        raise DataError("tile_size must be >= 32")
    h, w = raster.shape
    nh = -(-h // tile_size)
    nw = -(-w // tile_size)
    pad_b = nh * tile_size - h
    pad_r = nw * tile_size - w
    padded = np.pad(raster, ((0, pad_b), (0, pad_r)))
    tiles = []
    for i in range(nh):
        for j in range(nw):
            r0, c0 = i * tile_size, j * tile_size
            tiles.append((r0, c0,
                          padded[r0:r0 + tile_size, c0:c0 + tile_size].copy()))
    return TileSet((h, w), tile_size, pad_b, pad_r, tiles)


def stitch(ts: TileSet, dtype=None) -> np.ndarray:
    h, w = ts.source_shape
    full = np.zeros((h + ts.pad_bottom, w + ts.pad_right),
                    dtype=dtype or ts.tiles[0][2].dtype)
    for r0, c0, t in ts.tiles:
        full[r0:r0 + ts.tile_size, c0:c0 + ts.tile_size] = t
    return full[:h, :w]


# ---------------------------------------------------------------------------
# Normalization and classical augmentation


def normalize(image: np.ndarray) -> np.ndarray:
    """Linear map of [min, max] to [0, 1]; constant rasters go to zero."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def classic_augment(scene: Scene, seed: int, blur_sigma: float = 0.5,
                    flip_prob: float = 0.5, blur_prob: float = 0.5) -> Scene:
    """Random horizontal/vertical flips (image and mask jointly) and a
    Gaussian blur on the image only."""
    rng = np.random.Generator(np.random.PCG64(seed))
    image, mask = scene.image, scene.mask
    if rng.random() < flip_prob:
        image, mask = image[:, ::-1], mask[:, ::-1]
    if rng.random() < flip_prob:
        image, mask = image[::-1, :], mask[::-1, :]
    if rng.random() < blur_prob:
        blurred = ndimage.gaussian_filter(image.astype(np.float64), blur_sigma,
                                          mode="nearest")
        image = np.clip(np.round(blurred), 0,
                        np.iinfo(scene.image.dtype).max).astype(scene.image.dtype)
    return Scene(np.ascontiguousarray(image), np.ascontiguousarray(mask), scene.id)


# ---------------------------------------------------------------------------
# Copy-rotate-resize-paste augmentation


@dataclass
class CrrpConfig:
    paste_count: int = 2
    scale_range: tuple = (0.8, 1.2)
    angles: tuple = (0, 90, 180, 270)
    margin: int = 4  # neighborhood window around the target bbox, pixels
    min_separation: int = 4
    max_retries: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.scale_range[0] <= 0:
            raise DataError("scale_range must be positive")
        if self.min_separation < 0:
            raise DataError("min_separation must be >= 0")


def _transform_window(img_win, mask_win, angle, scale):
    if angle % 90 == 0:
        k = (angle // 90) % 4
        img_win = np.rot90(img_win, k)
        mask_win = np.rot90(mask_win, k)
    else:
        img_win = ndimage.rotate(img_win, angle, reshape=True, order=1,
                                 mode="nearest")
        mask_win = ndimage.rotate(mask_win.astype(np.float64), angle,
                                  reshape=True, order=0, mode="constant") > 0.5
    if scale != 1.0:
        img_win = ndimage.zoom(img_win, scale, order=1, mode="nearest")
        mask_win = ndimage.zoom(mask_win.astype(np.float64), scale,
                                order=0, mode="constant") > 0.5
    return img_win, mask_win


def _boxes_separated(box_a, box_b, gap: int) -> bool:
    r0a, c0a, r1a, c1a = box_a
    r0b, c0b, r1b, c1b = box_b
    return (r1a + gap < r0b or r1b + gap < r0a
            or c1a + gap < c0b or c1b + gap < c0a)


def crrp(scene: Scene, regions: list[TargetRegion] | None,
         config: CrrpConfig | None = None, seed: int | None = None
         ) -> tuple[Scene, list[dict]]:
    """Copy a target with its neighborhood, rotate, rescale, and paste it
    into background, keeping clear of every existing target bounding box.

    Returns the augmented scene and a paste log; failed pastes leave the
    scene untouched and log a warning entry.
    """
    config = config or CrrpConfig()
    if regions is None:
        regions = cluster8(scene.mask)
    if not regions:
        raise DataError("crrp needs at least one target region in the scene")
    rng = np.random.Generator(np.random.PCG64(
        config.seed if seed is None else seed))

    image = scene.image.copy()
    mask = scene.mask.copy()
    h, w = image.shape
    occupied = [reg.bbox for reg in regions]
    log = []

    for paste_idx in range(config.paste_count):
        src_idx = int(rng.integers(len(regions)))
        reg = regions[src_idx]
        r0, c0, r1, c1 = reg.bbox
        m = config.margin
        wr0, wc0 = max(0, r0 - m), max(0, c0 - m)
        wr1, wc1 = min(h - 1, r1 + m), min(w - 1, c1 + m)
        img_win = scene.image[wr0:wr1 + 1, wc0:wc1 + 1].astype(np.float64)
        # Only the selected target's pixels travel with the window.
        mask_win = np.zeros_like(img_win, dtype=bool)
        for r, c in reg.pixels:
            mask_win[r - wr0, c - wc0] = True

        angle = int(rng.choice(config.angles))
        scale = float(rng.uniform(*config.scale_range))
        t_img, t_mask = _transform_window(img_win, mask_win, angle, scale)
        wh, ww = t_img.shape

        entry = {"paste": paste_idx, "source_region": src_idx,
                 "angle": angle, "scale": scale}
        if not t_mask.any() or wh > h or ww > w:
            entry.update(status="failed", reason="degenerate transform")
            log.append(entry)
            continue

        placed = False
        for _ in range(config.max_retries):
            dr = int(rng.integers(0, h - wh + 1))
            dc = int(rng.integers(0, w - ww + 1))
            rows, cols = np.nonzero(t_mask)
            dest_box = (dr + int(rows.min()), dc + int(cols.min()),
                        dr + int(rows.max()), dc + int(cols.max()))
            win_box = (dr, dc, dr + wh - 1, dc + ww - 1)
            # The whole pasted window must stay off existing targets so the
            # copied background cannot overwrite their pixels.
            if all(_boxes_separated(dest_box, box, config.min_separation)
                   and _boxes_separated(win_box, box, 0)
                   for box in occupied):
                dst_img = image[dr:dr + wh, dc:dc + ww]
                np.copyto(dst_img, np.clip(np.round(t_img), 0,
                                           np.iinfo(image.dtype).max
                                           ).astype(image.dtype))
                mask[dr:dr + wh, dc:dc + ww] |= t_mask
                occupied.append(dest_box)
                entry.update(status="ok", dest=[dr, dc], dest_bbox=list(dest_box))
                placed = True
                break
        if not placed:
            entry.update(status="failed", reason="no feasible placement")
        log.append(entry)

    return Scene(image, mask, scene.id), log


# ---------------------------------------------------------------------------
# Synthetic scene generation


@dataclass
class TargetSpec:
    count_range: tuple = (1, 4)
    sigma_range: tuple = (0.8, 2.0)
    snr_range: tuple = (8.0, 20.0)  # peak amplitude in noise-sigma units
    min_separation: int = 8


@dataclass
class NoiseSpec:
    base_level: float = 60.0
    noise_sigma: float = 6.0
    clutter_amplitude: float = 15.0
    clutter_scale: float = 8.0


def scene_seed(global_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((global_seed, index))))


def _make_scene(size: int, targets: TargetSpec, noise: NoiseSpec,
                rng: np.random.Generator, scene_id: str) -> Scene:
    base = np.full((size, size), noise.base_level)
    clutter = ndimage.gaussian_filter(rng.standard_normal((size, size)),
                                      noise.clutter_scale, mode="wrap")
    if clutter.std() > 0:
        clutter = clutter / clutter.std() * noise.clutter_amplitude
    img = base + clutter + rng.standard_normal((size, size)) * noise.noise_sigma

    mask = np.zeros((size, size), dtype=bool)
    count = int(rng.integers(targets.count_range[0], targets.count_range[1] + 1))
    centers = []
    margin = 4
    for _ in range(count):
        for _ in range(200):
            r = rng.uniform(margin, size - margin)
            c = rng.uniform(margin, size - margin)
            if all(np.hypot(r - rr, c - cc) >= targets.min_separation
                   for rr, cc in centers):
                centers.append((r, c))
                break
    for r0, c0 in centers:
        sigma = rng.uniform(*targets.sigma_range)
        amp = rng.uniform(*targets.snr_range) * noise.noise_sigma
        rr, cc = np.mgrid[0:size, 0:size]
        blob = amp * np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * sigma ** 2))
        img += blob
        mask |= blob >= 0.5 * amp

    image = np.clip(np.round(img), 0, 255).astype(np.uint8)
    return Scene(image, mask, scene_id)


def synth_scenes(count: int, size: int = 64,
                 targets: TargetSpec | None = None,
                 noise: NoiseSpec | None = None,
                 seed: int = 0, id_prefix: str = "scene") -> list[Scene]:
    """Noise + low-frequency clutter backgrounds with Gaussian-blob targets
    and exact joint masks. Bit-identical for identical seeds."""
    if size < 32:
        raise DataError("size must be >= 32")
    targets = targets or TargetSpec()
    noise = noise or NoiseSpec()
    return [_make_scene(size, targets, noise, scene_seed(seed, i),
                        f"{id_prefix}_{i:04d}")
            for i in range(count)]
