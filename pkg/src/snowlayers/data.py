"""Echogram and label I/O, augmentation, rasterization and a synthetic generator.

EGM1 layout (little endian)::

    b"EGM1" | rows u32 | cols u32 | channels u32 | float32 payload

The payload is row-major over ``(rows, cols, channels)``. In memory an
echogram is a grid of shape ``(1, channels, rows, cols)``.

Layer labels are kept as :class:`LayerSet` objects (CSV ``layer_id,column,row``)
and rasterized on demand; resampling a one-pixel-wide mask destroys it, so the
augmentation transforms labels analytically.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d, map_coordinates

MAGIC = b"EGM1"
HEADER = struct.Struct("<4sIII")
DEFAULT_METERS_PER_ROW = 0.025
DEFAULT_ALONG_TRACK_M = 14.5
SCALES = (0.25, 0.5, 0.75)


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- EGM1

def write_egm(path, grid) -> None:
    g = np.asarray(grid)
    if g.ndim == 2:
        g = g[None, None]
    elif g.ndim == 3:
        g = g[None]
    if g.ndim != 4 or g.shape[0] != 1:
        raise ValueError(f"expected a single echogram (1, channels, rows, cols), got {np.shape(grid)}")
    _, ch, rows, cols = g.shape
    if rows == 0 or cols == 0 or ch == 0:
        raise ValueError(f"degenerate echogram {rows}x{cols}x{ch}")
    if not np.all(np.isfinite(g)):
        raise ValueError("echogram contains non-finite values")
    payload = np.ascontiguousarray(g[0].transpose(1, 2, 0), dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, rows, cols, ch))
        f.write(payload)


def read_egm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header at byte {len(raw)} (need {HEADER.size} bytes)")
    magic, rows, cols, ch = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected 'EGM1'")
    if rows == 0 or cols == 0 or ch == 0:
        raise FormatError(f"{path}: degenerate dimensions {rows}x{cols}x{ch} at byte 4")
    need = HEADER.size + 4 * rows * cols * ch
    if len(raw) != need:
        raise FormatError(f"{path}: payload ends at byte {len(raw)}, expected {need}")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(rows, cols, ch)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite values in payload")
    return data.transpose(2, 0, 1)[None].astype(np.float64)


# ---------------------------------------------------------------- layers

@dataclass
class LayerSet:
    """Ordered layers, each a mapping column -> row (sub-pixel rows allowed)."""

    layers: list = field(default_factory=list)
    meters_per_row: float = DEFAULT_METERS_PER_ROW

    def __post_init__(self):
        self.layers = [{int(c): float(r) for c, r in layer.items()} for layer in self.layers if layer]
        self.layers.sort(key=lambda layer: np.mean(list(layer.values())))

    def __len__(self):
        return len(self.layers)

    def __eq__(self, other):
        return isinstance(other, LayerSet) and self.layers == other.layers

    def mean_rows(self) -> list[float]:
        return [float(np.mean(list(layer.values()))) for layer in self.layers]

    def to_rows(self, n_cols: int) -> np.ndarray:
        """Dense ``(n_layers, n_cols)`` row array with NaN where a layer is undefined."""
        out = np.full((len(self.layers), n_cols), np.nan)
        for j, layer in enumerate(self.layers):
            for c, r in layer.items():
                if 0 <= c < n_cols:
                    out[j, c] = r
        return out

    @classmethod
    def from_rows(cls, rows, meters_per_row=DEFAULT_METERS_PER_ROW) -> "LayerSet":
        rows = np.asarray(rows, dtype=np.float64)
        layers = [{c: float(r) for c, r in enumerate(line) if np.isfinite(r)} for line in rows]
        return cls(layers, meters_per_row)


def write_layers_csv(path, layers: LayerSet) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["layer_id", "column", "row"])
        for j, layer in enumerate(layers.layers):
            for c in sorted(layer):
                w.writerow([j, c, repr(layer[c])])


def read_layers_csv(path, meters_per_row=DEFAULT_METERS_PER_ROW) -> LayerSet:
    grouped: dict[int, dict[int, float]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["layer_id", "column", "row"]:
            raise FormatError(f"{path}: header must be layer_id,column,row, got {reader.fieldnames}")
        for line, rec in enumerate(reader, start=2):
            try:
                layer, col, row = int(rec["layer_id"]), int(rec["column"]), float(rec["row"])
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{line}: {exc}") from None
            if col in grouped.setdefault(layer, {}):
                raise FormatError(f"{path}:{line}: layer {layer} has two rows in column {col}")
            grouped[layer][col] = row
    return LayerSet([grouped[k] for k in sorted(grouped)], meters_per_row)


def write_meta(path, meters_per_row=DEFAULT_METERS_PER_ROW, along_track_m=DEFAULT_ALONG_TRACK_M, **extra) -> None:
    meta = {"meters_per_row": meters_per_row, "along_track_m": along_track_m, **extra}
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_meta(path) -> dict:
    meta = json.loads(Path(path).read_text())
    meta.setdefault("meters_per_row", DEFAULT_METERS_PER_ROW)
    meta.setdefault("along_track_m", DEFAULT_ALONG_TRACK_M)
    return meta


def read_manifest(path) -> list[dict]:
    """Manifest entries with ``image``, ``layers`` and ``meta`` resolved relative to the manifest."""
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise FormatError(f"{path}: manifest must be a JSON list")
    out = []
    for i, e in enumerate(entries):
        missing = {"image", "layers"} - set(e)
        if missing:
            raise FormatError(f"{path}: entry {i} lacks {sorted(missing)}")
        resolved = {k: str(path.parent / v) for k, v in e.items() if k in ("image", "layers", "meta") and v}
        out.append(resolved)
    return out


def write_manifest(path, entries) -> None:
    Path(path).write_text(json.dumps(list(entries), indent=2) + "\n")


def load_entry(entry: dict) -> tuple[np.ndarray, LayerSet]:
    image = read_egm(entry["image"])
    mpr = read_meta(entry["meta"])["meters_per_row"] if entry.get("meta") else DEFAULT_METERS_PER_ROW
    return image, read_layers_csv(entry["layers"], mpr)


# ---------------------------------------------------------------- rasterize

def rasterize(layers: LayerSet, rows: int, cols: int) -> np.ndarray:
    """Binary ``(rows, cols)`` mask with one positive per (layer, column) at the rounded row."""
    mask = np.zeros((rows, cols))
    for j, layer in enumerate(layers.layers):
        for c, r in layer.items():
            ri = int(np.floor(r + 0.5))
            if not (0 <= c < cols) or r < 0 or ri >= rows:
                raise ValueError(f"layer {j} point (column {c}, row {r}) outside a {rows}x{cols} grid")
            mask[ri, c] = 1.0
    return mask


# ---------------------------------------------------------------- augmentation

def _resize_bilinear(image: np.ndarray, new_rows: int, new_cols: int, factor: float) -> np.ndarray:
    """Bilinear resample where output pixel ``o`` samples input coordinate ``o / factor``."""
    rr = np.arange(new_rows) / factor
    cc = np.arange(new_cols) / factor
    grid = np.meshgrid(rr, cc, indexing="ij")
    return np.stack([map_coordinates(ch, grid, order=1, mode="nearest") for ch in image])


def scale_layers(layers: LayerSet, factor: float, new_rows: int, new_cols: int) -> LayerSet:
    """Rows scale by ``factor``; new columns sample the layer at ``column / factor`` by linear interpolation."""
    out = []
    for layer in layers.layers:
        cols = np.array(sorted(layer))
        vals = np.array([layer[c] for c in cols])
        mapped = {}
        for c in range(new_cols):
            src = c / factor
            if src < cols[0] or src > cols[-1]:
                continue
            k = np.searchsorted(cols, src)
            if cols[min(k, len(cols) - 1)] == src:
                r = vals[min(k, len(cols) - 1)]
            elif cols[k] - cols[k - 1] != 1:
                continue  # gap in the source layer
            else:
                t = src - cols[k - 1]
                r = (1 - t) * vals[k - 1] + t * vals[k]
            mapped[c] = min(max(r * factor, 0.0), new_rows - 1.0)
        out.append(mapped)
    return LayerSet(out, layers.meters_per_row / factor)


def flip_layers(layers: LayerSet, cols: int) -> LayerSet:
    return LayerSet([{cols - 1 - c: r for c, r in layer.items()} for layer in layers.layers], layers.meters_per_row)


def augment(image, layers: LayerSet) -> list[tuple[np.ndarray, LayerSet]]:
    """Identity, scales 0.25/0.5/0.75 and a left-right flip: five (image, layers) pairs."""
    image = np.asarray(image, dtype=np.float64)
    squeeze = image.ndim == 4
    img = image[0] if squeeze else image
    if img.ndim != 3:
        raise ValueError(f"expected (channels, rows, cols) or (1, channels, rows, cols), got {image.shape}")
    rows, cols = img.shape[1:]
    out = [(img.copy(), LayerSet([dict(layer) for layer in layers.layers], layers.meters_per_row))]
    for f in SCALES:
        nr, nc = rows * f, cols * f
        if nr != int(nr) or nc != int(nc) or int(nr) % 16 or int(nc) % 16 or nr == 0 or nc == 0:
            raise ValueError(f"scale {f} turns {rows}x{cols} into {nr:g}x{nc:g}, not a multiple of 16")
        nr, nc = int(nr), int(nc)
        out.append((_resize_bilinear(img, nr, nc, f), scale_layers(layers, f, nr, nc)))
    out.append((img[:, :, ::-1].copy(), flip_layers(layers, cols)))
    if squeeze:
        out = [(im[None], ls) for im, ls in out]
    return out


def augment_dataset(pairs) -> list[tuple[np.ndarray, LayerSet]]:
    out = []
    for image, layers in pairs:
        out.extend(augment(image, layers))
    return out


# ---------------------------------------------------------------- synthetic echograms

@dataclass(frozen=True)
class SynthParams:
    seed: int = 0
    rows: int = 64
    cols: int = 64
    layer_count: int = 6
    amplitude_range: tuple = (1.0, 4.0)
    frequency_range: tuple = (0.5, 2.0)
    walk_step: float = 0.1
    decay: float = 0.08
    speckle: float = 0.5
    blur: float = 0.7
    background: float = 0.05
    meters_per_row: float = DEFAULT_METERS_PER_ROW

    def __post_init__(self):
        if self.rows % 16 or self.cols % 16 or self.rows <= 0 or self.cols <= 0:
            raise ValueError(f"rows and cols must be positive multiples of 16, got {self.rows}x{self.cols}")
        if self.layer_count < 1:
            raise ValueError(f"layer_count must be >= 1, got {self.layer_count}")
        if not 0 <= self.speckle <= 1:
            raise ValueError(f"speckle must lie in [0, 1], got {self.speckle}")


MIN_SPACING = 6.0


def synthesize(params: SynthParams) -> tuple[np.ndarray, LayerSet]:
    """Deterministic synthetic echogram ``(1, 1, rows, cols)`` and its layer tops.

    Layers share a smooth undulation (sum of sinusoids) plus small independent
    bounded random walks, so they never cross. Each layer starts a bright band
    that decays exponentially with depth until the next layer top. Speckle is
    multiplicative exponential noise; blur is a vertical Gaussian.
    """
    p = params
    rng = np.random.default_rng(p.seed)
    margin = max(4.0, 0.08 * p.rows)
    spacing = (p.rows - 2 * margin) / p.layer_count
    if spacing < MIN_SPACING:
        raise ValueError(
            f"{p.layer_count} layers do not fit in {p.rows} rows without crossing "
            f"(spacing {spacing:.2f} < {MIN_SPACING})"
        )
    x = np.arange(p.cols) / p.cols
    amp_cap = 0.2 * margin
    shared = np.zeros(p.cols)
    for _ in range(3):
        amp = rng.uniform(*p.amplitude_range) / 3
        freq = rng.uniform(*p.frequency_range)
        shared += amp * np.sin(2 * np.pi * freq * x + rng.uniform(0, 2 * np.pi))
    shared *= min(1.0, amp_cap / max(np.abs(shared).max(), 1e-12))

    wiggle_cap = 0.15 * spacing
    base = margin + spacing * (np.arange(p.layer_count) + rng.uniform(0.4, 0.6, p.layer_count))
    tops = np.empty((p.layer_count, p.cols))
    for j in range(p.layer_count):
        walk = np.cumsum(rng.normal(0, p.walk_step, p.cols))
        walk -= walk.mean()
        walk = np.clip(walk, -wiggle_cap, wiggle_cap)
        tops[j] = base[j] + shared + walk
    tops = np.clip(tops, 0, p.rows - 1)

    levels = np.where(np.arange(p.layer_count) % 2 == 0, 0.9, 0.55) + rng.uniform(-0.08, 0.08, p.layer_count)
    rows_idx = np.arange(p.rows)[:, None]
    starts = np.floor(tops + 0.5)
    image = np.full((p.rows, p.cols), p.background)
    for j in range(p.layer_count):
        upper = starts[j][None, :]
        lower = starts[j + 1][None, :] if j + 1 < p.layer_count else np.full((1, p.cols), p.rows)
        inside = (rows_idx >= upper) & (rows_idx < lower)
        band = levels[j] * np.exp(-p.decay * (rows_idx - upper))
        image = np.where(inside, band, image)
    if p.speckle > 0:
        image = image * ((1 - p.speckle) + p.speckle * rng.exponential(1.0, image.shape))
    if p.blur > 0:
        image = gaussian_filter1d(image, p.blur, axis=0, mode="nearest")
    layers = LayerSet.from_rows(tops, p.meters_per_row)
    return image[None, None], layers


def synthesize_dataset(n: int, seed: int = 0, **kwargs) -> list[tuple[np.ndarray, LayerSet]]:
    """``n`` echograms from seeds derived deterministically from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [synthesize(SynthParams(seed=int(s), **kwargs)) for s in seeds]
