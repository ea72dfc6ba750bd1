"""Synthetic skin-image dataset generation, netpbm file I/O, checkpoints.

Images are 3 x H x W reals in [0, 1]; masks are H x W binary. Files use
binary PPM (P6) for images and PGM (P5) for masks and saliency maps, both
with maxval 255. Checkpoints are a little-endian binary container of named
float32 tensors with a bit-exact save/load roundtrip.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

DIFFICULTIES = ("easy", "low-contrast", "multi-lesion", "hairy")


@dataclass
class SegSample:
    image: np.ndarray  # 3 x H x W in [0, 1]
    mask: np.ndarray   # H x W in {0, 1}
    meta: dict = field(default_factory=dict)
    difficulty: str = "easy"


# ---------------------------------------------------------------------------
# synthetic generator


def _lesion_mask(rng: np.random.Generator, extent: int, count: int,
                 radius_range) -> np.ndarray:
    yy, xx = np.mgrid[0:extent, 0:extent].astype(np.float64)
    mask = np.zeros((extent, extent), dtype=bool)
    for _ in range(count):
        cy, cx = rng.uniform(0.32, 0.68, size=2) * extent
        ra, rb = rng.uniform(*radius_range, size=2) * extent
        angle = rng.uniform(0, np.pi)
        # irregular radial perturbation, a few low harmonics
        amps = rng.uniform(0.0, 0.05, size=4)
        phases = rng.uniform(0, 2 * np.pi, size=4)
        dy, dx = yy - cy, xx - cx
        ca, sa = np.cos(angle), np.sin(angle)
        u = (ca * dx + sa * dy) / ra
        v = (-sa * dx + ca * dy) / rb
        theta = np.arctan2(v, u)
        rho = 1.0
        for k, (amp, ph) in enumerate(zip(amps, phases), start=2):
            rho = rho + amp * np.cos(k * theta + ph)
        mask |= u * u + v * v <= rho * rho
    return mask


def _hair_strokes(rng: np.random.Generator, image: np.ndarray, mask: np.ndarray):
    extent = image.shape[1]
    ys, xs = np.nonzero(mask)
    n_strokes = int(rng.integers(5, 16))
    for _ in range(n_strokes):
        # start near the lesion so strokes cross it
        i = rng.integers(0, len(ys))
        y = float(ys[i]) + rng.normal(0, extent * 0.08)
        x = float(xs[i]) + rng.normal(0, extent * 0.08)
        direction = rng.uniform(0, 2 * np.pi)
        shade = rng.uniform(0.05, 0.25)
        thick = int(rng.integers(1, 3))
        for _seg in range(int(rng.integers(3, 7))):
            direction += rng.normal(0, 0.5)
            length = rng.uniform(0.08, 0.2) * extent
            steps = max(int(length), 1)
            for s in range(steps):
                py = int(round(y + np.sin(direction) * s))
                px = int(round(x + np.cos(direction) * s))
                for oy in range(thick):
                    for ox in range(thick):
                        qy, qx = py + oy, px + ox
                        if 0 <= qy < extent and 0 <= qx < extent:
                            image[:, qy, qx] = shade
            y += np.sin(direction) * steps
            x += np.cos(direction) * steps


def synth_generate(count: int, extent: int, seed: int,
                   difficulty: str = "easy") -> list:
    """Deterministic list of image/mask samples of one difficulty flavor."""
    if extent < 32 or extent % 8:
        raise ValueError("extent must be >= 32 and divisible by 8")
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {DIFFICULTIES}")

    samples = []
    for index in range(count):
        rng = np.random.default_rng((0x5EED, seed, index))
        yy, xx = np.mgrid[0:extent, 0:extent].astype(np.float64) / extent

        base = np.array([rng.uniform(0.72, 0.88),
                         rng.uniform(0.55, 0.68),
                         rng.uniform(0.45, 0.58)])
        # smooth low-frequency shading shared by all channels
        gx, gy = rng.uniform(-0.06, 0.06, size=2)
        wave = rng.uniform(0.0, 0.04) * np.cos(np.pi * yy + rng.uniform(0, np.pi)) \
            * np.cos(np.pi * xx + rng.uniform(0, np.pi))
        shading = gx * xx + gy * yy + wave
        image = base.reshape(3, 1, 1) + shading[None]

        if difficulty == "multi-lesion":
            n_lesions = int(rng.integers(2, 4))
            mask = _lesion_mask(rng, extent, n_lesions, (0.10, 0.16))
        else:
            # wide radius range so lesion scale varies sample to sample
            mask = _lesion_mask(rng, extent, 1, (0.11, 0.26))

        if difficulty == "low-contrast":
            delta = rng.uniform(0.05, 0.10)
        else:
            delta = rng.uniform(0.35, 0.45)
        lesion_color = np.clip(base - delta * np.array([1.0, 1.1, 0.9]), 0.02, 1.0)
        image = np.where(mask[None], lesion_color.reshape(3, 1, 1) + 0.5 * shading[None],
                         image)

        if difficulty == "hairy":
            _hair_strokes(rng, image, mask)

        image = image + rng.normal(0.0, 0.02, size=image.shape)
        image = np.clip(image, 0.0, 1.0)
        samples.append(SegSample(image=image, mask=mask.astype(np.float64),
                                 meta={"seed": seed, "index": index},
                                 difficulty=difficulty))
    return samples


# ---------------------------------------------------------------------------
# netpbm I/O


def _read_header(fh, magic: bytes):
    got = fh.read(2)
    if got != magic:
        raise ValueError(f"bad magic {got!r}, expected {magic!r}")
    fields = []
    while len(fields) < 3:
        tok = b""
        ch = fh.read(1)
        while ch.isspace():
            ch = fh.read(1)
        if ch == b"#":  # comment runs to end of line
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        while ch and not ch.isspace():
            tok += ch
            ch = fh.read(1)
        if not tok:
            raise ValueError("truncated header")
        if not tok.isdigit():
            raise ValueError(f"malformed header token {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}, expected 255")
    return width, height


def load_image(path) -> np.ndarray:
    """P6 image file -> 3 x H x W array scaled to [0, 1]."""
    with open(path, "rb") as fh:
        width, height = _read_header(fh, b"P6")
        payload = fh.read(width * height * 3)
        if len(payload) != width * height * 3:
            raise ValueError("truncated pixel payload")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def save_image(image: np.ndarray, path):
    """3 x H x W array in [0, 1] -> P6 file, quantized by round(v * 255)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError("expected a 3 x H x W image")
    q = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = image.shape[1:]
    with open(path, "wb") as fh:
        fh.write(f"P6 {w} {h} 255\n".encode())
        fh.write(q.transpose(1, 2, 0).tobytes())


def load_map(path) -> np.ndarray:
    """P5 file -> H x W array in [0, 1]."""
    with open(path, "rb") as fh:
        width, height = _read_header(fh, b"P5")
        payload = fh.read(width * height)
        if len(payload) != width * height:
            raise ValueError("truncated pixel payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).astype(np.float64) / 255.0


def load_mask(path) -> np.ndarray:
    """P5 mask file -> binary H x W array (any value >= 128 counts as 1)."""
    return (load_map(path) >= 0.5).astype(np.float64)


def save_map(values: np.ndarray, path):
    """H x W array in [0, 1] -> P5 file."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("expected an H x W map")
    q = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5 {w} {h} 255\n".encode())
        fh.write(q.tobytes())


def save_mask(mask: np.ndarray, path):
    """Binary H x W mask -> P5 file with values in {0, 255}."""
    save_map((np.asarray(mask) > 0.5).astype(np.float64), path)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"DSF1"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(entries: dict, path):
    """Write named tensors as little-endian float32 payloads.

    Entry layout: name length (u16), name bytes, rank (u8), extents (u32
    each), then the row-major payload.
    """
    names = list(entries)
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate tensor names")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(names)))
        for name in names:
            arr = np.asarray(entries[name], dtype=np.float32)
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.astype("<f4", copy=False).tobytes())


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into {name: float32 array}, validating layout."""
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        piece = blob[off: off + n]
        off += n
        return piece

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic")
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported version {version}")
    entries: dict = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode()
        if name in entries:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        shape = tuple(struct.unpack("<I", take(4, "extent"))[0] for _ in range(rank))
        size = int(np.prod(shape)) if shape else 1
        payload = take(4 * size, f"payload of {name!r}")
        entries[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if off != len(blob):
        raise CheckpointError("trailing bytes after last entry")
    return entries


# ---------------------------------------------------------------------------
# directory conventions


def sample_paths(directory, index: int):
    stem = f"sample_{index:05d}"
    return f"{directory}/{stem}.ppm", f"{directory}/{stem}_mask.pgm"


def save_samples(samples, directory):
    import os
    os.makedirs(directory, exist_ok=True)
    for i, sample in enumerate(samples):
        img_path, mask_path = sample_paths(directory, i)
        save_image(sample.image, img_path)
        save_mask(sample.mask, mask_path)


def load_samples(directory) -> list:
    import os
    samples = []
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".ppm"):
            continue
        stem = name[:-4]
        mask_path = os.path.join(directory, stem + "_mask.pgm")
        if not os.path.exists(mask_path):
            raise FileNotFoundError(f"no mask for {name}")
        samples.append(SegSample(image=load_image(os.path.join(directory, name)),
                                 mask=load_mask(mask_path),
                                 meta={"path": os.path.join(directory, name)}))
    if not samples:
        raise FileNotFoundError(f"no .ppm samples in {directory}")
    return samples
