"""Image I/O, datasets and synthetic scale-invariant textures."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")


# ---------------------------------------------------------------- PNM


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def _load_pnm(path: Path) -> np.ndarray:
    buf = path.read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM type {magic!r} (only binary P5/P6)")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        fields.append(int(tok))
    width, height, maxval = fields
    if not (0 < maxval < 65536):
        raise ValueError(f"{path}: invalid maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    raw = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    return raw.reshape(height, width, channels).astype(np.float64) / maxval


def _save_pnm(image: np.ndarray, path: Path, bits: int) -> None:
    channels = image.shape[-1]
    if channels not in (1, 3):
        raise ValueError(f"PNM needs 1 or 3 channels, got {channels}")
    maxval = 255 if bits == 8 else 65535
    q = np.round(np.clip(image, 0, 1) * maxval)
    raster = q.astype(">u2" if bits == 16 else "u1").tobytes()
    magic = b"P5" if channels == 1 else b"P6"
    header = b"%s\n%d %d\n%d\n" % (magic, image.shape[1], image.shape[0], maxval)
    path.write_bytes(header + raster)


# ---------------------------------------------------------------- PNG / dispatch


def load_image(path) -> np.ndarray:
    """Read an image as an ``(H, W, C)`` float64 array in [0, 1]."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm", ".pnm"):
        return _load_pnm(path)
    if suffix != ".png":
        raise ValueError(f"{path}: unsupported image format {suffix!r}")
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            a = np.asarray(im, dtype=np.float64)
            if mode == "I" and a.max(initial=0) > 65535:
                raise ValueError(f"{path}: unsupported bit depth")
            return a[..., None] / 65535.0
        if mode == "L":
            return np.asarray(im, dtype=np.float64)[..., None] / 255.0
        if mode == "RGB":
            return np.asarray(im, dtype=np.float64) / 255.0
        raise ValueError(f"{path}: unsupported PNG mode {mode!r}")


def save_image(image, path, bits: int = 8) -> None:
    """Write an ``(H, W, C)`` array in [0, 1]; values are clipped and rounded.

    PNG supports 8-bit grey/RGB and 16-bit grey; PGM/PPM support 8 and 16 bits.
    """
    path = Path(path)
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if bits not in (8, 16):
        raise ValueError(f"unsupported bit depth {bits}")
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm", ".pnm"):
        _save_pnm(a, path, bits)
        return
    if suffix != ".png":
        raise ValueError(f"{path}: unsupported image format {suffix!r}")
    if bits == 16:
        if a.shape[-1] != 1:
            raise ValueError("16-bit PNG output is limited to single-channel images; use .ppm")
        q = np.round(np.clip(a[..., 0], 0, 1) * 65535).astype(np.uint16)
        Image.fromarray(q).save(path)
        return
    q = np.round(np.clip(a, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(q[..., 0] if q.shape[-1] == 1 else q).save(path)


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class Sample:
    measurement: Path
    reference: Path | None = None
    noise_seed: int | None = None


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    split: str = "train"

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def has_references(self) -> bool:
        return bool(self.samples) and all(s.reference is not None for s in self.samples)

    def load_measurements(self) -> list[np.ndarray]:
        return [load_image(s.measurement) for s in self.samples]

    def load_references(self) -> list[np.ndarray]:
        if not self.has_references:
            raise ValueError("dataset has no reference images")
        return [load_image(s.reference) for s in self.samples]

    @classmethod
    def from_dirs(cls, measurements, references=None, split: str = "train", seeds: dict | None = None) -> "Dataset":
        """Pair files by stem; with ``references`` every measurement needs a match."""
        meas = list_images(measurements)
        refs = {}
        if references is not None:
            refs = {p.stem: p for p in list_images(references)}
            missing = [p.name for p in meas if p.stem not in refs]
            if missing:
                raise ValueError(f"no reference image for {missing}")
        seeds = seeds or {}
        samples = tuple(Sample(p, refs.get(p.stem), seeds.get(p.name)) for p in meas)
        return cls(samples, split)


def split_dataset(paths, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split into (train, test)."""
    items = [p if isinstance(p, Sample) else Sample(Path(p)) for p in paths]
    if not 0 <= n_test < len(items):
        raise ValueError(f"n_test={n_test} must be in [0, {len(items)})")
    order = np.random.default_rng(seed).permutation(len(items))
    test = tuple(items[i] for i in sorted(order[:n_test]))
    train = tuple(items[i] for i in sorted(order[n_test:]))
    return Dataset(train, "train"), Dataset(test, "test")


# ---------------------------------------------------------------- synthetic data


def synth_texture(seed: int, N: int, slope: float, channels: int = 1) -> np.ndarray:
    """Random-phase texture with isotropic amplitude spectrum ``|f|^-slope``, rescaled to [0, 1].

    Power-law spectra are statistically self-similar under rescaling, which makes
    these textures a convenient scale-invariant test distribution.
    """
    if N <= 0 or N & (N - 1):
        raise ValueError(f"N must be a power of two, got {N}")
    if slope <= 0:
        raise ValueError("slope must be > 0")
    rng = np.random.default_rng(seed)
    f = np.hypot(np.fft.fftfreq(N)[:, None], np.fft.fftfreq(N)[None, :])
    amp = np.zeros_like(f)
    amp[f > 0] = f[f > 0] ** -slope
    out = np.empty((N, N, channels))
    for c in range(channels):
        # the phase of white noise is Hermitian-symmetric, so the result is real
        phase = np.angle(np.fft.fft2(rng.standard_normal((N, N))))
        img = np.real(np.fft.ifft2(amp * np.exp(1j * phase)))
        lo, hi = img.min(), img.max()
        out[..., c] = (img - lo) / (hi - lo)
    return out

