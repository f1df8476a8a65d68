"""Synthetic paired data, crop augmentation and PGM/PPM image I/O.

The toy translation tasks render one random scene (disks and rectangles of
a few materials on a background) through different "sensors":

* SAR-like: per-material backscatter plus edge emphasis, multiplied by
  exponential(1) speckle and log-compressed to [0, 1];
* EO: smooth grayscale rendering; RGB: per-material colours;
* IR: per-material temperatures plus a per-object offset, a heating
  gradient and a scene-wide ambient offset, none of which the source
  reveals (one-to-many targets).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, sobel

from .errors import ParseError

TASKS = {"sar2eo": (1, 1), "sar2rgb": (1, 3), "sar2ir": (1, 1), "rgb2ir": (3, 1)}
RESOLUTIONS = (16, 32, 64)

# material table: background + 3 object materials
_EO = np.array([0.15, 0.85, 0.55, 0.70])
_RGB = np.array([[0.20, 0.22, 0.15], [0.90, 0.85, 0.75], [0.35, 0.75, 0.30], [0.80, 0.35, 0.30]])
_IR = np.array([0.12, 0.75, 0.55, 0.90])
_SAR = np.array([0.05, 0.95, 0.60, 0.80])
IR_OBJECT_OFFSET = 0.05  # half-width of the uniform per-object temperature offset
IR_GRADIENT = 0.3  # amplitude of the random-direction heating gradient
IR_AMBIENT = 0.2  # std of the per-scene ambient temperature offset


@dataclass
class PairedDataset:
    sources: np.ndarray
    targets: np.ndarray
    src_channels: int
    tgt_channels: int
    resolution: int
    seed: int
    task: str = ""

    def __post_init__(self):
        if len(self.sources) != len(self.targets):
            raise ValueError("sources and targets must have equal length")

    def __len__(self):
        return len(self.sources)

    def subset(self, idx) -> "PairedDataset":
        idx = np.asarray(idx)
        return PairedDataset(self.sources[idx], self.targets[idx], self.src_channels, self.tgt_channels,
                             self.resolution, self.seed, self.task)

    def split(self):
        """Deterministic (train, eval) split: even indices train, odd indices evaluate."""
        n = len(self)
        return self.subset(np.arange(0, n, 2)), self.subset(np.arange(1, n, 2))


def make_gaussian_pairs(r: float, n: int, seed: int) -> PairedDataset:
    """Unit-variance scalar pairs with correlation ``r``; arrays of shape (n, 1)."""
    if not abs(r) < 1:
        raise ValueError(f"|r| must be < 1, got {r}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = r * x + np.sqrt(1 - r * r) * rng.standard_normal(n)
    return PairedDataset(x[:, None], y[:, None], 1, 1, 1, seed, "gaussian")


def _scene(rng: np.random.Generator, res: int):
    """Material label map and per-object id map."""
    labels = np.zeros((res, res), dtype=int)
    ids = np.zeros((res, res), dtype=int)
    yy, xx = np.mgrid[0:res, 0:res] + 0.5
    for k in range(1, rng.integers(2, 5) + 1):
        mat = rng.integers(1, 4)
        cy, cx = rng.uniform(0.15, 0.85, size=2) * res
        if rng.uniform() < 0.5:
            rad = rng.uniform(0.08, 0.2) * res
            m = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad**2
        else:
            hy, hx = rng.uniform(0.08, 0.22, size=2) * res
            m = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
        labels[m] = mat
        ids[m] = k
    return labels, ids


def _render_sar(rng, labels, res):
    inten = _SAR[labels]
    edges = np.hypot(sobel(inten, 0), sobel(inten, 1))
    inten = inten + 0.25 * edges / (edges.max() + 1e-12)
    speckle = rng.exponential(1.0, size=inten.shape)
    return np.clip(np.log1p(8.0 * inten * speckle) / np.log1p(8.0 * 2.5), 0.0, 1.0)[None]


def _render_ir(rng, labels, ids, res):
    img = _IR[labels].copy()
    for k in range(1, ids.max() + 1):
        img[ids == k] += rng.uniform(-IR_OBJECT_OFFSET, IR_OBJECT_OFFSET)
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = (np.mgrid[0:res, 0:res] + 0.5) / res - 0.5
    img += IR_GRADIENT * (np.cos(theta) * xx + np.sin(theta) * yy)
    img += rng.normal(0.0, IR_AMBIENT)
    return np.clip(gaussian_filter(img, 0.6), 0.0, 1.0)[None]


def _render_optical(labels, kind):
    if kind == "rgb":
        img = np.moveaxis(_RGB[labels], -1, 0)
        return np.clip(gaussian_filter(img, (0, 0.6, 0.6)), 0.0, 1.0)
    return np.clip(gaussian_filter(_EO[labels], 0.6), 0.0, 1.0)[None]


def _generate(task_tag: str, n: int, resolution: int, seed: int):
    if task_tag not in TASKS:
        raise ValueError(f"unknown task {task_tag!r}; expected one of {sorted(TASKS)}")
    if resolution not in RESOLUTIONS:
        raise ValueError(f"resolution must be one of {RESOLUTIONS}, got {resolution}")
    src_c, tgt_c = TASKS[task_tag]
    rng = np.random.default_rng(seed)
    src = np.empty((n, src_c, resolution, resolution))
    tgt = np.empty((n, tgt_c, resolution, resolution))
    masks = np.empty((n, resolution, resolution), dtype=bool)
    for i in range(n):
        labels, ids = _scene(rng, resolution)
        masks[i] = labels > 0
        if task_tag == "rgb2ir":
            src[i] = _render_optical(labels, "rgb")
        else:
            src[i] = _render_sar(rng, labels, resolution)
        if task_tag == "sar2eo":
            tgt[i] = _render_optical(labels, "eo")
        elif task_tag == "sar2rgb":
            tgt[i] = _render_optical(labels, "rgb")
        else:
            tgt[i] = _render_ir(rng, labels, ids, resolution)
    return PairedDataset(src, tgt, src_c, tgt_c, resolution, seed, task_tag), masks


def make_toy_translation(task_tag: str, n: int, resolution: int, seed: int) -> PairedDataset:
    return _generate(task_tag, n, resolution, seed)[0]


def scene_masks(task_tag: str, n: int, resolution: int, seed: int) -> np.ndarray:
    """Ground-truth object masks of ``make_toy_translation`` with the same arguments."""
    return _generate(task_tag, n, resolution, seed)[1]


def crop_augment(img, window: int, stride: int | None = None) -> list[np.ndarray]:
    """Sliding-window crops in row-major order (default stride = window // 2)."""
    img = np.asarray(img)
    stride = window // 2 if stride is None else stride
    h, w = img.shape[-2:]
    if window > h or window > w or window < 1:
        raise ValueError(f"window {window} does not fit a {h}x{w} image")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return [img[..., i:i + window, j:j + window].copy()
            for i in range(0, h - window + 1, stride)
            for j in range(0, w - window + 1, stride)]


# PGM / PPM ---------------------------------------------------------------------

def encode_pnm(img) -> bytes:
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3, H, W) image, got {img.shape}")
    c, h, w = img.shape
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + np.moveaxis(q, 0, -1).tobytes()


def decode_pnm(data: bytes) -> np.ndarray:
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError("unexpected end of header", start)
        return data[start:pos], start

    magic, at = token()
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r}", at)
    fields = []
    for name in ("width", "height", "maxval"):
        tok, at = token()
        if not tok.isdigit() or int(tok) <= 0:
            raise ParseError(f"invalid {name} {tok!r}", at)
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval > 255:
        raise ParseError(f"only 8-bit images supported, maxval {maxval}", at)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after header", pos)
    pos += 1
    c = 1 if magic == b"P5" else 3
    need = w * h * c
    body = data[pos:]
    if len(body) != need:
        raise ParseError(f"expected {need} pixel bytes, found {len(body)}", pos)
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, c)
    return np.moveaxis(arr, -1, 0).astype(float) / maxval


def write_image(path, img) -> None:
    with open(path, "wb") as f:
        f.write(encode_pnm(img))


def read_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_pnm(f.read())


def image_io(mode: str, path, img=None):
    if mode == "write":
        write_image(path, img)
        return None
    if mode == "read":
        return read_image(path)
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")


MANIFEST = "manifest.txt"


def _ext(c: int) -> str:
    return "pgm" if c == 1 else "ppm"


def save_dataset(ds: PairedDataset, root) -> str:
    os.makedirs(os.path.join(root, "source"), exist_ok=True)
    os.makedirs(os.path.join(root, "target"), exist_ok=True)
    lines = []
    for i in range(len(ds)):
        s = f"source/{i:05d}.{_ext(ds.src_channels)}"
        t = f"target/{i:05d}.{_ext(ds.tgt_channels)}"
        write_image(os.path.join(root, s), ds.sources[i])
        write_image(os.path.join(root, t), ds.targets[i])
        lines.append(f"{s}\t{t}\n")
    path = os.path.join(root, MANIFEST)
    with open(path, "w") as f:
        f.writelines(lines)
    return path


def load_dataset(root, task: str = "", seed: int = 0) -> PairedDataset:
    with open(os.path.join(root, MANIFEST)) as f:
        pairs = [line.rstrip("\n").split("\t") for line in f if line.strip()]
    src = [read_image(os.path.join(root, s)) for s, _ in pairs]
    tgt = [read_image(os.path.join(root, t)) for _, t in pairs]
    if not src:
        return PairedDataset(np.zeros((0, 1, 1, 1)), np.zeros((0, 1, 1, 1)), 1, 1, 0, seed, task)
    src, tgt = np.stack(src), np.stack(tgt)
    return PairedDataset(src, tgt, src.shape[1], tgt.shape[1], src.shape[-1], seed, task)
