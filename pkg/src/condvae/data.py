"""Labelled image datasets: CelebA-style folders, a synthetic shapes set, augmentation and splits."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

SYNTHETIC_ATTRS = ("is_circle", "is_large", "is_red", "is_top_half", "has_border")


class DataFormatError(ValueError):
    pass


@dataclass
class DatasetSpec:
    source: str = "synthetic"
    image_size: tuple[int, int] = (32, 32)
    attr_names: list[str] = field(default_factory=lambda: list(SYNTHETIC_ATTRS))
    train_fraction: float = 0.8
    split_seed: int = 0
    hflip: bool = True
    rotate_deg: float = 10.0
    n_samples: int = 6000
    seed: int = 0
    root: str | None = None
    attr_file: str | None = None

    def __post_init__(self):
        if self.source not in ("folder", "synthetic"):
            raise ValueError(f"dataset source must be 'folder' or 'synthetic', got {self.source!r}")
        self.image_size = tuple(int(v) for v in self.image_size)
        self.attr_names = list(self.attr_names)
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.rotate_deg < 0:
            raise ValueError("rotate_deg must be non-negative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d


class LabeledDataset:
    """In-memory batch of images (N, C, H, W) in [0, 1] with binary attributes (N, A)."""

    def __init__(self, images: torch.Tensor, attrs: torch.Tensor, attr_names):
        if images.shape[0] != attrs.shape[0]:
            raise ValueError("images and attributes disagree on N")
        self.images = images
        self.attrs = attrs
        self.attr_names = list(attr_names)

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def get_batch(self, indices):
        idx = torch.as_tensor(indices, dtype=torch.long)
        return self.images[idx], self.attrs[idx]


class FolderDataset:
    """Lazily loaded image folder with a CelebA ``list_attr_celeba``-style table."""

    def __init__(self, root, filenames, attrs: torch.Tensor, attr_names, image_size):
        self.root = Path(root)
        self.filenames = list(filenames)
        self.attrs = attrs
        self.attr_names = list(attr_names)
        self.image_size = tuple(image_size)

    def __len__(self):
        return len(self.filenames)

    @property
    def image_shape(self):
        return (3, *self.image_size)

    def load_image(self, i: int) -> torch.Tensor:
        H, W = self.image_size
        with Image.open(self.root / self.filenames[i]) as im:
            im = im.convert("RGB").resize((W, H), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
        return torch.from_numpy(arr).permute(2, 0, 1).contiguous()

    def get_batch(self, indices):
        idx = [int(i) for i in indices]
        images = torch.stack([self.load_image(i) for i in idx])
        return images, self.attrs[torch.as_tensor(idx, dtype=torch.long)]


class Subset:
    def __init__(self, parent, indices):
        self.parent = parent
        self.indices = torch.as_tensor(indices, dtype=torch.long)
        self.attr_names = parent.attr_names

    def __len__(self):
        return len(self.indices)

    @property
    def image_shape(self):
        return self.parent.image_shape

    @property
    def attrs(self):
        return self.parent.attrs[self.indices]

    def get_batch(self, indices):
        return self.parent.get_batch(self.indices[torch.as_tensor(indices, dtype=torch.long)])


def read_attr_table(path, expected_attrs: int | None = None):
    """Parse a CelebA attribute table; returns (filenames, attrs in {0,1}, names), sorted by filename."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise DataFormatError(f"{path}: attribute table needs a count line and a header line")
    try:
        count = int(lines[0].split()[0])
    except ValueError:
        raise DataFormatError(f"{path}: first line must be the image count") from None
    names = lines[1].split()
    if expected_attrs is not None and len(names) != expected_attrs:
        raise DataFormatError(f"{path}: header lists {len(names)} attributes, expected {expected_attrs}")
    rows = {}
    for lineno, line in enumerate(lines[2:], start=3):
        parts = line.split()
        if len(parts) != len(names) + 1:
            raise DataFormatError(
                f"{path}:{lineno}: malformed row with {len(parts) - 1} values, expected {len(names)}"
            )
        values = []
        for v in parts[1:]:
            if v not in ("1", "-1", "+1"):
                raise DataFormatError(f"{path}:{lineno}: attribute value {v!r} is not +1/-1")
            values.append(1.0 if v != "-1" else 0.0)
        rows[parts[0]] = values
    if len(rows) != count:
        raise DataFormatError(f"{path}: header declares {count} images, table has {len(rows)}")
    filenames = sorted(rows)
    attrs = torch.tensor([rows[f] for f in filenames], dtype=torch.float32).reshape(len(filenames), len(names))
    return filenames, attrs, names


def write_attr_table(path, filenames, attrs, names):
    lines = [str(len(filenames)), " ".join(names)]
    for fname, row in zip(filenames, attrs.tolist()):
        lines.append(fname + " " + " ".join("1" if v > 0.5 else "-1" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_folder(root_path, attr_table_path, spec: DatasetSpec) -> FolderDataset:
    root = Path(root_path)
    filenames, attrs, names = read_attr_table(attr_table_path)
    missing = [f for f in filenames if not (root / f).is_file()]
    if missing:
        raise FileNotFoundError(f"{len(missing)} image(s) listed in the table are missing, e.g. {missing[0]}")
    return FolderDataset(root, filenames, attrs, names, spec.image_size)


def make_synthetic(n: int, spec: DatasetSpec) -> LabeledDataset:
    """Render ``n`` shapes on flat grey backgrounds with five independent binary attributes.

    Geometry is laid out on a 32x32 reference grid and scaled to ``spec.image_size``.
    Every attribute is recoverable from the pixels by ``synthetic_attr_rule``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.seed)
    H, W = spec.image_size
    attrs = rng.integers(0, 2, size=(n, len(SYNTHETIC_ATTRS))).astype(np.float32)
    is_circle, is_large, is_red, is_top, has_border = attrs.T.astype(bool)

    bg = rng.uniform(0.15, 0.35, size=n)
    radius = np.where(is_large, 7.0, 4.0)
    cx = rng.uniform(10.0, 22.0, size=n)
    cy = np.where(is_top, rng.uniform(9.0, 10.5, size=n), rng.uniform(21.0, 22.5, size=n))
    fg = np.empty((n, 3))
    fg[:, 0] = np.where(is_red, rng.uniform(0.75, 1.0, n), rng.uniform(0.0, 0.25, n))
    greenish = rng.integers(0, 2, size=n).astype(bool)
    g_other = np.where(greenish, rng.uniform(0.6, 0.9, n), rng.uniform(0.0, 0.4, n))
    b_other = np.where(greenish, rng.uniform(0.0, 0.3, n), rng.uniform(0.7, 1.0, n))
    fg[:, 1] = np.where(is_red, rng.uniform(0.0, 0.25, n), g_other)
    fg[:, 2] = np.where(is_red, rng.uniform(0.0, 0.25, n), b_other)
    border_level = rng.uniform(0.9, 1.0, size=n)

    # pixel centres in reference-grid units
    py = (np.arange(H) + 0.5) * 32.0 / H
    px = (np.arange(W) + 0.5) * 32.0 / W
    dy = py[None, :, None] - cy[:, None, None]
    dx = px[None, None, :] - cx[:, None, None]
    r = radius[:, None, None]
    circle = dx**2 + dy**2 <= r**2
    square = (np.abs(dx) <= r) & (np.abs(dy) <= r)
    shape = np.where(is_circle[:, None, None], circle, square)
    frame = (np.minimum(py, 32 - py)[:, None] < 2.0) | (np.minimum(px, 32 - px)[None, :] < 2.0)
    frame = frame[None] & has_border[:, None, None]

    img = np.broadcast_to(bg[:, None, None, None], (n, 3, H, W)).copy()
    img = np.where(shape[:, None], fg[:, :, None, None], img)
    img = np.where(frame[:, None], border_level[:, None, None, None], img)
    return LabeledDataset(torch.from_numpy(img.astype(np.float32)), torch.from_numpy(attrs), SYNTHETIC_ATTRS)


def foreground_mask(img: torch.Tensor, threshold: float = 0.15) -> torch.Tensor:
    """Pixels of a synthetic-style image whose colour departs from the interior background."""
    _, H, W = img.shape
    by, bx = int(2 * H / 32), int(2 * W / 32)
    background = img[:, by, bx]
    mask = (img - background[:, None, None]).abs().amax(0) > threshold
    interior = torch.zeros_like(mask)
    interior[by: H - by, bx: W - bx] = True
    return mask & interior


def synthetic_attr_rule(img: torch.Tensor) -> torch.Tensor:
    """Hand-written classifier recovering the five synthetic attributes from one image."""
    _, H, W = img.shape
    scale = H * W / 1024.0
    mask = foreground_mask(img)
    ys, xs = torch.nonzero(mask, as_tuple=True)
    area = float(mask.sum())
    if area == 0:
        return torch.zeros(len(SYNTHETIC_ATTRS))
    bbox = float((ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1))
    fgc = img[:, mask].mean(1)
    centroid_y = float(ys.float().mean() + 0.5) * 32.0 / H
    return torch.tensor([
        float(area / bbox < 0.9),
        float(area > 100 * scale),
        float(fgc[0] > max(fgc[1], fgc[2])),
        float(centroid_y < 16.0),
        float(img[:, 0, 0].min() > 0.6),
    ])


def foreground_red_mean(img: torch.Tensor) -> float:
    mask = foreground_mask(img)
    if not mask.any():
        return float(img[0].mean())
    return float(img[0][mask].mean())


def rotate_batch(images: torch.Tensor, degrees: torch.Tensor) -> torch.Tensor:
    theta = degrees * math.pi / 180.0
    cos, sin = torch.cos(theta), torch.sin(theta)
    zeros = torch.zeros_like(cos)
    mat = torch.stack([torch.stack([cos, -sin, zeros], -1), torch.stack([sin, cos, zeros], -1)], 1)
    grid = F.affine_grid(mat.to(images.dtype), list(images.shape), align_corners=False)
    return F.grid_sample(images, grid, mode="bilinear", padding_mode="reflection", align_corners=False)


def augment(batch, spec: DatasetSpec, generator: torch.Generator | None = None, force_flip: bool | None = None):
    """Random horizontal flip (p=0.5) and rotation by U(-rotate_deg, rotate_deg); attributes unchanged."""
    images, attrs = batch
    n = images.shape[0]
    if spec.hflip:
        if force_flip is None:
            flip = torch.rand(n, generator=generator) < 0.5
        else:
            flip = torch.full((n,), bool(force_flip))
        images = torch.where(flip[:, None, None, None], images.flip(-1), images)
    if spec.rotate_deg > 0:
        angles = (torch.rand(n, generator=generator) * 2 - 1) * spec.rotate_deg
        images = rotate_batch(images, angles).clamp(0.0, 1.0)
    return images, attrs


def split(dataset, train_fraction: float, seed: int):
    """Deterministic disjoint train/test split."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    g = torch.Generator().manual_seed(seed)
    perm = torch.randperm(n, generator=g)
    n_train = int(round(n * train_fraction))
    return Subset(dataset, perm[:n_train].sort().values), Subset(dataset, perm[n_train:].sort().values)


def iter_batches(dataset, batch_size: int, generator: torch.Generator | None = None, shuffle: bool = True):
    n = len(dataset)
    order = torch.randperm(n, generator=generator) if shuffle else torch.arange(n)
    for start in range(0, n, batch_size):
        yield dataset.get_batch(order[start: start + batch_size])


def load_dataset(spec: DatasetSpec):
    if spec.source == "synthetic":
        return make_synthetic(spec.n_samples, spec)
    if not spec.root or not spec.attr_file:
        raise ValueError("folder datasets need 'root' and 'attr_file'")
    return load_folder(spec.root, spec.attr_file, spec)


def parse_attr_vector(text: str, attr_names) -> torch.Tensor:
    """Parse ``"1,0,1"`` or a named list ``"is_red,has_border"`` into a {0,1} vector."""
    items = [t.strip() for t in text.split(",") if t.strip()]
    if items and all(t in ("0", "1") for t in items):
        if len(items) != len(attr_names):
            raise ValueError(f"attribute vector has {len(items)} entries, expected {len(attr_names)}")
        return torch.tensor([float(t) for t in items])
    vec = torch.zeros(len(attr_names))
    for t in items:
        if t not in attr_names:
            raise ValueError(f"unknown attribute name {t!r}")
        vec[list(attr_names).index(t)] = 1.0
    return vec
