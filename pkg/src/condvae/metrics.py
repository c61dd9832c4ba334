"""Frechet distance between Gaussian fits of image features."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from . import inference
from .data import iter_batches

logger = logging.getLogger(__name__)

EIG_TOL = 1e-6


class FeatureDimError(ValueError):
    pass


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_stats(features) -> FeatureStats:
    """Sample mean and unbiased covariance of an (N, F) feature matrix."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError("features must be a non-empty (N, F) matrix")
    n, f = feats.shape
    if n < f + 1:
        logger.warning("covariance from %d samples in %d dimensions is singular", n, f)
    mean = feats.mean(0)
    if n > 1:
        centred = feats - mean
        cov = centred.T @ centred / (n - 1)
    else:
        cov = np.zeros((f, f))
    return FeatureStats(mean, 0.5 * (cov + cov.T), n)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < -EIG_TOL * scale:
        raise np.linalg.LinAlgError(f"matrix is not positive semi-definite (eigenvalue {vals.min():.3g})")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """tr((A B)^(1/2)) via the symmetric form A^(1/2) B A^(1/2), which shares its eigenvalues."""
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < -EIG_TOL * scale:
        raise np.linalg.LinAlgError(f"product has a negative eigenvalue {vals.min():.3g}")
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray) -> np.ndarray:
    """The matrix (A B)^(1/2) = A^(1/2) (A^(1/2) B A^(1/2))^(1/2) A^(-1/2), for invertible A."""
    root_a = _psd_sqrt(cov_a)
    return root_a @ _psd_sqrt(root_a @ cov_b @ root_a) @ np.linalg.inv(root_a)


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    if a.dim != b.dim:
        raise FeatureDimError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    d = float(diff @ diff) + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * trace_sqrt_product(a.cov, b.cov)
    return max(d, 0.0)


class PooledPixels:
    """Default feature extractor: images average-pooled to ``size`` x ``size`` and flattened."""

    def __init__(self, size: int = 8):
        self.size = size

    def __call__(self, images: torch.Tensor) -> np.ndarray:
        pooled = F.adaptive_avg_pool2d(images.double(), self.size)
        return pooled.flatten(1).cpu().numpy()


def extract(images_iter, extractor: Callable) -> np.ndarray:
    return np.concatenate([extractor(batch) for batch in images_iter], axis=0)


def read_features(path) -> np.ndarray:
    """Read a feature table: first line ``N F``, then N rows of F numbers."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: first line must be 'N F'")
        n, f = int(header[0]), int(header[1])
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if data.shape != (n, f):
        raise ValueError(f"{path}: header says {n}x{f}, found {data.shape[0]}x{data.shape[1]}")
    return data


def write_features(path, features: np.ndarray):
    features = np.asarray(features, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(f"{features.shape[0]} {features.shape[1]}\n")
        np.savetxt(fh, features, fmt="%.17g")


def fid_protocol(model, test_dataset, mode: str, extractor: Callable | None = None, seed: int = 0,
                 batch_size: int = 256, reference_features: np.ndarray | None = None,
                 through_flow: bool = False) -> float:
    """Frechet distance of reconstructed ("recon") or label-conditioned samples ("sampled") against the test set.

    ``reference_features`` replaces the test-image features (e.g. precomputed
    Inception activations); their dimension must match the extractor's output.
    """
    if mode not in ("recon", "sampled"):
        raise ValueError(f"mode must be 'recon' or 'sampled', got {mode!r}")
    extractor = extractor or PooledPixels()
    real, fake = [], []
    offset = 0
    for x, y in iter_batches(test_dataset, batch_size, shuffle=False):
        if reference_features is None:
            real.append(extractor(x))
        if mode == "recon":
            out = inference.reconstruct(x, y, model)
        else:
            # offset by sample index so each batch draws fresh noise
            out = inference.sample_conditional(y, model, seed + offset, through_flow)
        fake.append(extractor(out))
        offset += x.shape[0]
    real = reference_features if reference_features is not None else np.concatenate(real)
    fake = np.concatenate(fake)
    if real.shape[1] != fake.shape[1]:
        raise FeatureDimError(f"reference features have {real.shape[1]} dims, extractor gives {fake.shape[1]}")
    return frechet_distance(fit_stats(real), fit_stats(fake))
