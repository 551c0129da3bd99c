"""Seeded Gaussian-process sampling for source terms, coefficients and boundaries.

All randomness in the toolkit flows through `derive_rng`: every consumer
derives its own stream from a global seed plus a purpose path, so datasets
come out identical no matter in which order (or in how many processes)
their tasks are produced.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

KERNEL_RBF = "rbf"
KERNEL_PERIODIC = "periodic"

_MAX_SAMPLE_POINTS = 20000
_JITTER_ESCALATIONS = 5


class CovarianceError(RuntimeError):
    """Covariance matrix failed Cholesky even after jitter escalation."""


def _path_words(path) -> list[int]:
    """Map a mixed int/str purpose path to stable 32-bit words."""
    words = []
    for part in path:
        if isinstance(part, (int, np.integer)):
            words.append(int(part) & 0xFFFFFFFF)
        else:
            digest = hashlib.sha256(str(part).encode("utf-8")).digest()
            words.extend(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return words


def derive_rng(seed: int, *path) -> np.random.Generator:
    """Derive an independent, reproducible stream from (seed, purpose path).

    Path elements may be ints (task indices, attempt counters) or strings
    (purpose tags such as "region" or "train-batch"). The same (seed, path)
    always yields the same stream, on any platform, regardless of what other
    streams were derived before.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_path_words(path)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GPConfig:
    """Zero-mean Gaussian-process prior.

    kernel "rbf" acts on points in the plane, kernel "periodic" on angles
    (period 2*pi). `seed` is the default stream used when `gp_sample` is not
    handed an explicit generator.
    """

    kernel: str = KERNEL_RBF
    lengthscale: float = 0.2
    variance: float = 1.0
    jitter: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.kernel not in (KERNEL_RBF, KERNEL_PERIODIC):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.lengthscale <= 0 or self.variance <= 0 or self.jitter <= 0:
            raise ValueError("lengthscale, variance and jitter must be positive")

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel,
            "lengthscale": self.lengthscale,
            "variance": self.variance,
            "jitter": self.jitter,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GPConfig":
        return cls(**d)


def gp_covariance(points, cfg: GPConfig) -> np.ndarray:
    """Exact kernel matrix at the sample locations (no jitter).

    RBF: variance * exp(-|x-y|^2 / (2 l^2)) for 2-d points.
    Periodic: variance * exp(-2 sin^2((a-b)/2) / l^2) for angles.
    """
    pts = np.asarray(points, dtype=float)
    if cfg.kernel == KERNEL_RBF:
        if pts.ndim == 1:
            pts = pts[:, None]
        sq = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        cov = cfg.variance * np.exp(-sq / (2.0 * cfg.lengthscale**2))
    else:
        ang = pts.reshape(-1)
        s = np.sin(0.5 * (ang[:, None] - ang[None, :]))
        cov = cfg.variance * np.exp(-2.0 * s**2 / cfg.lengthscale**2)
    # kernels are symmetric up to rounding of the pairwise distances
    return 0.5 * (cov + cov.T)


def gp_sample(points, cfg: GPConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw one GP sample at `points` via Cholesky factorization.

    Deterministic given (points, cfg, stream). Jitter on the diagonal starts
    at cfg.jitter and escalates x10 up to 5 times before giving up.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n > _MAX_SAMPLE_POINTS:
        raise ValueError(f"too many sample points ({n} > {_MAX_SAMPLE_POINTS})")
    if rng is None:
        rng = derive_rng(cfg.seed, "gp-sample")
    cov = gp_covariance(pts, cfg)
    jitter = cfg.jitter
    chol = None
    for _ in range(_JITTER_ESCALATIONS + 1):
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
    if chol is None:
        raise CovarianceError("covariance not PSD")
    z = rng.standard_normal(n)
    return chol @ z
