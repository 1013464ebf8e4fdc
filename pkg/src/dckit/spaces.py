"""Linear (PCA) encoder/decoder pair and the four matching/optimization regimes.

The decoder inverts the encoder only on the principal subspace span(W), so
latent-optimized condensates are confined to that subspace; the regime helpers
make the resulting injectivity/surjectivity caveats constructible.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError
from .kernels import KernelSpec, median_heuristic_spec, mmd_squared

REGIMES = ("input_input", "input_latent", "latent_input", "latent_latent")


@dataclass(frozen=True)
class LinearAutoencoder:
    """Orthonormal linear autoencoder: encode(x) = W^T (x - mean), decode(z) = W z + mean."""

    mean: np.ndarray  # (n,)
    basis: np.ndarray  # (n, m), orthonormal columns

    def __post_init__(self):
        mu = np.asarray(self.mean, dtype=np.float64)
        w = np.asarray(self.basis, dtype=np.float64)
        if w.ndim != 2 or mu.ndim != 1 or w.shape[0] != mu.shape[0]:
            raise ShapeError("basis must be (n, m) with an n-vector mean")
        n, m = w.shape
        if not 1 <= m <= n:
            raise ConfigError(f"latent dim must satisfy 1 <= m <= n, got m={m}, n={n}")
        gram = w.T @ w
        if np.max(np.abs(gram - np.eye(m))) > 1e-10:
            raise ValidationError("basis columns are not orthonormal")
        mu = mu.copy()
        w = w.copy()
        mu.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "basis", w)

    @property
    def input_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.basis.shape[1]

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"expected {self.input_dim}-dim points, got {x.shape[1]}")
        return (x - self.mean) @ self.basis

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.latent_dim:
            raise ShapeError(f"expected {self.latent_dim}-dim latents, got {z.shape[1]}")
        return z @ self.basis.T + self.mean

    def encode_jacobian(self) -> np.ndarray:
        """d encode / d x, shape (m, n); constant since the map is affine."""
        return self.basis.T

    def decode_jacobian(self) -> np.ndarray:
        return self.basis

    def to_text(self) -> str:
        payload = {
            "mean": [repr(float(v)) for v in self.mean],
            "basis_column_major": [repr(float(v)) for v in self.basis.ravel(order="F")],
            "shape": list(self.basis.shape),
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "LinearAutoencoder":
        d = json.loads(text)
        n, m = d["shape"]
        basis = np.asarray([float(v) for v in d["basis_column_major"]]).reshape((n, m), order="F")
        return cls(mean=np.asarray([float(v) for v in d["mean"]]), basis=basis)


def identity_autoencoder(n: int) -> LinearAutoencoder:
    """Identity encoder/decoder; makes all four regimes coincide."""
    return LinearAutoencoder(mean=np.zeros(n), basis=np.eye(n))


def fit_linear_autoencoder(data, m: int) -> LinearAutoencoder:
    """PCA fit: top-m principal directions of the centered features.

    Deterministic sign convention: the largest-magnitude entry of each column is
    made positive (first such entry on ties).
    """
    x = np.asarray(getattr(data, "features", data), dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigError("need at least two rows to fit")
    n = x.shape[1]
    if not 1 <= m < n:
        raise ConfigError(f"latent dim must satisfy 1 <= m < n, got m={m}, n={n}")
    mu = x.mean(axis=0)
    centered = x - mu
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    w = vt[:m].T
    for j in range(m):
        k = int(np.argmax(np.abs(w[:, j])))
        if w[k, j] < 0:
            w[:, j] = -w[:, j]
    return LinearAutoencoder(mean=mu, basis=w)


def push_forward_dataset(ae: LinearAutoencoder, points: np.ndarray, direction: str) -> np.ndarray:
    """Empirical push-forward: apply the encoder or decoder row-wise."""
    if direction == "encode":
        return ae.encode(points)
    if direction == "decode":
        return ae.decode(points)
    raise ConfigError(f"direction must be 'encode' or 'decode', got {direction!r}")


def pullback_spec(base: KernelSpec, ae: LinearAutoencoder) -> KernelSpec:
    """Kernel on the input space obtained by encoding both arguments."""
    return KernelSpec(family="pullback", scale=base.scale, base=base, encoder=ae)


def _resolve_disc(disc, reference: np.ndarray, kernel: KernelSpec | None, model_batch):
    if callable(disc):
        return disc
    if disc == "mmd":
        spec = kernel if kernel is not None else median_heuristic_spec(reference)
        return lambda a, b: mmd_squared(spec, a, b)
    if disc == "w1":
        from .discrepancy import wasserstein1

        return wasserstein1
    if disc == "ipm_feature":
        if model_batch is None:
            raise ConfigError("ipm_feature regime objectives need a model_batch")

        def stat(a, b):
            best = 0.0
            for m in model_batch:
                _, fa = m.forward_batch(a)
                _, fb = m.forward_batch(b)
                ha = fa[-2] if len(fa) >= 2 else fa[-1]
                hb = fb[-2] if len(fb) >= 2 else fb[-1]
                diff = ha.mean(axis=0) - hb.mean(axis=0)
                best = max(best, float(diff @ diff))
            return best

        return stat
    raise ConfigError(f"unknown discrepancy selector {disc!r}")


def regime_pair(regime: str, ae: LinearAutoencoder, t_points: np.ndarray, sz_points: np.ndarray):
    """The matched point-set pair for each optimize/match quadrant."""
    t_points = np.asarray(t_points, dtype=np.float64)
    sz_points = np.asarray(sz_points, dtype=np.float64)
    if regime == "input_input":
        return t_points, sz_points
    if regime == "input_latent":
        return t_points, ae.decode(sz_points)
    if regime == "latent_input":
        return ae.encode(t_points), ae.encode(sz_points)
    if regime == "latent_latent":
        return ae.encode(t_points), sz_points
    raise ConfigError(f"regime must be one of {REGIMES}")


def regime_objective(
    regime: str,
    ae: LinearAutoencoder,
    t_points: np.ndarray,
    sz_points: np.ndarray,
    disc="mmd",
    kernel: KernelSpec | None = None,
    model_batch=None,
) -> float:
    """Evaluate one quadrant of the optimize/match table.

    ``sz_points`` lives in input space for input-optimized regimes and in latent
    space for latent-optimized ones; a dimension mismatch raises ConfigError.
    """
    sz = np.atleast_2d(np.asarray(sz_points, dtype=np.float64))
    expect = ae.input_dim if regime in ("input_input", "latent_input") else ae.latent_dim
    if sz.shape[1] != expect:
        raise ConfigError(
            f"regime {regime} optimizes {expect}-dim variables, got {sz.shape[1]}-dim"
        )
    a, b = regime_pair(regime, ae, t_points, sz)
    fn = _resolve_disc(disc, a, kernel, model_batch)
    return float(fn(a, b))
