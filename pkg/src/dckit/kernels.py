"""Kernel families, Gram matrices, random-feature embeddings, and the kernel-only MMD."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, DomainError, ShapeError

FAMILIES = ("gamma_exponential", "empirical_ntk", "random_feature", "nfk", "pullback")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters.

    ``scale`` is the c in exp(-c r^gamma) and the target Gaussian scale for random
    features; ``feature_dim``/``seed`` configure the random Fourier map; ``model``
    references the network behind empirical-NTK/NFK kernels; ``encoder``/``base``
    define a pullback kernel k(g_e(x1), g_e(x2)).
    """

    family: str
    gamma: float = 2.0
    scale: float = 1.0
    feature_dim: int = 0
    seed: int = 0
    model: object = None
    encoder: object = None
    base: "KernelSpec | None" = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        if self.family == "gamma_exponential" and not (0.0 < self.gamma <= 2.0):
            raise ConfigError("gamma must lie in (0, 2]")
        if self.scale <= 0:
            raise ConfigError("scale c must be positive")
        if self.family == "random_feature" and self.feature_dim < 1:
            raise ConfigError("random_feature kernels need feature_dim >= 1")
        if self.family in ("empirical_ntk", "nfk") and self.model is None:
            raise ConfigError(f"{self.family} kernels need a model reference")
        if self.family == "pullback":
            if self.base is None or self.encoder is None:
                raise ConfigError("pullback kernels wrap exactly one base spec plus an encoder")
            if self.base.family == "pullback":
                raise ConfigError("pullback kernels cannot nest")

    def describe(self) -> dict:
        d = {"family": self.family, "scale": self.scale}
        if self.family == "gamma_exponential":
            d["gamma"] = self.gamma
        if self.family == "random_feature":
            d["feature_dim"] = self.feature_dim
            d["seed"] = self.seed
        if self.family == "pullback":
            d["base"] = self.base.describe()
        return d


def gaussian_spec(scale: float = 1.0) -> KernelSpec:
    return KernelSpec(family="gamma_exponential", gamma=2.0, scale=scale)


def median_heuristic(x: np.ndarray) -> float:
    """Median of the positive pairwise Euclidean distances (1.0 when degenerate)."""
    x = _as_points(x)
    if x.shape[0] < 2:
        return 1.0
    d = cdist(x, x)
    vals = d[np.triu_indices_from(d, k=1)]
    vals = vals[vals > 0]
    if vals.size == 0:
        return 1.0
    return float(np.median(vals))


def median_heuristic_spec(x: np.ndarray, gamma: float = 2.0) -> KernelSpec:
    """Gaussian-family spec with c = 1 / (2 median^gamma), the standard default bandwidth."""
    med = median_heuristic(x)
    return KernelSpec(family="gamma_exponential", gamma=gamma, scale=1.0 / (2.0 * med**gamma))


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise ShapeError(f"point sets must be 1-D or 2-D, got shape {x.shape}")
    return x


_RFF_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _rff_params(n: int, p: int, scale: float, seed: int):
    """Frequencies and phases for random Fourier features, cached per (seed, p, n, c)."""
    key = (seed, p, n, float(scale))
    if key not in _RFF_CACHE:
        rng = np.random.default_rng(seed)
        # w ~ N(0, 2c I) makes E[phi(x).phi(y)] -> exp(-c ||x-y||^2)
        w = rng.normal(0.0, np.sqrt(2.0 * scale), size=(p, n))
        b = rng.uniform(0.0, 2.0 * np.pi, size=p)
        _RFF_CACHE[key] = (w, b)
    return _RFF_CACHE[key]


def random_feature_map(spec: KernelSpec, x: np.ndarray, seed: int | None = None) -> np.ndarray:
    """Random Fourier features sqrt(2/p) cos(Wx + b) for one point or a batch.

    A 1-D input is one n-dimensional point; a 2-D input is a batch of rows.
    """
    if spec.family != "random_feature":
        raise ConfigError("random_feature_map needs a random_feature spec")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else _as_points(x)
    w, b = _rff_params(pts.shape[1], spec.feature_dim, spec.scale, spec.seed if seed is None else seed)
    phi = np.sqrt(2.0 / spec.feature_dim) * np.cos(pts @ w.T + b)
    return phi[0] if single else phi


def feature_map_batch(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Batch feature map, shape (B, p)."""
    return random_feature_map(spec, _as_points(x))


def feature_map_input_jacobian(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Jacobian d phi / d x for a batch, shape (B, p, n)."""
    pts = _as_points(x)
    w, b = _rff_params(pts.shape[1], spec.feature_dim, spec.scale, spec.seed)
    s = -np.sqrt(2.0 / spec.feature_dim) * np.sin(pts @ w.T + b)  # (B, p)
    return s[:, :, None] * w[None, :, :]


def _model_list(model) -> list:
    return list(model) if isinstance(model, (list, tuple)) else [model]


def _ntk_rows(model, x: np.ndarray) -> np.ndarray:
    j = model.output_param_jacobian(_as_points(x))
    return j.reshape(j.shape[0], -1)


def _nfk_features(model, x: np.ndarray) -> np.ndarray:
    _, feats = model.forward_batch(_as_points(x))
    if len(feats) >= 2:
        return feats[-2]  # final hidden activation
    return feats[-1]


def gram_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Entrywise kernel matrix k(a_i, b_j)."""
    a = _as_points(a)
    b = _as_points(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"point dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if spec.family == "gamma_exponential":
        r = cdist(a, b)
        return np.exp(-spec.scale * r**spec.gamma)
    if spec.family == "random_feature":
        return feature_map_batch(spec, a) @ feature_map_batch(spec, b).T
    if spec.family == "empirical_ntk":
        models = _model_list(spec.model)
        g = np.zeros((a.shape[0], b.shape[0]))
        for m in models:
            g += _ntk_rows(m, a) @ _ntk_rows(m, b).T
        return g / len(models)
    if spec.family == "nfk":
        models = _model_list(spec.model)
        g = np.zeros((a.shape[0], b.shape[0]))
        for m in models:
            g += _nfk_features(m, a) @ _nfk_features(m, b).T
        return g / len(models)
    if spec.family == "pullback":
        return gram_matrix(spec.base, spec.encoder.encode(a), spec.encoder.encode(b))
    raise ConfigError(f"unknown family {spec.family!r}")


def kernel_eval(spec: KernelSpec, x1: np.ndarray, x2: np.ndarray) -> float:
    """Kernel value for a single pair of points."""
    x1 = np.asarray(x1, dtype=np.float64).reshape(1, -1)
    x2 = np.asarray(x2, dtype=np.float64).reshape(1, -1)
    return float(gram_matrix(spec, x1, x2)[0, 0])


def kernel_grad2(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of k(a_i, b_j) w.r.t. b_j, shape (A, B, n). Analytic families only."""
    a = _as_points(a)
    b = _as_points(b)
    if spec.family == "gamma_exponential":
        diff = b[None, :, :] - a[:, None, :]  # (A, B, n)
        r = np.sqrt(np.sum(diff * diff, axis=2))
        k = np.exp(-spec.scale * r**spec.gamma)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(r > 0, r ** (spec.gamma - 2.0), 0.0)
        return (-spec.scale * spec.gamma) * (k * coef)[:, :, None] * diff
    if spec.family == "random_feature":
        phi_a = feature_map_batch(spec, a)  # (A, p)
        jac_b = feature_map_input_jacobian(spec, b)  # (B, p, n)
        return np.einsum("ap,bpn->abn", phi_a, jac_b)
    if spec.family == "pullback":
        inner = kernel_grad2(spec.base, spec.encoder.encode(a), spec.encoder.encode(b))
        jac = spec.encoder.encode_jacobian()  # (m, n): d z / d x
        return np.einsum("abm,mn->abn", inner, jac)
    raise ConfigError(f"no analytic gradient for family {spec.family!r}")


def has_analytic_grad(spec: KernelSpec) -> bool:
    if spec.family in ("gamma_exponential", "random_feature"):
        return True
    if spec.family == "pullback":
        return spec.base.family in ("gamma_exponential", "random_feature") and hasattr(
            spec.encoder, "encode_jacobian"
        )
    return False


def mmd_squared(spec: KernelSpec, t: np.ndarray, s: np.ndarray) -> float:
    """Biased V-statistic MMD^2 with full double sums, clamped at zero.

    MMD^2 = mean k(T, T) - 2 mean k(T, S) + mean k(S, S).
    """
    t = _as_points(t)
    s = _as_points(s)
    if t.shape[0] == 0 or s.shape[0] == 0:
        raise DomainError("both point sets must be nonempty")
    ktt = gram_matrix(spec, t, t).mean()
    kts = gram_matrix(spec, t, s).mean()
    kss = gram_matrix(spec, s, s).mean()
    val = float(ktt - 2.0 * kts + kss)
    if val < 0:
        val = 0.0 if val > -1e-9 else val
    return val


def mmd_squared_grad_s(spec: KernelSpec, t: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Analytic gradient of the V-statistic MMD^2 w.r.t. every point of S."""
    t = _as_points(t)
    s = _as_points(s)
    n_t, n_s = t.shape[0], s.shape[0]
    # d/ds_j [mean k(S,S)] = (2 / M^2) sum_a d2 k(s_a, s_j); the a=j term carries the
    # total derivative of the diagonal entry via kernel symmetry
    g_ss = kernel_grad2(spec, s, s).sum(axis=0) * (2.0 / (n_s * n_s))
    g_ts = kernel_grad2(spec, t, s).sum(axis=0) * (2.0 / (n_t * n_s))
    return g_ss - g_ts
