"""Discrepancy functionals between two finite datasets, plus hierarchy-bound checks."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from .data import LabeledDataset, SyntheticDataset, per_class_partition
from .errors import (
    ArchitectureError,
    ConfigError,
    DomainError,
    LabelError,
    ShapeError,
    ValidationError,
)
from .kernels import KernelSpec, median_heuristic_spec, mmd_squared
from .models import per_sample_loss

PROVENANCES = ("random_init", "pretrained", "trajectory_snapshots")


@dataclass(frozen=True)
class ModelBatch:
    """Finite stand-in for the hypothesis space: an ordered list of models."""

    models: tuple
    provenance: str = "random_init"

    def __post_init__(self):
        models = tuple(self.models)
        if len(models) == 0:
            raise ValidationError("model batch must be nonempty")
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"provenance must be one of {PROVENANCES}")
        dims = {getattr(m, "n_inputs", None) for m in models if hasattr(m, "n_inputs")}
        if len(dims) > 1:
            raise ArchitectureError(f"models disagree on input dimension: {dims}")
        object.__setattr__(self, "models", models)

    def __len__(self) -> int:
        return len(self.models)

    def __iter__(self):
        return iter(self.models)


@dataclass(frozen=True)
class DiscrepancyReport:
    """Named discrepancy values plus recorded hierarchy-bound checks."""

    values: dict[str, float]
    hierarchy_checks: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, v in self.values.items():
            if v < 0:
                raise ValidationError(f"discrepancy {name} is negative: {v}")

    def to_json(self) -> str:
        payload = {
            "values": {k: float(v) for k, v in sorted(self.values.items())},
            "hierarchy_checks": [
                {"name": n, "lhs": float(l), "rhs": float(r), "satisfied": bool(s)}
                for (n, l, r, s) in self.hierarchy_checks
            ],
            "params": self.params,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DiscrepancyReport":
        d = json.loads(text)
        checks = [
            (c["name"], c["lhs"], c["rhs"], c["satisfied"]) for c in d.get("hierarchy_checks", [])
        ]
        return cls(values=d["values"], hierarchy_checks=checks, params=d.get("params", {}))


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DomainError("point sets must be nonempty 2-D arrays")
    return x


def _matched_partitions(t, s):
    if t.class_count != s.class_count:
        raise LabelError(f"class counts differ: {t.class_count} vs {s.class_count}")
    return per_class_partition(t), per_class_partition(s)


def _class_features(batch_model, x: np.ndarray, layerwise: bool):
    _, feats = batch_model.forward_batch(x)
    if layerwise:
        return feats
    return [feats[-2] if len(feats) >= 2 else feats[-1]]


# ---------------------------------------------------------------------------
# model-based statistics (finite-batch IPM surrogates)
# ---------------------------------------------------------------------------


def ipm_feature_stat(batch: ModelBatch, t, s, layerwise: bool = False) -> float:
    """Max over the batch of the per-class squared feature-mean mismatch.

    Per class y the statistic is ||mean h(T^y) - mean h(S^y)||_2^2, summed over
    classes (and over layers when ``layerwise``). Uses the penultimate feature
    (final hidden activation) otherwise.
    """
    pt, ps = _matched_partitions(t, s)
    best = 0.0
    for m in batch:
        total = 0.0
        for y in range(t.class_count):
            ft = _class_features(m, t.features[pt[y]], layerwise)
            fs = _class_features(m, s.features[ps[y]], layerwise)
            for a, b in zip(ft, fs):
                diff = a.mean(axis=0) - b.mean(axis=0)
                total += float(diff @ diff)
        best = max(best, total)
    return best


def gradient_discrepancy(
    batch: ModelBatch, t, s, mode: str = "per_class", loss: str = "cross_entropy"
) -> float:
    """Max over the batch of the squared class-mean parameter-gradient mismatch.

    ``per_class`` differences the class-mean gradients class by class before
    summing; ``contrastive`` sums the class-mean gradients over classes first.
    """
    if mode not in ("per_class", "contrastive"):
        raise ConfigError(f"unknown mode {mode!r}")
    pt, ps = _matched_partitions(t, s)
    best = 0.0
    for m in batch:
        gt, gs = [], []
        for y in range(t.class_count):
            _, g1, _ = m.backward(t.features[pt[y]], t.labels[pt[y]], loss)
            _, g2, _ = m.backward(s.features[ps[y]], s.labels[ps[y]], loss)
            gt.append(g1)
            gs.append(g2)
        if mode == "per_class":
            total = sum(float((a - b) @ (a - b)) for a, b in zip(gt, gs))
        else:
            diff = np.sum(np.stack(gt), axis=0) - np.sum(np.stack(gs), axis=0)
            total = float(diff @ diff)
        best = max(best, total)
    return best


def moment_discrepancy(batch: ModelBatch, t, s) -> float:
    """Max over the batch of per-class first plus second (feature-wise variance) moment gaps."""
    pt, ps = _matched_partitions(t, s)
    best = 0.0
    for m in batch:
        total = 0.0
        for y in range(t.class_count):
            ft = _class_features(m, t.features[pt[y]], layerwise=False)[0]
            fs = _class_features(m, s.features[ps[y]], layerwise=False)[0]
            dm = ft.mean(axis=0) - fs.mean(axis=0)
            dv = ft.var(axis=0) - fs.var(axis=0)
            total += float(dm @ dm) + float(dv @ dv)
        best = max(best, total)
    return best


def loss_discrepancy(batch: ModelBatch, t, s, loss: str = "cross_entropy") -> float:
    """Finite-batch distribution discrepancy max_h |L(h, T) - L(h, S)|."""
    best = 0.0
    for m in batch:
        lt = m.mean_loss(t.features, t.labels, loss)
        ls = m.mean_loss(s.features, s.labels, loss)
        best = max(best, abs(lt - ls))
    return best


# ---------------------------------------------------------------------------
# model-free metrics
# ---------------------------------------------------------------------------


def wasserstein1(t, s, ground_metric: str = "euclidean") -> float:
    """Exact W1 between uniform empirical measures.

    Equal-size sets reduce to an optimal assignment (Hungarian method); unequal
    sizes solve the transport LP on the bipartite polytope exactly.
    """
    if ground_metric != "euclidean":
        raise ConfigError("only the euclidean ground metric is implemented")
    a = _points(t)
    b = _points(s)
    if a.shape[1] != b.shape[1]:
        raise ShapeError("point dimensions differ")
    d = cdist(a, b)
    n, m = d.shape
    if n == m:
        rows, cols = linear_sum_assignment(d)
        return float(d[rows, cols].sum() / n)
    # transport LP: minimize <gamma, d> with uniform marginals 1/n and 1/m
    c = d.ravel()
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise DomainError(f"transport LP failed: {res.message}")
    return float(res.fun)


def hausdorff_distance(t, s) -> float:
    """max of the two directed farthest-nearest Euclidean distances."""
    a = _points(t)
    b = _points(s)
    d = cdist(a, b)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def empirical_cf(x: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Empirical characteristic function values, one complex number per frequency."""
    phase = _points(x) @ np.asarray(freqs, dtype=np.float64).T  # (N, F)
    return np.exp(1j * phase).mean(axis=0)


def characteristic_discrepancy(
    t, s, freqs: np.ndarray | None = None, sample_count: int = 128, seed: int = 0
) -> float:
    """Sampled-sup gap between empirical characteristic functions.

    Frequencies default to ``sample_count`` standard normal draws from ``seed``.
    The value is bounded by 2 since characteristic functions have unit modulus.
    """
    a = _points(t)
    b = _points(s)
    if freqs is None:
        if sample_count < 1:
            raise DomainError("need at least one frequency")
        rng = np.random.default_rng(seed)
        freqs = rng.normal(size=(sample_count, a.shape[1]))
    freqs = np.atleast_2d(np.asarray(freqs, dtype=np.float64))
    if freqs.shape[0] < 1:
        raise DomainError("need at least one frequency")
    return float(np.abs(empirical_cf(a, freqs) - empirical_cf(b, freqs)).max())


# ---------------------------------------------------------------------------
# generalization / value / parameter discrepancies over a finite batch
# ---------------------------------------------------------------------------


def _argmin_loss(batch: ModelBatch, d, loss: str) -> int:
    losses = [m.mean_loss(d.features, d.labels, loss) for m in batch]
    return int(np.argmin(losses))  # first index wins ties


def generalization_discrepancy_finite(
    batch: ModelBatch,
    t,
    s,
    loss: str = "cross_entropy",
    eval_points: np.ndarray | None = None,
    eval_seed: int = 0,
    eval_extra: int = 256,
):
    """(gd, vd, pd) for the finite hypothesis set with first-index argmin tie-breaking.

    gd = |L(h*_S, T) - L(h*_T, T)|; vd is the sup output gap over T plus uniform
    sample points; pd is the parameter-vector distance (same architecture only).
    """
    i_t = _argmin_loss(batch, t, loss)
    i_s = _argmin_loss(batch, s, loss)
    h_t = batch.models[i_t]
    h_s = batch.models[i_s]
    gd = abs(h_s.mean_loss(t.features, t.labels, loss) - h_t.mean_loss(t.features, t.labels, loss))
    if eval_points is None:
        rng = np.random.default_rng(eval_seed)
        extra = rng.uniform(0.0, 1.0, size=(eval_extra, t.features.shape[1]))
        eval_points = np.vstack([t.features, extra])
    out_t, _ = h_t.forward_batch(eval_points)
    out_s, _ = h_s.forward_batch(eval_points)
    vd = float(np.abs(out_t - out_s).max())
    p_t = h_t.flat_params()
    p_s = h_s.flat_params()
    if p_t.shape != p_s.shape:
        raise ArchitectureError("pd requires a shared architecture across the batch")
    pd = float(np.linalg.norm(p_t - p_s))
    return gd, vd, pd


# ---------------------------------------------------------------------------
# the full report
# ---------------------------------------------------------------------------


def hierarchy_report(
    t,
    s,
    batch: ModelBatch | None = None,
    kernel: KernelSpec | None = None,
    loss: str = "cross_entropy",
    freq_count: int = 128,
    seed: int = 0,
    tol: float = 1e-9,
) -> DiscrepancyReport:
    """Compute every available discrepancy for (T, S) and record the bound checks.

    Records gd <= 2 dd in the finite-batch sense (dd over the same hypothesis set,
    loss criterion) and cd <= dd over an IPM whose test functions include the same
    frequencies (cos/sin pairs), for which the bound holds by construction.
    """
    values: dict[str, float] = {}
    checks: list = []
    params: dict = {"loss": loss, "freq_count": freq_count, "seed": seed}

    if kernel is None:
        kernel = median_heuristic_spec(t.features)
    params["kernel"] = kernel.describe()
    values["mmd"] = float(np.sqrt(max(mmd_squared(kernel, t.features, s.features), 0.0)))
    values["w1"] = wasserstein1(t.features, s.features)
    values["hausdorff"] = hausdorff_distance(t.features, s.features)

    rng = np.random.default_rng(seed)
    freqs = rng.normal(size=(freq_count, t.features.shape[1]))
    cd = characteristic_discrepancy(t.features, s.features, freqs=freqs)
    values["cd"] = cd
    # IPM over the span of the same cos/sin test pairs reproduces |F_T - F_S| exactly
    cf_gap = np.abs(empirical_cf(t.features, freqs) - empirical_cf(s.features, freqs))
    dd_freq = float(cf_gap.max())
    checks.append(("cd_le_dd_freq", cd, dd_freq, cd <= dd_freq + tol))

    if batch is not None:
        values["dd_feature"] = ipm_feature_stat(batch, t, s)
        values["dd_gradient"] = gradient_discrepancy(batch, t, s, loss=loss)
        values["dd_moment"] = moment_discrepancy(batch, t, s)
        gd, vd, pd = generalization_discrepancy_finite(batch, t, s, loss=loss, eval_seed=seed)
        values["gd"] = gd
        values["vd"] = vd
        values["pd"] = pd
        dd_loss = loss_discrepancy(batch, t, s, loss)
        checks.append(("gd_le_2dd", gd, 2.0 * dd_loss, gd <= 2.0 * dd_loss + tol))
        params["batch_size"] = len(batch)
        params["batch_provenance"] = batch.provenance
    return DiscrepancyReport(values=values, hierarchy_checks=checks, params=params)
