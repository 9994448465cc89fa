"""Synthetic count-response benchmark with known true variables.

``p`` true predictors X of mixed kinds drive a Poisson response through a
log link; ``p`` decoys Z of the same kinds are drawn independently of it.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._rng import rng_for
from .data import CATEGORICAL, NUMERIC_CONTINUOUS, NUMERIC_DISCRETE, Column, Dataset, write_csv

GAUSSIAN, DISCRETE, CATEG, POISSON = "gaussian", "discrete", "categorical", "poisson"
PALETTE = (GAUSSIAN, DISCRETE, CATEG, POISSON)
_COLUMN_KIND = {
    GAUSSIAN: NUMERIC_CONTINUOUS,
    DISCRETE: NUMERIC_DISCRETE,
    CATEG: CATEGORICAL,
    POISSON: NUMERIC_DISCRETE,
}
GAUSSIAN_MEANS = (-1.0, 0.0, 1.0)


@dataclass(frozen=True)
class SimSpec:
    p: int
    n: int
    mix: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    beta_seed: int = 0
    data_seed: int = 0
    linear_clip: float = 10.0
    max_levels: int = 10
    discrete_range: tuple[int, int] = (1, 10)
    poisson_rate: float = 1.0
    min_abs_beta: float = 0.0
    beta: tuple[float, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if len(self.mix) != 4 or min(self.mix) < 0 or not np.isclose(sum(self.mix), 1.0):
            raise ValueError("mix must be 4 non-negative proportions summing to 1")
        if self.linear_clip <= 0:
            raise ValueError("linear_clip must be positive")
        if not 2 <= self.max_levels:
            raise ValueError("max_levels must be >= 2")


def variable_kinds(p: int, mix: Sequence[float]) -> list[str]:
    """Kinds for ``p`` variables: largest-remainder counts, handed out round-robin."""
    raw = np.asarray(mix, dtype=float) * p
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: p - counts.sum()]:
        counts[i] += 1
    kinds = []
    while len(kinds) < p:
        for i, k in enumerate(PALETTE):
            if counts[i] > 0:
                kinds.append(k)
                counts[i] -= 1
    return kinds


def _draw_coefs(rng, size, min_abs):
    out = rng.standard_normal(size)
    if min_abs > 0:
        bad = np.abs(out) <= min_abs
        while bad.any():
            out[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(out) <= min_abs
    return out


def _draw_column(rng, kind, n, mu, n_levels, spec):
    if kind == GAUSSIAN:
        return rng.normal(mu, 1.0, n)
    if kind == DISCRETE:
        lo, hi = spec.discrete_range
        return rng.integers(lo, hi + 1, n).astype(float)
    if kind == POISSON:
        return rng.poisson(spec.poisson_rate, n).astype(float)
    return rng.integers(0, n_levels, n)


def _as_column(name, kind, raw):
    if kind != CATEG:
        return Column(name, _COLUMN_KIND[kind], raw)
    # level names are the raw codes; level order is first appearance
    order: dict[int, int] = {}
    codes = np.array([order.setdefault(int(c), len(order)) for c in raw], dtype=np.int64)
    return Column(name, CATEGORICAL, codes, tuple(str(c + 1) for c in order))


def simulate(spec: SimSpec) -> Dataset:
    """Draw a dataset per ``spec``; columns are X1..Xp then Z1..Zp."""
    kinds = variable_kinds(spec.p, spec.mix)
    design = rng_for(spec.beta_seed, "design")
    n_levels = [int(design.integers(2, spec.max_levels + 1)) if k == CATEG else 0 for k in kinds]
    means, gi = [], 0
    for k in kinds:
        means.append(GAUSSIAN_MEANS[gi % 3] if k == GAUSSIAN else 0.0)
        gi += k == GAUSSIAN
    n_coef = [L - 1 if k == CATEG else 1 for k, L in zip(kinds, n_levels)]
    if spec.beta is not None:
        beta = np.asarray(spec.beta, dtype=float)
        if beta.size != sum(n_coef):
            raise ValueError(f"beta override needs {sum(n_coef)} coefficients")
    else:
        beta = _draw_coefs(rng_for(spec.beta_seed, "beta"), sum(n_coef), spec.min_abs_beta)

    xr, zr = rng_for(spec.data_seed, "X"), rng_for(spec.data_seed, "Z")
    eta = np.zeros(spec.n)
    x_cols, z_cols, pos = [], [], 0
    for j, (k, L, mu) in enumerate(zip(kinds, n_levels, means)):
        raw = _draw_column(xr, k, spec.n, mu, L, spec)
        if k == CATEG:
            coefs = np.concatenate([[0.0], beta[pos : pos + L - 1]])
            eta += coefs[raw]
        else:
            eta += beta[pos] * raw
        pos += n_coef[j]
        x_cols.append(_as_column(f"X{j + 1}", k, raw))
        z_cols.append(_as_column(f"Z{j + 1}", k, _draw_column(zr, k, spec.n, mu, L, spec)))

    clipped = np.clip(eta, -spec.linear_clip, spec.linear_clip)
    y = rng_for(spec.data_seed, "Y").poisson(np.exp(clipped))
    truth = np.array([True] * spec.p + [False] * spec.p)
    meta = {
        "simulation": {
            "p": spec.p,
            "n": spec.n,
            "mix": list(spec.mix),
            "beta_seed": spec.beta_seed,
            "data_seed": spec.data_seed,
            "linear_clip": spec.linear_clip,
            "clip_rate": float(np.mean(np.abs(eta) > spec.linear_clip)),
            "kinds": kinds,
            "n_levels": n_levels,
            "beta": beta.tolist(),
        }
    }
    return Dataset(tuple(x_cols + z_cols), y, truth_mask=truth, meta=meta)


def rate_vector(data: Dataset) -> np.ndarray:
    """exp of the clipped linear predictor, recomputed from a simulated dataset's columns."""
    sim = data.meta["simulation"]
    beta = np.asarray(sim["beta"])
    eta = np.zeros(data.n)
    pos = 0
    for col, kind, L in zip(data.columns[: sim["p"]], sim["kinds"], sim["n_levels"]):
        if kind == CATEG:
            raw = np.array([int(name) - 1 for name in col.levels])[col.values]
            eta += np.concatenate([[0.0], beta[pos : pos + L - 1]])[raw]
            pos += L - 1
        else:
            eta += beta[pos] * col.values
            pos += 1
    return np.exp(np.clip(eta, -sim["linear_clip"], sim["linear_clip"]))


def write_simulation(data: Dataset, directory, target_name: str = "y") -> tuple[Path, Path]:
    """Write ``data.csv`` and the ``truth.json`` sidecar (true names, kinds, settings)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / "data.csv"
    truth_path = directory / "truth.json"
    write_csv(data, csv_path, target_name=target_name)
    sidecar = {
        "target": target_name,
        "true_variables": data.true_variables,
        "schema": data.kinds,
        "simulation": data.meta.get("simulation", {}),
    }
    truth_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, truth_path


def sweep_variable_counts(base: SimSpec, totals: Sequence[int], config, threads: int | None = 1) -> list[dict]:
    """Run the selection pipeline on simulations with ``total/2`` true variables each.

    Returns one row per total: total variables, SP, SA, VI_min, seconds.
    """
    from .pipeline import run_lolo_dcv

    rows = []
    for total in totals:
        if total < 2 or total % 2:
            raise ValueError(f"variable totals must be even and >= 2, got {total}")
        data = simulate(replace(base, p=total // 2, beta=None))
        start = time.perf_counter()
        report = run_lolo_dcv(data, config, threads=threads)
        rows.append(
            {
                "total_vars": total,
                "SP": report.sp_sa["SP"],
                "SA": report.sp_sa["SA"],
                "VI_min": report.vi_min.vi_min,
                "selected": len(report.selected),
                "seconds": time.perf_counter() - start,
            }
        )
    return rows
