"""Configuration-driven Monte-Carlo harness.

A single config describes an array, a layout of sources on spheres (circles
in 2D), a noise model with an optional parameter grid, the localizers to run,
and whether raw and/or denoised inputs are used.  Results aggregate to one
CSV row per (radius, noise level, algorithm, denoised flag, z) with RMSE,
the RMSE lower bound, position bias, TDOA residual statistics, and the count
of failed trials.

Determinism: the noise draw of trial t for source s at grid point g is seeded
by (master_seed, s, g, t), and aggregation follows a fixed iteration order,
so identical configs produce byte-identical CSV output regardless of how the
trial loop is executed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import ConfigError
from .geometry import SensorArray, canonical_pairs, cross_array, tdoa_full, tdoa_jacobian
from .incomplete import partial_subspace
from .localize import gs_locate_batch, ls_locate_batch, srd_ls_locate_batch, ml_refine
from .noise import NoiseModel, NoiseSpec, uniform_half_width
from .subspace import projection_operator, reduction_matrix

CSV_HEADER = "experiment,d,sigma,algo,denoised,z,rmse,rlb,bias,tdoa_mu,tdoa_sigma,fail_count"

ALGORITHMS = ("ls", "srdls", "gs", "ml")


class ArraySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    preset: Optional[Literal["cross7"]] = None
    positions: Optional[list[list[float]]] = None
    arm: float = 0.5

    @model_validator(mode="after")
    def _one_of(self):
        if (self.preset is None) == (self.positions is None):
            raise ValueError("specify exactly one of preset or positions")
        return self

    def build(self) -> SensorArray:
        if self.preset == "cross7":
            return cross_array(self.arm)
        try:
            return SensorArray(self.positions)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


class SourceSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    radii: list[float] = Field(min_length=1)
    count: int = 8
    center: Optional[list[float]] = None

    @field_validator("radii")
    @classmethod
    def _positive_radii(cls, v):
        if any(r <= 0 for r in v):
            raise ValueError("radii must be positive")
        return v

    @field_validator("count")
    @classmethod
    def _positive_count(cls, v):
        if v < 1:
            raise ValueError("count must be >= 1")
        return v


class NoiseSpecConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    model: Literal["gaussian", "uniform", "uniform_gaussian", "laplacian"] = "gaussian"
    sigma: Optional[float | list[float]] = None
    half_width: Optional[float] = None
    sample_rate: Optional[float] = None
    speed_of_sound: Optional[float] = None

    def _resolved_half_width(self) -> float:
        if self.half_width is not None:
            return self.half_width
        if self.sample_rate is not None:
            return uniform_half_width(self.sample_rate, self.speed_of_sound or 343.0)
        raise ConfigError(f"{self.model} noise needs half_width or sample_rate")

    def grid(self) -> list[Optional[NoiseModel]]:
        """Concrete models, one per grid point; None marks a zero-noise point."""
        if self.model in ("gaussian", "laplacian"):
            if self.sigma is None:
                raise ConfigError(f"{self.model} noise needs sigma")
            sigmas = self.sigma if isinstance(self.sigma, list) else [self.sigma]
            if not sigmas:
                raise ConfigError("sigma grid must be non-empty")
            out = []
            for s in sigmas:
                if s < 0:
                    raise ConfigError("sigma must be >= 0")
                if s == 0:
                    out.append(None)
                elif self.model == "gaussian":
                    out.append(NoiseModel.gaussian(s))
                else:
                    out.append(NoiseModel.laplacian(s))
            return out
        hw = self._resolved_half_width()
        if self.model == "uniform":
            return [NoiseModel.uniform(hw)]
        if self.sigma is None or isinstance(self.sigma, list):
            raise ConfigError("uniform_gaussian needs a scalar sigma")
        return [NoiseModel.uniform_gaussian(hw, self.sigma)]


class MissingSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    z: Optional[list[int]] = None                 # extras beyond the reference set
    pairs: Optional[list[list[int]]] = None       # explicit missing pairs
    max_combinations: int = 0                     # 0 = use all combinations

    @model_validator(mode="after")
    def _one_of(self):
        if (self.z is None) == (self.pairs is None):
            raise ValueError("specify exactly one of z or pairs")
        if self.z is not None and not self.z:
            raise ValueError("z list must be non-empty")
        return self


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str = "experiment"
    array: ArraySpec
    sources: SourceSpec
    noise: NoiseSpecConfig
    trials: int = 5000
    seed: int = 0
    algorithms: list[Literal["ls", "srdls", "gs", "ml"]] = Field(
        default_factory=lambda: ["ls", "srdls", "gs"])
    denoising: Literal["raw", "denoised", "both"] = "both"
    missing: Optional[MissingSpec] = None
    csv_name: str = "results.csv"
    speed_of_sound: float = 1.0  # geometry and TDOAs are in meters already

    @field_validator("trials")
    @classmethod
    def _positive_trials(cls, v):
        if v < 1:
            raise ValueError("trials must be >= 1")
        return v


@dataclass
class ResultRow:
    experiment: str
    d: float
    sigma: float
    algo: str
    denoised: int
    z: int
    rmse: float
    rlb: float
    bias: float
    tdoa_mu: float
    tdoa_sigma: float
    fail_count: int

    def to_csv(self) -> str:
        def fmt(v):
            return f"{v:.12g}"
        return ",".join([
            self.experiment, fmt(self.d), fmt(self.sigma), self.algo,
            str(self.denoised), str(self.z), fmt(self.rmse), fmt(self.rlb),
            fmt(self.bias), fmt(self.tdoa_mu), fmt(self.tdoa_sigma),
            str(self.fail_count),
        ])


def rmse(estimates, truth) -> float:
    """sqrt(mean ||x_i - x||^2), skipping non-finite (failed) estimates."""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    if estimates.size == 0:
        raise ValueError("rmse of an empty estimate list")
    truth = np.asarray(truth, dtype=float)
    good = np.isfinite(estimates).all(axis=1)
    if not good.any():
        return float("nan")
    err = estimates[good] - truth
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def fibonacci_sphere(count: int) -> np.ndarray:
    """Deterministic near-uniform unit-sphere points (golden-angle spiral)."""
    k = np.arange(count)
    z = 1.0 - (2.0 * k + 1.0) / count
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    rho = np.sqrt(np.clip(1.0 - z**2, 0.0, None))
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def source_layout(dim: int, radius: float, count: int, center=None) -> np.ndarray:
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    if dim == 3:
        pts = radius * fibonacci_sphere(count)
    else:
        theta = 2.0 * np.pi * np.arange(count) / count
        pts = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return pts + center


def _trial_noise(model: Optional[NoiseModel], q: int, master: int,
                 source_idx: int, grid_idx: int, trials: int) -> np.ndarray:
    """Per-trial seeded noise block; trial t depends only on the index tuple."""
    if model is None:
        return np.zeros((trials, q))
    out = np.empty((trials, q))
    for t in range(trials):
        rng = np.random.default_rng(
            np.random.SeedSequence((master, source_idx, grid_idx, t)))
        out[t] = model.sample(q, rng)
    return out


@dataclass
class _Tally:
    """Per-(algo, denoised, z) accumulation across sources."""
    rmse_per_source: list
    bias_per_source: list
    fails: int = 0

    def add(self, est: np.ndarray, ok: np.ndarray, truth: np.ndarray):
        good = ok & np.isfinite(est).all(axis=1)
        self.fails += int((~good).sum())
        if good.any():
            err = est[good] - truth
            self.rmse_per_source.append(float(np.sqrt(np.mean(np.sum(err**2, axis=1)))))
            self.bias_per_source.append(float(np.linalg.norm(err.mean(axis=0))))
        else:
            self.rmse_per_source.append(float("nan"))
            self.bias_per_source.append(float("nan"))


@dataclass
class _Moments:
    """Pooled first/second moments of TDOA residuals."""
    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0

    def add(self, values: np.ndarray):
        self.count += values.size
        self.total += float(values.sum())
        self.total_sq += float((values**2).sum())

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else float("nan")

    @property
    def std(self) -> float:
        if not self.count:
            return float("nan")
        var = self.total_sq / self.count - self.mean**2
        return float(np.sqrt(max(var, 0.0)))


def _estimate(algo, array, raw_nr, raw_full, dn_nr, dn_full, denoised,
              noise_spec, raw_gs_est, raw_gs_ok):
    """Dispatch one algorithm on the prepared inputs; returns (est, ok)."""
    if algo == "ls":
        x, _, ok = ls_locate_batch(array, dn_nr if denoised else raw_nr)
        return x, ok
    if algo == "srdls":
        x, _, fb = srd_ls_locate_batch(array, dn_nr if denoised else raw_nr)
        return x, ~fb
    if algo == "gs":
        if denoised:
            x, _, ok = gs_locate_batch(array, dn_full)
            return x, ok
        return raw_gs_est, raw_gs_ok
    # ml: Gauss-Newton refinement started from the matching GS estimate
    if denoised:
        start, _, ok = gs_locate_batch(array, dn_full)
        data = dn_full
    else:
        start, ok = raw_gs_est, raw_gs_ok
        data = raw_full
    est = np.full_like(start, np.nan)
    for t in range(start.shape[0]):
        if not ok[t]:
            continue
        res = ml_refine(array, data[t], noise_spec, start[t])
        est[t] = res.x if res.status == "ok" else np.nan
    return est, ok


def run_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """Execute the Monte-Carlo campaign described by config."""
    array = config.array.build()
    n, q, dim = array.n, array.q, array.dim
    if n < dim + 1 and any(a in ("ls", "srdls") for a in config.algorithms):
        raise ConfigError(f"ls/srdls need at least {dim + 1} reference TDOAs")
    if config.missing is not None and "ml" in config.algorithms:
        raise ConfigError("ml is only supported on complete measurement sets")
    denoised_flags = {"raw": [0], "denoised": [1], "both": [0, 1]}[config.denoising]
    models = config.noise.grid()
    z_full = q - n
    if config.missing is None:
        z_values = None
    elif config.missing.z is not None:
        z_values = sorted(set(config.missing.z))
        if any(z < 0 or z > z_full for z in z_values):
            raise ConfigError(f"z values must lie in 0..{z_full}")
    else:
        missing_pairs = [tuple(p) for p in config.missing.pairs]

    rows: list[ResultRow] = []
    pp_cache: dict[tuple, object] = {}

    for d_idx, d in enumerate(config.sources.radii):
        sources = source_layout(dim, d, config.sources.count, config.sources.center)
        for s_idx, model in enumerate(models):
            grid_idx = d_idx * len(models) + s_idx
            sigma_eff = float(np.sqrt(model.variance())) if model else 0.0
            # the projector is scale-invariant for iid noise, so a unit iid
            # covariance stands in at the zero-noise grid point
            base_spec = (NoiseSpec(model.covariance(q), model=model)
                         if model else NoiseSpec.iid(1.0, q))
            proj = projection_operator(n, base_spec)
            if config.missing is None:
                _run_complete(config, array, sources, d, grid_idx, model,
                              sigma_eff, base_spec, proj, denoised_flags,
                              z_full, rows)
            elif z_values is not None:
                _run_sweep(config, array, sources, d, grid_idx, model,
                           sigma_eff, denoised_flags, z_values, rows, pp_cache)
            else:
                _run_explicit(config, array, sources, d, grid_idx, model,
                              sigma_eff, denoised_flags, missing_pairs, rows,
                              pp_cache)
    rows.sort(key=lambda r: (r.experiment, r.d, r.sigma, r.z, r.algo, r.denoised))
    return rows


def _algo_list(config) -> list[str]:
    return list(config.algorithms) if config.algorithms else ["none"]


def _finish_rows(config, d, sigma_eff, z, tallies, moments, rlbs, rows):
    for (algo, den), tally in tallies.items():
        mom = moments[den]
        per_src = np.asarray(tally.rmse_per_source) if tally.rmse_per_source else np.array([np.nan])
        per_bias = np.asarray(tally.bias_per_source) if tally.bias_per_source else np.array([np.nan])
        rows.append(ResultRow(
            experiment=config.name, d=d, sigma=sigma_eff, algo=algo,
            denoised=den, z=z,
            rmse=float(np.nanmean(per_src)) if np.isfinite(per_src).any() else float("nan"),
            rlb=float(np.mean(rlbs)) if len(rlbs) else 0.0,
            bias=float(np.nanmean(per_bias)) if np.isfinite(per_bias).any() else float("nan"),
            tdoa_mu=mom.mean, tdoa_sigma=mom.std, fail_count=tally.fails,
        ))


def _run_complete(config, array, sources, d, grid_idx, model, sigma_eff,
                  base_spec, proj, denoised_flags, z_full, rows):
    n, q = array.n, array.q
    algos = _algo_list(config)
    tallies = {(a, den): _Tally([], []) for a in algos for den in denoised_flags}
    moments = {den: _Moments() for den in denoised_flags}
    rlbs = []
    for src_idx, x in enumerate(sources):
        tau = tdoa_full(array, x)
        if model is not None:
            _, rlb = _rlb(array, x, None, sigma_eff)
            rlbs.append(rlb)
        else:
            rlbs.append(0.0)
        eps = _trial_noise(model, q, config.seed, src_idx, grid_idx, config.trials)
        raw_full = tau + eps
        raw_nr = raw_full[:, :n]
        dn_full = raw_full @ proj.matrix.T
        dn_nr = dn_full[:, :n]
        if 0 in moments:
            moments[0].add(eps)
        if 1 in moments:
            moments[1].add(dn_full - tau)
        needs_gs_raw = any(a in ("gs", "ml") for a in algos) and 0 in denoised_flags
        if needs_gs_raw:
            raw_gs_est, _, raw_gs_ok = gs_locate_batch(array, raw_full)
        else:
            raw_gs_est = raw_gs_ok = None
        for algo in algos:
            if algo == "none":
                continue
            for den in denoised_flags:
                est, ok = _estimate(algo, array, raw_nr, raw_full, dn_nr,
                                    dn_full, den, base_spec, raw_gs_est,
                                    raw_gs_ok)
                tallies[(algo, den)].add(est, ok, x)
    _finish_rows(config, d, sigma_eff, z_full, tallies, moments, rlbs, rows)


def _rlb(array, x, avail_idx, sigma_eff):
    """RMSE lower bound for iid noise of std sigma_eff on the given pairs."""
    J = tdoa_jacobian(array, x)
    if avail_idx is not None:
        J = J[avail_idx]
    fim = J.T @ J / sigma_eff**2
    return fim, float(np.sqrt(np.trace(np.linalg.inv(fim))))


def _combinations(z, n, q, max_combinations):
    combos = list(itertools.combinations(range(n, q), z))
    if max_combinations and len(combos) > max_combinations:
        pick = np.unique(np.linspace(0, len(combos) - 1, max_combinations).round().astype(int))
        combos = [combos[k] for k in pick]
    return combos


def _run_sweep(config, array, sources, d, grid_idx, model, sigma_eff,
               denoised_flags, z_values, rows, pp_cache):
    n, q = array.n, array.q
    pairs = canonical_pairs(n)
    algos = _algo_list(config)
    G = reduction_matrix(n)
    trials = config.trials
    for z in z_values:
        combos = _combinations(z, n, q, config.missing.max_combinations)
        assignment = np.arange(trials) % len(combos)
        tallies = {(a, den): _Tally([], []) for a in algos for den in denoised_flags}
        moments = {den: _Moments() for den in denoised_flags}
        rlbs = []
        for src_idx, x in enumerate(sources):
            tau = tdoa_full(array, x)
            eps = _trial_noise(model, q, config.seed, src_idx, grid_idx, trials)
            raw_full = tau + eps
            raw_nr = raw_full[:, :n]
            dn_nr = np.empty((trials, n))
            dn_full = np.empty((trials, q))
            needs_gs_raw = "gs" in algos and 0 in denoised_flags
            raw_gs_est = np.full((trials, array.dim), np.nan)
            raw_gs_ok = np.zeros(trials, dtype=bool)
            rlb_sum = rlb_weight = 0.0
            for ci, combo in enumerate(combos):
                tmask = np.nonzero(assignment == ci)[0]
                if tmask.size == 0:
                    continue
                avail_idx = list(range(n)) + list(combo)
                key = (n, combo)
                if key not in pp_cache:
                    missing = [pairs[k] for k in range(q) if k not in set(avail_idx)]
                    pp_cache[key] = partial_subspace(
                        missing, NoiseSpec.iid(1.0, len(avail_idx)), n=n)
                pp = pp_cache[key]
                tau_s = raw_full[np.ix_(tmask, avail_idx)]
                dn_s = tau_s @ pp.matrix.T
                w = dn_s @ pp.reduction_pinv.T
                dn_nr[tmask] = w
                dn_full[tmask] = w @ G.T
                if 1 in moments:
                    moments[1].add(dn_s - tau[avail_idx])
                if 0 in moments:
                    moments[0].add(eps[np.ix_(tmask, avail_idx)])
                if needs_gs_raw:
                    avail_pairs = [pairs[k] for k in avail_idx]
                    est, _, ok = gs_locate_batch(array, tau_s, pairs=avail_pairs)
                    raw_gs_est[tmask] = est
                    raw_gs_ok[tmask] = ok
                if model is not None:
                    _, rlb = _rlb(array, x, avail_idx, sigma_eff)
                    rlb_sum += rlb * tmask.size
                    rlb_weight += tmask.size
            rlbs.append(rlb_sum / rlb_weight if rlb_weight else 0.0)
            for algo in algos:
                if algo == "none":
                    continue
                for den in denoised_flags:
                    est, ok = _estimate(algo, array, raw_nr, raw_full, dn_nr,
                                        dn_full, den, None, raw_gs_est,
                                        raw_gs_ok)
                    tallies[(algo, den)].add(est, ok, x)
        _finish_rows(config, d, sigma_eff, z, tallies, moments, rlbs, rows)


def _run_explicit(config, array, sources, d, grid_idx, model, sigma_eff,
                  denoised_flags, missing_pairs, rows, pp_cache):
    n, q = array.n, array.q
    pairs = canonical_pairs(n)
    algos = _algo_list(config)
    G = reduction_matrix(n)
    key = ("explicit", tuple(sorted(missing_pairs)))
    if key not in pp_cache:
        pp_cache[key] = partial_subspace(
            missing_pairs, NoiseSpec.iid(1.0, q - len(missing_pairs)), n=n)
    pp = pp_cache[key]
    if pp.dim_vs < n:
        raise ConfigError("missing set leaves the TDOA set unreconstructable "
                          f"(rank {pp.dim_vs} < {n})")
    avail_idx = [array.pair_position(p) for p in pp.available]
    avail_pairs = list(pp.available)
    have_all_refs = all(k in avail_idx for k in range(n))
    z = len(avail_idx) - n
    tallies = {(a, den): _Tally([], []) for a in algos for den in denoised_flags}
    moments = {den: _Moments() for den in denoised_flags}
    rlbs = []
    for src_idx, x in enumerate(sources):
        tau = tdoa_full(array, x)
        eps = _trial_noise(model, q, config.seed, src_idx, grid_idx, config.trials)
        tau_s = (tau + eps)[:, avail_idx]
        dn_s = tau_s @ pp.matrix.T
        w = dn_s @ pp.reduction_pinv.T
        dn_full = w @ G.T
        if 1 in moments:
            moments[1].add(dn_s - tau[avail_idx])
        if 0 in moments:
            moments[0].add(eps[:, avail_idx])
        if model is not None:
            _, rlb = _rlb(array, x, avail_idx, sigma_eff)
            rlbs.append(rlb)
        else:
            rlbs.append(0.0)
        raw_ref = (tau + eps)[:, :n] if have_all_refs else None
        needs_gs_raw = "gs" in algos and 0 in denoised_flags
        if needs_gs_raw:
            raw_gs_est, _, raw_gs_ok = gs_locate_batch(array, tau_s, pairs=avail_pairs)
        else:
            raw_gs_est = raw_gs_ok = None
        for algo in algos:
            if algo == "none":
                continue
            for den in denoised_flags:
                if not den and algo in ("ls", "srdls") and raw_ref is None:
                    bad = np.full((config.trials, array.dim), np.nan)
                    tallies[(algo, den)].add(bad, np.zeros(config.trials, bool), x)
                    continue
                est, ok = _estimate(algo, array, raw_ref, None, w, dn_full,
                                    den, None, raw_gs_est, raw_gs_ok)
                tallies[(algo, den)].add(est, ok, x)
    _finish_rows(config, d, sigma_eff, z, tallies, moments, rlbs, rows)


def render_csv(rows: list[ResultRow]) -> str:
    return "\n".join([CSV_HEADER] + [r.to_csv() for r in rows]) + "\n"


def write_csv(rows: list[ResultRow], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(render_csv(rows))
