"""Synthetic data and rejection-frequency experiments.

Variants are drawn as Z ~ N(0, rho) with rho built from a ~ U[0, sqrt(rho0)]^J
(off-diagonals of aa'), traits as X_k = gamma_k' Z + V_k with
V ~ N(0, [[1, cov_v], [cov_v, 1]]), and the summary data are per-variant
univariable regressions plus the sample LD matrix (or a Wishart-perturbed
reference LD).

Every replicate draws from its own stream seeded by (seed, grid index,
replicate index), so tables do not depend on how replicates are spread
across worker processes.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, PropColocError
from .gmm import Method, prop_coloc_full
from .selective import DEFAULT_DRAWS, build_selection, lm_test, prop_coloc_cond, prop_coloc_naive
from .summary import JointEffects, SummaryDataset, prune, select_top_k, to_joint_effects

log = logging.getLogger(__name__)

CAUSAL_EFFECT = 0.5
LD_MIN_EIG = 1e-6
LD_ATTEMPTS = 100
BLOCK_SIZE = 25
DESIGNS = ("single_causal", "multi_causal")


@dataclass(frozen=True)
class SimConfig:
    """One grid point of a simulation experiment.

    ``wishart_df`` is serialized as ``lambda``; when it is None the summary
    data carry the sample LD matrix of the simulated genotypes. ``effect`` is
    the per-variant causal effect size (0.5 in every published design).
    """

    n: int
    J: int = 40
    rho0: float = 0.8
    xi: float = 1.0
    eta0: float = 0.5
    delta: float = 0.0
    cov_v: float = 0.3
    wishart_df: int | None = None
    replicates: int = 1000
    seed: int = 0
    design: str = "single_causal"
    prune_r2: float | None = None
    top_k: int | None = None
    effect: float = CAUSAL_EFFECT

    def __post_init__(self):
        if self.n < 3 or self.J < 2:
            raise InputError("need n >= 3 and J >= 2")
        if not 0.0 <= self.xi <= 1.0:
            raise InputError(f"xi must lie in [0, 1], got {self.xi}")
        if not 0.0 <= self.rho0 < 1.0:
            raise InputError(f"rho0 must lie in [0, 1), got {self.rho0}")
        if self.replicates < 1:
            raise InputError("replicates must be >= 1")
        if self.design not in DESIGNS:
            raise InputError(f"design must be one of {DESIGNS}, got {self.design!r}")
        if self.design == "multi_causal" and not 0.0 <= self.delta <= 1.0:
            raise InputError(f"delta must lie in [0, 1], got {self.delta}")
        if not -1.0 < self.cov_v < 1.0:
            raise InputError("cov_v must lie in (-1, 1)")
        if not math.isfinite(self.effect):
            raise InputError("effect must be finite")
        if self.wishart_df is not None and self.wishart_df <= self.J:
            raise InputError(f"lambda must exceed J={self.J}, got {self.wishart_df}")

    @classmethod
    def from_dict(cls, d: dict) -> SimConfig:
        d = dict(d)
        if "lambda" in d:
            d["wishart_df"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown SimConfig field(s): {', '.join(sorted(unknown))}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("wishart_df")
        return d


def load_grid(path) -> list[SimConfig]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed grid JSON ({exc})") from None
    if not isinstance(raw, list) or not all(isinstance(x, dict) for x in raw):
        raise InputError(f"{path}: grid must be a JSON array of objects")
    if not raw:
        raise InputError(f"{path}: empty grid")
    return [SimConfig.from_dict(x) for x in raw]


@dataclass(frozen=True, eq=False)
class Truth:
    ld: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    causal: tuple[int, int]
    sigma_v: np.ndarray

    def standardized(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Effects and residual covariance on the unit-variance trait scale."""
        v1 = self.gamma1 @ self.ld @ self.gamma1 + self.sigma_v[0, 0]
        v2 = self.gamma2 @ self.ld @ self.gamma2 + self.sigma_v[1, 1]
        sd = np.sqrt([v1, v2])
        return self.gamma1 / sd[0], self.gamma2 / sd[1], self.sigma_v / np.outer(sd, sd)

    def joint_effects(self, n: int) -> JointEffects:
        """Population counterpart of ``to_joint_effects`` at sample size n."""
        g1, g2, sv = self.standardized()
        return JointEffects.from_kronecker(g1, g2, self.ld, sv, n)

    def eta_standardized(self, eta0: float) -> float:
        """Proportionality constant of the standardized effects."""
        v1 = self.gamma1 @ self.ld @ self.gamma1 + self.sigma_v[0, 0]
        v2 = self.gamma2 @ self.ld @ self.gamma2 + self.sigma_v[1, 1]
        return eta0 * math.sqrt(v2 / v1)


def gen_ld(config: SimConfig, rng: np.random.Generator) -> tuple[np.ndarray, tuple[int, int]]:
    """True LD matrix and causal variant indices (j1, j2).

    In the single-causal design the (j1, j2) correlation is set to xi; xi = 1
    is realised by giving both traits the same causal variant.
    """
    J = config.J
    for _ in range(LD_ATTEMPTS):
        a = rng.uniform(0.0, math.sqrt(config.rho0), J)
        ld = np.outer(a, a)
        np.fill_diagonal(ld, 1.0)
        j1, j2 = (int(j) for j in rng.choice(J, size=2, replace=False))
        if config.design == "single_causal":
            if config.xi == 1.0:
                j2 = j1
            else:
                ld[j1, j2] = ld[j2, j1] = config.xi
        if np.linalg.eigvalsh(ld).min() > LD_MIN_EIG:
            return ld, (j1, j2)
    raise InputError(
        f"could not draw a positive definite LD matrix with xi={config.xi}, "
        f"rho0={config.rho0} in {LD_ATTEMPTS} attempts"
    )


def causal_effects(config: SimConfig, causal: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """(gamma1, gamma2) with gamma1 = eta0 * gamma2 under proportional colocalization."""
    j1, j2 = causal
    g1 = np.zeros(config.J)
    g2 = np.zeros(config.J)
    b = config.effect
    if config.design == "single_causal":
        g1[j1] = b * config.eta0
        g2[j2] = b
    else:
        d = config.delta
        g2[j1] = b * (1 - d)
        g2[j2] = b * (1 + d)
        g1[j1] = b * (1 + d) * config.eta0
        g1[j2] = b * (1 - d) * config.eta0
    return g1, g2


def univariable_regressions(Z: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-variant OLS with intercept of each column of X on each column of Z.

    Returns 2 x J slopes and homoscedastic standard errors.
    """
    n = Z.shape[0]
    Zc = Z - Z.mean(axis=0)
    Xc = X - X.mean(axis=0)
    sxx = np.sum(Zc**2, axis=0)
    sxy = Zc.T @ Xc
    syy = np.sum(Xc**2, axis=0)
    beta = sxy / sxx[:, None]
    rss = syy[None, :] - beta * sxy
    se = np.sqrt(np.maximum(rss, 0.0) / (n - 2) / sxx[:, None])
    return beta.T, se.T


def wishart_perturb(ld_true: np.ndarray, lam: int, rng: np.random.Generator,
                    rescale: bool = True) -> np.ndarray:
    """Wishart(scale = ld_true / lam, df = lam) draw by Bartlett decomposition.

    The raw draw has expectation ld_true; with ``rescale`` it is returned as
    a correlation matrix.
    """
    J = ld_true.shape[0]
    if lam <= J:
        raise InputError(f"Wishart degrees of freedom must exceed J={J}, got {lam}")
    L = np.linalg.cholesky(ld_true / lam)
    A = np.tril(rng.standard_normal((J, J)), k=-1)
    A[np.diag_indices(J)] = np.sqrt(rng.chisquare(lam - np.arange(J)))
    LA = L @ A
    W = LA @ LA.T
    W = 0.5 * (W + W.T)
    if not rescale:
        return W
    d = np.sqrt(np.diag(W))
    R = W / np.outer(d, d)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


def gen_dataset(config: SimConfig, rng: np.random.Generator, ld: np.ndarray | None = None,
                causal: tuple[int, int] | None = None) -> tuple[SummaryDataset, Truth]:
    """Simulate n individuals and reduce them to summary statistics.

    ``ld`` and ``causal`` fix the true LD matrix and causal variants; they
    are drawn with :func:`gen_ld` when omitted.
    """
    if ld is None or causal is None:
        ld, causal = gen_ld(config, rng)
    n, J = config.n, config.J
    g1, g2 = causal_effects(config, causal)
    sigma_v = np.array([[1.0, config.cov_v], [config.cov_v, 1.0]])

    Z = rng.standard_normal((n, J)) @ np.linalg.cholesky(ld).T
    V = rng.standard_normal((n, 2)) @ np.linalg.cholesky(sigma_v).T
    X = Z @ np.column_stack([g1, g2]) + V

    beta, se = univariable_regressions(Z, X)
    if config.wishart_df is None:
        ld_used = np.corrcoef(Z, rowvar=False)
    else:
        ld_used = wishart_perturb(ld, config.wishart_df, rng)
    trait_cor = float(np.corrcoef(X[:, 0], X[:, 1])[0, 1])
    ds = SummaryDataset(
        variant_ids=tuple(f"v{j + 1}" for j in range(J)),
        beta=beta,
        se=se,
        ld=ld_used,
        trait_cor=trait_cor,
        n=n,
    )
    return ds, Truth(ld, g1, g2, (int(causal[0]), int(causal[1])), sigma_v)


@dataclass(frozen=True)
class ReplicateOutcome:
    reject: bool | None
    statistic: float = math.nan
    acceptance: float = math.nan
    error: str | None = None


def replicate_rng(seed: int, grid_index: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, grid_index, replicate]))


def run_replicate(config: SimConfig, grid_index: int, replicate: int, methods: Sequence[Method],
                  nu: float = 0.05, draws: int = DEFAULT_DRAWS,
                  seed: int | None = None) -> dict[Method, ReplicateOutcome]:
    """Generate, preprocess and test one replicate."""
    rng = replicate_rng(config.seed if seed is None else seed, grid_index, replicate)
    ds, _ = gen_dataset(config, rng)
    cond_seed = int(rng.integers(0, 2**63 - 1))
    out: dict[Method, ReplicateOutcome] = {}
    try:
        if config.prune_r2 is not None:
            ds = prune(ds, config.prune_r2)
        if config.top_k is not None:
            ds = select_top_k(ds, config.top_k)
        je = to_joint_effects(ds)
        sel = build_selection(je) if je.J >= 2 else None
    except PropColocError as exc:
        return {m: ReplicateOutcome(None, error=f"{type(exc).__name__}: {exc}") for m in methods}
    for m in methods:
        try:
            if m is Method.FULL:
                res = prop_coloc_full(je, nu)
            elif sel is None:
                raise InputError("fewer than 2 variants left after preprocessing")
            elif m is Method.NAIVE:
                res = prop_coloc_naive(je, sel, nu)
            elif m is Method.CONDITIONAL:
                res = prop_coloc_cond(je, nu, draws=draws, seed=cond_seed)
            else:
                res = lm_test(je, sel, nu)
        except PropColocError as exc:
            out[m] = ReplicateOutcome(None, error=f"{type(exc).__name__}: {exc}")
            continue
        acc = res.diagnostics.get("acceptance_rate", math.nan)
        out[m] = ReplicateOutcome(bool(res.reject), float(res.statistic), float(acc))
    return out


def _run_block(args) -> list[dict[Method, ReplicateOutcome]]:
    config, grid_index, start, stop, methods, nu, draws, seed = args
    return [run_replicate(config, grid_index, r, methods, nu, draws, seed) for r in range(start, stop)]


TSV_COLUMNS = (
    "method", "design", "n", "J", "xi", "eta0", "delta", "lambda", "rejection_rate",
    "replicates", "failures", "mean_stat", "mean_acceptance", "prune_r2", "top_k", "mc_se",
)


@dataclass(frozen=True)
class RejectionRow:
    method: Method
    grid_index: int
    config: SimConfig
    rejection_rate: float
    replicates: int
    failures: int
    mean_stat: float
    mean_acceptance: float

    @property
    def mc_se(self) -> float:
        if self.replicates == 0:
            return math.nan
        p = self.rejection_rate
        return math.sqrt(p * (1 - p) / self.replicates)

    def values(self) -> tuple:
        c = self.config
        return (self.method.value, c.design, c.n, c.J, c.xi, c.eta0, c.delta, c.wishart_df,
                self.rejection_rate, self.replicates, self.failures, self.mean_stat,
                self.mean_acceptance, c.prune_r2, c.top_k, self.mc_se)


def _cell(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class RejectionTable:
    rows: list[RejectionRow] = field(default_factory=list)

    def get(self, method: Method | str, grid_index: int = 0) -> RejectionRow:
        method = Method(method)
        for r in self.rows:
            if r.method is method and r.grid_index == grid_index:
                return r
        raise KeyError((method.value, grid_index))

    def rate(self, method: Method | str, grid_index: int = 0) -> float:
        return self.get(method, grid_index).rejection_rate

    def to_tsv(self) -> str:
        lines = ["\t".join(TSV_COLUMNS)]
        lines += ["\t".join(_cell(v) for v in r.values()) for r in self.rows]
        return "\n".join(lines) + "\n"

    def write_tsv(self, path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8", newline="\n")


def _aggregate(method: Method, grid_index: int, config: SimConfig,
               outcomes: Iterable[ReplicateOutcome]) -> RejectionRow:
    ok = [o for o in outcomes if o.error is None]
    failures = config.replicates - len(ok)
    if not ok:
        return RejectionRow(method, grid_index, config, math.nan, 0, failures, math.nan, math.nan)
    rate = sum(o.reject for o in ok) / len(ok)
    mean_stat = math.fsum(o.statistic for o in ok) / len(ok)
    acc = math.fsum(o.acceptance for o in ok) / len(ok) if method is Method.CONDITIONAL else math.nan
    return RejectionRow(method, grid_index, config, rate, len(ok), failures, mean_stat, acc)


def parse_methods(methods: Iterable[str | Method]) -> list[Method]:
    out: list[Method] = []
    for m in methods:
        try:
            mm = Method(m)
        except ValueError:
            raise InputError(f"unknown method {m!r}; choose from full, naive, cond, lm") from None
        if mm not in out:
            out.append(mm)
    if not out:
        raise InputError("no test methods requested")
    return out


def run_experiment(grid: Sequence[SimConfig], methods: Iterable[str | Method], parallelism: int = 1,
                   nu: float = 0.05, draws: int = DEFAULT_DRAWS,
                   seed: int | None = None) -> RejectionTable:
    """Rejection frequencies of the requested tests at every grid point.

    ``seed`` overrides the per-config seeds. Failed replicates (degenerate
    statistics) are logged and excluded from that method's denominator.
    """
    if not grid:
        raise InputError("empty simulation grid")
    methods = parse_methods(methods)
    tasks = []
    for gi, cfg in enumerate(grid):
        for start in range(0, cfg.replicates, BLOCK_SIZE):
            stop = min(start + BLOCK_SIZE, cfg.replicates)
            tasks.append((cfg, gi, start, stop, methods, nu, draws, seed))

    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            blocks = list(pool.map(_run_block, tasks))
    else:
        blocks = [_run_block(t) for t in tasks]

    per_grid: list[list[dict[Method, ReplicateOutcome]]] = [[] for _ in grid]
    for task, block in zip(tasks, blocks):
        per_grid[task[1]].extend(block)

    table = RejectionTable()
    for gi, cfg in enumerate(grid):
        reps = per_grid[gi]
        for m in methods:
            outcomes = [r[m] for r in reps]
            for i, o in enumerate(outcomes):
                if o.error is not None:
                    log.warning("grid %d replicate %d %s failed: %s", gi, i, m.value, o.error)
            table.rows.append(_aggregate(m, gi, cfg, outcomes))
    return table
