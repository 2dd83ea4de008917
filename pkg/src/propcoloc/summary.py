"""Summary association data and multivariable effect reconstruction.

A :class:`SummaryDataset` holds univariable regression results for two traits
over the same J variants, the signed variant correlation (LD) matrix, the
trait correlation and the sample size. :func:`to_joint_effects` turns it into
standardized multivariable effects with their joint covariance, which is the
input of every test in the package.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .chisq import chi_sq_upper
from .errors import InputError, SingularLDError

log = logging.getLogger(__name__)

ASSOC_COLUMNS = ("variant_id", "beta1", "se1", "beta2", "se2")

LD_ABS_TOL = 1e-9
LD_SYM_TOL = 1e-6
LD_MIN_EIG = 1e-8
SIGMA_V_FLOOR = 0.01
PD_CLIP = 1e-6
DUPLICATE_R = 1.0 - 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SummaryDataset:
    """Univariable summary statistics for two traits on a common variant set.

    Attributes:
        variant_ids: variant names, in row order.
        beta: 2 x J univariable regression coefficients (row k = trait k+1).
        se: 2 x J standard errors, strictly positive.
        ld: J x J signed variant correlation matrix.
        trait_cor: correlation between the two traits, in (-1, 1).
        n: sample size.
    """

    variant_ids: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    ld: np.ndarray
    trait_cor: float
    n: int

    def __post_init__(self):
        ids = tuple(str(v) for v in self.variant_ids)
        beta = np.asarray(self.beta, dtype=float)
        se = np.asarray(self.se, dtype=float)
        ld = np.asarray(self.ld, dtype=float)
        J = len(ids)
        if beta.shape != (2, J) or se.shape != (2, J):
            raise InputError(
                f"dimension mismatch: {J} variants but beta {beta.shape} and se {se.shape}"
            )
        if ld.shape != (J, J):
            raise InputError(f"dimension mismatch: {J} variants but LD matrix is {ld.shape}")
        if J == 0:
            raise InputError("dataset has no variants")
        if len(set(ids)) != J:
            raise InputError("variant ids are not unique")
        for name, arr in (("beta", beta), ("se", se), ("ld", ld)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"non-finite entries in {name}")
        if np.any(se <= 0):
            raise InputError("standard errors must be strictly positive")
        if np.max(np.abs(ld)) > 1.0 + LD_ABS_TOL:
            raise InputError("LD entries must lie in [-1, 1]")
        asym = np.max(np.abs(ld - ld.T))
        if asym > LD_SYM_TOL:
            raise InputError(f"LD matrix is not symmetric (max asymmetry {asym:.3g})")
        if np.max(np.abs(np.diag(ld) - 1.0)) > LD_SYM_TOL:
            raise InputError("LD matrix must have unit diagonal")
        ld = np.clip(0.5 * (ld + ld.T), -1.0, 1.0)
        np.fill_diagonal(ld, 1.0)
        trait_cor = float(self.trait_cor)
        if not -1.0 < trait_cor < 1.0:
            raise InputError(f"trait correlation must lie in (-1, 1), got {trait_cor}")
        n = self.n
        if int(n) != n or n < 3:
            raise InputError(f"sample size must be an integer >= 3, got {n}")

        object.__setattr__(self, "variant_ids", ids)
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "se", _frozen(se))
        object.__setattr__(self, "ld", _frozen(ld))
        object.__setattr__(self, "trait_cor", trait_cor)
        object.__setattr__(self, "n", int(n))

    @property
    def J(self) -> int:
        return len(self.variant_ids)

    @property
    def z(self) -> np.ndarray:
        """2 x J Wald statistics beta / se."""
        return self.beta / self.se

    def pvalues(self) -> np.ndarray:
        """2 x J two-sided univariable p-values."""
        z2 = self.z**2
        return np.vectorize(lambda v: chi_sq_upper(1, v))(z2)

    def subset(self, idx: Sequence[int]) -> SummaryDataset:
        idx = np.asarray(idx, dtype=int)
        return SummaryDataset(
            variant_ids=tuple(self.variant_ids[i] for i in idx),
            beta=self.beta[:, idx],
            se=self.se[:, idx],
            ld=self.ld[np.ix_(idx, idx)],
            trait_cor=self.trait_cor,
            n=self.n,
        )

    def swap_traits(self) -> SummaryDataset:
        return SummaryDataset(
            variant_ids=self.variant_ids,
            beta=self.beta[::-1],
            se=self.se[::-1],
            ld=self.ld,
            trait_cor=self.trait_cor,
            n=self.n,
        )


@dataclass(frozen=True, eq=False)
class JointEffects:
    """Standardized multivariable effects and their joint covariance.

    ``sigma_gamma`` is the covariance of sqrt(n) * (gamma1_hat', gamma2_hat')'
    in trait-major order, so its (k, l) J x J block is sigma_v[k, l] * inv(ld).
    """

    gamma1_hat: np.ndarray
    gamma2_hat: np.ndarray
    sigma_gamma: np.ndarray
    sigma_v: np.ndarray
    n: int
    ld: np.ndarray
    variant_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for name in ("gamma1_hat", "gamma2_hat", "sigma_gamma", "sigma_v", "ld"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        J = self.gamma1_hat.shape[0]
        if self.gamma2_hat.shape != (J,) or self.sigma_gamma.shape != (2 * J, 2 * J):
            raise InputError("inconsistent JointEffects dimensions")
        if not self.variant_ids:
            object.__setattr__(self, "variant_ids", tuple(f"v{j + 1}" for j in range(J)))

    @property
    def J(self) -> int:
        return self.gamma1_hat.shape[0]

    def block(self, k: int, l: int) -> np.ndarray:
        """J x J block Sigma_{gamma,kl} for traits k, l in {1, 2}."""
        J = self.J
        return self.sigma_gamma[(k - 1) * J : k * J, (l - 1) * J : l * J]

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.gamma1_hat, self.gamma2_hat])

    @classmethod
    def from_kronecker(
        cls, gamma1, gamma2, ld, sigma_v, n: int, variant_ids: Sequence[str] = ()
    ) -> JointEffects:
        ld = np.asarray(ld, dtype=float)
        ld_inv = _sym_inverse(ld)
        sigma_v = np.asarray(sigma_v, dtype=float)
        return cls(
            gamma1_hat=np.asarray(gamma1, dtype=float),
            gamma2_hat=np.asarray(gamma2, dtype=float),
            sigma_gamma=np.kron(sigma_v, ld_inv),
            sigma_v=sigma_v,
            n=int(n),
            ld=ld,
            variant_ids=tuple(variant_ids),
        )


def _sym_inverse(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    inv = (v / w) @ v.T
    return 0.5 * (inv + inv.T)


def nearest_pd(m: np.ndarray, floor: float = PD_CLIP) -> np.ndarray:
    """Clip eigenvalues of a symmetric matrix from below at ``floor``."""
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    if w.min() >= floor:
        return m
    out = (v * np.maximum(w, floor)) @ v.T
    return 0.5 * (out + out.T)


def standardized_effects(beta, se, n: int) -> np.ndarray:
    """Univariable trait-variant correlations recovered from beta/se.

    For an ordinary least-squares fit with intercept, t = r * sqrt(n - 2) / sqrt(1 - r^2),
    so r = t / sqrt(t^2 + n - 2) exactly.
    """
    t = np.asarray(beta, dtype=float) / np.asarray(se, dtype=float)
    return t / np.sqrt(t**2 + (n - 2))


def to_joint_effects(ds: SummaryDataset) -> JointEffects:
    """Reconstruct standardized multivariable effects from summary data.

    With r_k the J-vector of trait-k/variant correlations, the multivariable
    standardized coefficients are inv(ld) @ r_k and the residual covariance
    follows from the explained variance of each trait.
    """
    w = np.linalg.eigvalsh(ds.ld)
    if w.min() <= LD_MIN_EIG:
        raise SingularLDError(float(w.min()))
    ld_inv = _sym_inverse(ds.ld)
    r = standardized_effects(ds.beta, ds.se, ds.n)
    g1 = ld_inv @ r[0]
    g2 = ld_inv @ r[1]

    s11 = max(1.0 - g1 @ ds.ld @ g1, SIGMA_V_FLOOR)
    s22 = max(1.0 - g2 @ ds.ld @ g2, SIGMA_V_FLOOR)
    s12 = ds.trait_cor - g1 @ ds.ld @ g2
    sigma_v = nearest_pd(np.array([[s11, s12], [s12, s22]]))

    return JointEffects(
        gamma1_hat=g1,
        gamma2_hat=g2,
        sigma_gamma=np.kron(sigma_v, ld_inv),
        sigma_v=sigma_v,
        n=ds.n,
        ld=ds.ld,
        variant_ids=ds.variant_ids,
    )


def _strength(ds: SummaryDataset) -> np.ndarray:
    # |z| is monotone in the two-sided p-value and does not underflow
    return np.abs(ds.z)


def _rank(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score, ties to the lowest index."""
    return np.lexsort((np.arange(scores.size), -scores))


def prune(ds: SummaryDataset, r2_threshold: float) -> SummaryDataset:
    """Greedy LD pruning, strongest variants first.

    Variants are visited in order of their smallest p-value over the two
    traits; a variant is kept when its squared correlation with every
    variant kept so far is at most ``r2_threshold``. Perfectly correlated
    pairs are never both kept. The result keeps the input variant order.
    """
    if not 0.0 < r2_threshold <= 1.0:
        raise InputError(f"r2_threshold must lie in (0, 1], got {r2_threshold}")
    order = _rank(_strength(ds).max(axis=0))
    kept: list[int] = []
    for j in order:
        if kept:
            r = np.abs(ds.ld[j, kept])
            if np.any(r**2 > r2_threshold) or np.any(r >= DUPLICATE_R):
                continue
        kept.append(int(j))
    return ds.subset(sorted(kept))


def select_top_k(ds: SummaryDataset, k: int) -> SummaryDataset:
    """Keep the union of the k most significant variants for each trait."""
    if int(k) != k or k < 2:
        raise InputError(f"top-k needs an integer k >= 2, got {k}")
    s = _strength(ds)
    keep = set(_rank(s[0])[:k].tolist()) | set(_rank(s[1])[:k].tolist())
    if len(keep) < 2:
        raise InputError("top-k filtering left fewer than 2 variants")
    return ds.subset(sorted(keep))


def order_traits(ds: SummaryDataset) -> tuple[SummaryDataset, bool]:
    """Make the trait carrying the single strongest association trait 2.

    Returns the (possibly swapped) dataset and whether a swap happened.
    """
    s = _strength(ds)
    if s[0].max() > s[1].max():
        return ds.swap_traits(), True
    return ds, False


def _parse_floats(tokens: Sequence[str]) -> list[float] | None:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        return None


def load_summary(path_assoc, path_ld, trait_cor: float, n: int) -> SummaryDataset:
    """Read an association TSV and an LD matrix file.

    The association file needs a header with columns variant_id, beta1, se1,
    beta2, se2. The LD file holds J rows of whitespace-separated signed
    correlations in the same variant order, optionally preceded by a header
    row of variant ids. Exact duplicates (|r| = 1) are dropped, keeping the
    first occurrence.
    """
    path_assoc, path_ld = Path(path_assoc), Path(path_ld)
    with path_assoc.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = [c for c in ASSOC_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise InputError(f"{path_assoc}: missing columns {', '.join(missing)}")
        ids, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            vals = _parse_floats([rec[c] for c in ASSOC_COLUMNS[1:]])
            if vals is None:
                raise InputError(f"{path_assoc}:{lineno}: non-numeric association value")
            ids.append(rec["variant_id"])
            rows.append(vals)
    if not rows:
        raise InputError(f"{path_assoc}: no variants")
    a = np.array(rows)
    beta = np.vstack([a[:, 0], a[:, 2]])
    se = np.vstack([a[:, 1], a[:, 3]])

    with path_ld.open(encoding="utf-8") as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if lines and _parse_floats(lines[0][:1]) is None:
        header, lines = lines[0], lines[1:]
        if header != ids:
            raise InputError(f"{path_ld}: header variant ids do not match association file")
    ld_rows = []
    for i, toks in enumerate(lines):
        vals = _parse_floats(toks)
        if vals is None:
            raise InputError(f"{path_ld}: non-numeric entry in row {i + 1}")
        ld_rows.append(vals)
    if len({len(r) for r in ld_rows}) > 1:
        raise InputError(f"{path_ld}: ragged LD matrix")
    ld = np.array(ld_rows, dtype=float)
    if ld.ndim != 2 or ld.shape != (len(ids), len(ids)):
        raise InputError(
            f"dimension mismatch: {len(ids)} association rows but LD matrix is "
            f"{ld.shape[0]} x {ld.shape[1] if ld.ndim == 2 else 0}"
        )

    ds = SummaryDataset(tuple(ids), beta, se, ld, trait_cor, n)
    dup = _duplicate_variants(ds.ld)
    if dup:
        log.warning("dropping %d variant(s) perfectly correlated with an earlier variant", len(dup))
        ds = ds.subset([j for j in range(ds.J) if j not in dup])
    return ds


def _duplicate_variants(ld: np.ndarray) -> set[int]:
    dup: set[int] = set()
    J = ld.shape[0]
    for i in range(J):
        if i in dup:
            continue
        for j in range(i + 1, J):
            if abs(ld[i, j]) >= DUPLICATE_R:
                dup.add(j)
    return dup


def _fmt(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise InputError("cannot write non-finite value")
    return repr(x)


def write_summary(ds: SummaryDataset, path_assoc, path_ld, ld_header: bool = False) -> None:
    """Write the association TSV and LD matrix in the formats read by load_summary."""
    with Path(path_assoc).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(ASSOC_COLUMNS) + "\n")
        for j, vid in enumerate(ds.variant_ids):
            vals = (ds.beta[0, j], ds.se[0, j], ds.beta[1, j], ds.se[1, j])
            fh.write(vid + "\t" + "\t".join(_fmt(v) for v in vals) + "\n")
    with Path(path_ld).open("w", encoding="utf-8", newline="\n") as fh:
        if ld_header:
            fh.write("\t".join(ds.variant_ids) + "\n")
        for row in ds.ld:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")
