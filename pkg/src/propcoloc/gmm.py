"""Continuously-updating GMM for the proportionality constant.

For estimating function g(eta) = gamma1_hat - eta * gamma2_hat the weight
matrix is Omega(eta) = S11 - eta * (S12 + S12') + eta^2 * S22 and the criterion
is Q(eta) = g(eta)' Omega(eta)^-1 g(eta). Its minimum, scaled by n, is the
overidentification statistic of the full-panel proportionality test.

When the covariance blocks share a common matrix (S_kl = sigma_v[k, l] * A,
which is what summary data produce) Omega(eta) = s(eta) * A with a scalar
s(eta), and Q reduces to a ratio of two quadratics in eta. ``GmmProblem``
keeps that structure when it is known and evaluates Q in O(1) per point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .chisq import chi_sq_quantile, chi_sq_upper
from .errors import CriterionSingularError, InputError
from .summary import JointEffects

GRID_POINTS = 2001
GOLDEN_TOL = 1e-8
LOCAL_MIN_SLACK = 1e-6
MAX_BRACKET_DOUBLINGS = 3
PD_REL_TOL = 1e-10

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class Method(str, Enum):
    FULL = "full"
    NAIVE = "naive"
    CONDITIONAL = "cond"
    LM = "lm"


@dataclass(frozen=True, eq=False)
class GmmProblem:
    """Moment problem g(eta) = g0 - g1 * eta with covariance blocks s11, s12, s22.

    ``base``/``base_inv``/``sigma_v`` are set when s_kl = sigma_v[k, l] * base.
    """

    g0: np.ndarray
    g1: np.ndarray
    s11: np.ndarray
    s12: np.ndarray
    s22: np.ndarray
    n: int
    variant_index_map: tuple[int, ...] = ()
    base: np.ndarray | None = None
    base_inv: np.ndarray | None = None
    sigma_v: np.ndarray | None = None
    _quad: tuple[float, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        g0 = np.atleast_1d(np.asarray(self.g0, dtype=float))
        J = g0.shape[0]
        g1 = np.atleast_1d(np.asarray(self.g1, dtype=float))
        blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in (self.s11, self.s12, self.s22)]
        if g1.shape != (J,) or any(b.shape != (J, J) for b in blocks):
            raise InputError("inconsistent GmmProblem dimensions")
        object.__setattr__(self, "g0", g0)
        object.__setattr__(self, "g1", g1)
        for name, b in zip(("s11", "s12", "s22"), blocks):
            object.__setattr__(self, name, b)
        if not self.variant_index_map:
            object.__setattr__(self, "variant_index_map", tuple(range(J)))
        if self.base is not None:
            P = np.asarray(self.base_inv, dtype=float)
            sv = np.asarray(self.sigma_v, dtype=float)
            quad = (
                float(g0 @ P @ g0),
                float(g0 @ P @ g1),
                float(g1 @ P @ g1),
                float(sv[0, 0]),
                float(sv[0, 1]),
                float(sv[1, 1]),
            )
            object.__setattr__(self, "_quad", quad)

    @property
    def J(self) -> int:
        return self.g0.shape[0]

    @property
    def structured(self) -> bool:
        return self._quad is not None

    @classmethod
    def from_joint(cls, je: JointEffects) -> GmmProblem:
        s11, s12, s22 = je.block(1, 1), je.block(1, 2), je.block(2, 2)
        ld_inv = s11 / je.sigma_v[0, 0]
        sv = je.sigma_v
        scale = np.max(np.abs(je.sigma_gamma))
        kron = (
            np.allclose(s12, sv[0, 1] * ld_inv, rtol=0, atol=1e-10 * scale)
            and np.allclose(s22, sv[1, 1] * ld_inv, rtol=0, atol=1e-10 * scale)
            and np.allclose(je.ld @ ld_inv, np.eye(je.J), rtol=0, atol=1e-8)
        )
        return cls(
            g0=je.gamma1_hat,
            g1=je.gamma2_hat,
            s11=s11,
            s12=s12,
            s22=s22,
            n=je.n,
            base=ld_inv if kron else None,
            base_inv=je.ld if kron else None,
            sigma_v=sv if kron else None,
        )

    def restrict(self, idx: Sequence[int]) -> GmmProblem:
        """Sub-problem on the variants ``idx`` (I_star selection)."""
        idx = np.asarray(idx, dtype=int)
        ix = np.ix_(idx, idx)
        base = base_inv = None
        if self.structured:
            base = self.base[ix]
            base_inv = np.linalg.inv(base)
            base_inv = 0.5 * (base_inv + base_inv.T)
        return GmmProblem(
            g0=self.g0[idx],
            g1=self.g1[idx],
            s11=self.s11[ix],
            s12=self.s12[ix],
            s22=self.s22[ix],
            n=self.n,
            variant_index_map=tuple(self.variant_index_map[i] for i in idx),
            base=base,
            base_inv=base_inv,
            sigma_v=self.sigma_v,
        )

    def unstructured(self) -> GmmProblem:
        """Same problem with the common-factor shortcut switched off."""
        return GmmProblem(self.g0, self.g1, self.s11, self.s12, self.s22, self.n,
                          self.variant_index_map)


def estimating_function(p: GmmProblem, eta: float) -> np.ndarray:
    return p.g0 - p.g1 * eta


def omega(p: GmmProblem, eta: float) -> np.ndarray:
    """Large-sample variance of sqrt(n) * g(eta)."""
    m = p.s11 - (p.s12 + p.s12.T) * eta + p.s22 * eta**2
    return 0.5 * (m + m.T)


def _omega_stack(p: GmmProblem, etas: np.ndarray) -> np.ndarray:
    cross = p.s12 + p.s12.T
    e = etas[:, None, None]
    m = p.s11[None] - cross[None] * e + p.s22[None] * e**2
    return 0.5 * (m + np.swapaxes(m, 1, 2))


def q_values(p: GmmProblem, etas) -> np.ndarray:
    """Q(eta) on an array of points; +inf where Omega(eta) is not PD."""
    etas = np.atleast_1d(np.asarray(etas, dtype=float))
    if p.structured:
        a, b, c, v11, v12, v22 = p._quad
        s = v11 - 2.0 * v12 * etas + v22 * etas**2
        num = a - 2.0 * b * etas + c * etas**2
        out = np.full(etas.shape, np.inf)
        ok = s > PD_REL_TOL * max(v11, v22)
        out[ok] = np.maximum(num[ok], 0.0) / s[ok]
        return out
    out = np.empty(etas.shape)
    chunk = max(1, 2_000_000 // max(1, p.J * p.J))
    for start in range(0, etas.size, chunk):
        e = etas[start : start + chunk]
        w, v = np.linalg.eigh(_omega_stack(p, e))
        g = p.g0[None, :] - e[:, None] * p.g1[None, :]
        proj = np.einsum("kji,kj->ki", v, g)
        wmax = np.max(np.abs(w), axis=1)
        ok = (w[:, 0] > PD_REL_TOL * wmax) & (wmax > 0)
        safe = np.where(ok[:, None], w, 1.0)
        q = np.sum(proj**2 / safe, axis=1)
        out[start : start + chunk] = np.where(ok, q, np.inf)
    return out


def q_criterion(p: GmmProblem, eta: float) -> float:
    """CUE criterion g(eta)' Omega(eta)^-1 g(eta) at a single point."""
    if not math.isfinite(eta):
        raise InputError(f"eta must be finite, got {eta}")
    q = float(q_values(p, eta)[0])
    if math.isinf(q):
        raise CriterionSingularError(eta)
    return q


def golden_section(f: Callable[[float], float], lo: float, hi: float,
                   tol: float = GOLDEN_TOL, max_iter: int = 500) -> tuple[float, float]:
    """Minimize a unimodal f on [lo, hi]; returns (x, f(x))."""
    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _INVPHI * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _INVPHI * (hi - lo)
            f2 = f(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


class QMinimum(NamedTuple):
    eta_hat: float
    q_min: float
    diagnostics: dict


def initial_bracket(p: GmmProblem) -> float:
    ratio = np.max(np.abs(p.g0)) / max(1e-6, float(np.max(np.abs(p.g1))))
    return 10.0 * max(1.0, float(ratio))


def minimize_q(p: GmmProblem) -> QMinimum:
    """Global minimizer of Q over a symmetric bracket [-B, B].

    A 2001-point grid locates candidate basins; golden-section search then
    refines the best grid point and every grid-local minimum whose value is
    within 1e-6 of it. If the best grid point sits on the bracket edge the
    bracket is doubled, at most three times.
    """
    B = initial_bracket(p)
    for doubling in range(MAX_BRACKET_DOUBLINGS + 1):
        grid = np.linspace(-B, B, GRID_POINTS)
        q = q_values(p, grid)
        finite = np.isfinite(q)
        if not finite.any():
            raise CriterionSingularError(float(grid[GRID_POINTS // 2]), "at every grid point")
        ibest = int(np.argmin(q))
        edge = ibest in (0, GRID_POINTS - 1)
        if not edge or doubling == MAX_BRACKET_DOUBLINGS:
            break
        B *= 2.0

    qbest = q[ibest]
    left = np.concatenate([[np.inf], q[:-1]])
    right = np.concatenate([q[1:], [np.inf]])
    local = np.flatnonzero(finite & (q <= left) & (q <= right) & (q <= qbest + LOCAL_MIN_SLACK))
    candidates = sorted(set(local.tolist()) | {ibest})

    def f(x: float) -> float:
        return float(q_values(p, x)[0])

    eta_hat, q_min = float(grid[ibest]), float(qbest)
    for i in candidates:
        lo = grid[max(i - 1, 0)]
        hi = grid[min(i + 1, GRID_POINTS - 1)]
        x, fx = golden_section(f, lo, hi)
        if fx < q_min:
            eta_hat, q_min = float(x), float(fx)
    diag = {
        "bracket": float(B),
        "bracket_doublings": doubling,
        "edge_hit": bool(edge),
        "singular_grid_points": int(np.count_nonzero(~finite)),
        "local_minima": len(candidates),
    }
    return QMinimum(eta_hat, max(q_min, 0.0), diag)


@dataclass(frozen=True)
class TestResult:
    """Outcome of one proportional colocalization (or LM) test.

    ``df_or_critical`` holds the chi-square degrees of freedom for the full,
    naive and LM tests and the Monte-Carlo critical value for the
    conditional test.
    """

    __test__ = False  # not a pytest class

    method: Method
    statistic: float
    df_or_critical: float
    p_value: float
    eta_hat: float | None
    nu: float = 0.05
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def critical_value(self) -> float:
        if self.method is Method.CONDITIONAL:
            return float(self.df_or_critical)
        return chi_sq_quantile(int(self.df_or_critical), self.nu)

    @property
    def reject(self) -> bool:
        return self.statistic > self.critical_value

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "statistic": self.statistic,
            "df_or_critical": self.df_or_critical,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "eta_hat": self.eta_hat,
            "nu": self.nu,
            "reject": self.reject,
            "diagnostics": dict(self.diagnostics),
        }


def check_nu(nu: float) -> None:
    if not 0.0 < nu < 1.0:
        raise InputError(f"nu must lie in (0, 1), got {nu}")


def prop_coloc_full(je: JointEffects, nu: float = 0.05) -> TestResult:
    """Overidentification test of gamma1 = eta * gamma2 over all J variants."""
    check_nu(nu)
    if je.J < 2:
        raise InputError("the full test needs at least 2 variants")
    p = GmmProblem.from_joint(je)
    eta_hat, q_min, diag = minimize_q(p)
    stat = je.n * q_min
    df = je.J - 1
    return TestResult(
        method=Method.FULL,
        statistic=stat,
        df_or_critical=df,
        p_value=chi_sq_upper(df, stat),
        eta_hat=eta_hat,
        nu=nu,
        diagnostics=diag,
    )
