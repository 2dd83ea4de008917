"""Lead-variant tests: naive, selection-conditional and LM.

Lead variants are picked from multivariable t-statistics: j_star maximizes
|T_1j| over all variants and j_star_star maximizes |T_2j| over the rest. The
naive test compares the two-variant CUE statistic with chi-square(1). The
conditional test instead calibrates it against its null distribution given
the selection event and the sufficient statistic ``ell``, estimated by
Monte-Carlo over K ~ N(0, I_2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .chisq import chi_sq_upper
from .errors import DegenerateProjectionError, InputError, LowAcceptanceError
from .gmm import GmmProblem, Method, TestResult, check_nu, minimize_q, omega
from .summary import JointEffects

log = logging.getLogger(__name__)

DEFAULT_DRAWS = 10_000
MIN_ACCEPTED = 500
MAX_DRAWS = 1_000_000
DRAW_CHUNK = 100_000
DEGENERATE_G = 1e-12
CSTAR_FORMULA = "inv_sqrt(Omega_star) @ I_star @ C @ D_gamma"


@dataclass(frozen=True, eq=False)
class SelectionContext:
    t_stats: np.ndarray
    d_gamma: np.ndarray
    j_star: int
    j_star_star: int
    i_star: np.ndarray

    @property
    def J(self) -> int:
        return self.i_star.shape[1]

    @property
    def indices(self) -> tuple[int, int]:
        return self.j_star, self.j_star_star


@dataclass(frozen=True, eq=False)
class ConditionalMachinery:
    eta: float
    omega_star: np.ndarray
    omega_star_inv_sqrt: np.ndarray
    g_star_hat: np.ndarray
    m_star: np.ndarray
    c_star: np.ndarray
    ell: np.ndarray
    normalized_moment: np.ndarray


def select_leads(t1: np.ndarray, t2: np.ndarray) -> tuple[int, int]:
    """(j_star, j_star_star) from trait-1 and trait-2 t-statistics."""
    a1 = np.abs(t1)
    j_star = int(np.argmax(a1))
    a2 = np.abs(np.asarray(t2, dtype=float)).copy()
    a2[j_star] = -np.inf
    return j_star, int(np.argmax(a2))


def selection_from_t(t_stats: np.ndarray, d_gamma: np.ndarray) -> SelectionContext:
    t_stats = np.asarray(t_stats, dtype=float)
    J = t_stats.size // 2
    if J < 2:
        raise InputError("lead-variant selection needs at least 2 variants")
    if not np.all(np.isfinite(t_stats)):
        raise InputError("non-finite t-statistic")
    j1, j2 = select_leads(t_stats[:J], t_stats[J:])
    i_star = np.zeros((2, J))
    i_star[0, j1] = 1.0
    i_star[1, j2] = 1.0
    return SelectionContext(t_stats, np.asarray(d_gamma, dtype=float), j1, j2, i_star)


def build_selection(je: JointEffects) -> SelectionContext:
    """t-statistics T = D_gamma sqrt(n) (gamma1', gamma2')' and lead variants."""
    d = 1.0 / np.sqrt(np.diag(je.sigma_gamma))
    return selection_from_t(d * np.sqrt(je.n) * je.stacked, d)


def _inv_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.min() <= 0:
        raise DegenerateProjectionError("Omega_star is not positive definite")
    out = (v / np.sqrt(w)) @ v.T
    return 0.5 * (out + out.T)


def prop_coloc_naive(je: JointEffects, sel: SelectionContext, nu: float = 0.05) -> TestResult:
    """Two-lead-variant statistic against chi-square(1), ignoring selection."""
    check_nu(nu)
    p = GmmProblem.from_joint(je).restrict(sel.indices)
    eta_hat, q_min, diag = minimize_q(p)
    stat = je.n * q_min
    return TestResult(
        method=Method.NAIVE,
        statistic=stat,
        df_or_critical=1,
        p_value=chi_sq_upper(1, stat),
        eta_hat=eta_hat,
        nu=nu,
        diagnostics={**diag, "j_star": sel.j_star, "j_star_star": sel.j_star_star},
    )


def conditional_machinery(je: JointEffects, sel: SelectionContext, eta_eval: float) -> ConditionalMachinery:
    """Pieces of the conditional null distribution evaluated at ``eta_eval``."""
    J = je.J
    idx = list(sel.indices)
    s11, s12, s22 = je.block(1, 1), je.block(1, 2), je.block(2, 2)
    om = omega(GmmProblem.from_joint(je), eta_eval)
    om_star = om[np.ix_(idx, idx)]
    root = _inv_sqrt(om_star)

    g_star = -je.gamma2_hat[idx]
    om_star_inv = root @ root
    gg = float(g_star @ om_star_inv @ g_star)
    if je.n * gg < DEGENERATE_G:
        raise DegenerateProjectionError(f"n * G' Omega^-1 G = {je.n * gg:.3g}")
    u = root @ g_star
    m_star = np.eye(2) - np.outer(u, u) / gg
    m_star = 0.5 * (m_star + m_star.T)

    # cov(sqrt(n) g(eta), sqrt(n) gamma) = [S11 - eta S12', S12 - eta S22]
    C = np.hstack([s11 - s12.T * eta_eval, s12 - s22 * eta_eval])
    c_star = root @ C[idx] * sel.d_gamma[None, :]

    g_hat = je.gamma1_hat[idx] - je.gamma2_hat[idx] * eta_eval
    x = root @ (np.sqrt(je.n) * g_hat)
    ell = sel.t_stats - c_star.T @ x
    assert ell.shape == (2 * J,)
    return ConditionalMachinery(
        eta=float(eta_eval),
        omega_star=om_star,
        omega_star_inv_sqrt=root,
        g_star_hat=g_star,
        m_star=m_star,
        c_star=c_star,
        ell=ell,
        normalized_moment=x,
    )


def selection_mask(ell_k: np.ndarray, j_star: int, j_star_star: int) -> np.ndarray:
    """Columns of a 2J x N matrix of t-statistic draws that reproduce the selection."""
    J = ell_k.shape[0] // 2
    a1 = np.abs(ell_k[:J])
    a2 = np.abs(ell_k[J:])
    ok1 = a1[j_star] >= a1.max(axis=0)
    others = np.delete(a2, j_star, axis=0)
    ok2 = a2[j_star_star] >= others.max(axis=0)
    return ok1 & ok2


def conditional_reference(mach: ConditionalMachinery, sel: SelectionContext, draws: int,
                          rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Draws of K' M K inside the selection event.

    Starts with ``draws`` samples and keeps doubling the total while fewer
    than 500 are accepted, up to 1e6 draws. Returns the accepted statistics
    and the total number of draws made.
    """
    accepted: list[np.ndarray] = []
    n_acc = 0
    total = 0
    batch = draws
    while True:
        remaining = batch
        while remaining > 0:
            m = min(remaining, DRAW_CHUNK)
            K = rng.standard_normal((2, m))
            ell_k = mach.ell[:, None] + mach.c_star.T @ K
            keep = selection_mask(ell_k, sel.j_star, sel.j_star_star)
            Kk = K[:, keep]
            accepted.append(np.einsum("in,ij,jn->n", Kk, mach.m_star, Kk))
            n_acc += int(keep.sum())
            remaining -= m
        total += batch
        if n_acc >= MIN_ACCEPTED:
            break
        batch = min(total, MAX_DRAWS - total)
        if batch <= 0:
            raise LowAcceptanceError(n_acc, total)
    return np.concatenate(accepted), total


def prop_coloc_cond(je: JointEffects, nu: float = 0.05, draws: int = DEFAULT_DRAWS,
                    seed: int | None = None) -> TestResult:
    """Selection-adjusted lead-variant test with a Monte-Carlo critical value."""
    check_nu(nu)
    if draws < 1000:
        raise InputError(f"draws must be >= 1000, got {draws}")
    sel = build_selection(je)
    naive = prop_coloc_naive(je, sel, nu)
    s_obs = naive.statistic
    mach = conditional_machinery(je, sel, naive.eta_hat)
    rng = np.random.default_rng(seed)
    ref, total = conditional_reference(mach, sel, draws, rng)
    w_crit = float(np.quantile(ref, 1.0 - nu))
    p_value = (1.0 + np.count_nonzero(ref >= s_obs)) / (1.0 + ref.size)
    return TestResult(
        method=Method.CONDITIONAL,
        statistic=s_obs,
        df_or_critical=w_crit,
        p_value=float(p_value),
        eta_hat=naive.eta_hat,
        nu=nu,
        diagnostics={
            "accepted": int(ref.size),
            "draws": int(total),
            "acceptance_rate": ref.size / total,
            "j_star": sel.j_star,
            "j_star_star": sel.j_star_star,
            "naive_p_value": naive.p_value,
            "c_star_formula": CSTAR_FORMULA,
        },
    )


def lm_test(je: JointEffects, sel: SelectionContext, nu: float = 0.05) -> TestResult:
    """Lagrange-multiplier test of a zero proportionality constant at the lead variants."""
    check_nu(nu)
    idx = list(sel.indices)
    om0 = je.block(1, 1)[np.ix_(idx, idx)]
    g_star = -je.gamma2_hat[idx]
    g0 = je.gamma1_hat[idx]
    a = np.linalg.solve(om0, g_star)
    denom = float(g_star @ a)
    if je.n * denom < DEGENERATE_G:
        raise DegenerateProjectionError("no trait-2 signal at the selected variants")
    stat = je.n * float(a @ g0) ** 2 / denom
    return TestResult(
        method=Method.LM,
        statistic=stat,
        df_or_critical=1,
        p_value=chi_sq_upper(1, stat),
        eta_hat=None,
        nu=nu,
        diagnostics={"j_star": sel.j_star, "j_star_star": sel.j_star_star},
    )


class Verdict(str, Enum):
    RETAIN = "retain-proportional-colocalization"
    REJECT_PROPORTIONALITY = "reject-proportional-colocalization"
    REJECT_NO_TRAIT1_SIGNAL = "reject-proportional-colocalization-insufficient-trait1-signal"

    @property
    def rejects(self) -> bool:
        return self is not Verdict.RETAIN


def combined_verdict(cond: TestResult, lm: TestResult, nu: float = 0.05) -> Verdict:
    """Combine a proportionality test with the LM test.

    Proportional colocalization is retained only when the LM test finds a
    non-zero proportionality constant and the proportionality test does not
    reject; without LM evidence it is rejected whatever ``cond`` says.
    """
    check_nu(nu)
    if not lm.p_value < nu:
        return Verdict.REJECT_NO_TRAIT1_SIGNAL
    if cond.p_value < nu:
        return Verdict.REJECT_PROPORTIONALITY
    return Verdict.RETAIN
