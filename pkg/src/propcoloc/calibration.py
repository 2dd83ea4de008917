"""Independent numerical oracles.

Each suite checks one piece of the machinery against a route that does not
share its code path:

* ``chisq``: simulated full-test statistics under a fixed null instance
  against the chi-square(J-1) law (Kolmogorov-Smirnov distance).
* ``cstar``: Monte-Carlo covariance between the normalized lead-variant
  moments and the t-statistics against the closed form used by the
  conditional test, decorrelation of ``ell``, algebraic identities of the
  projection and the sparse-signal critical value.
* ``optimizer``: the grid + golden-section minimizer against brute-force
  enumeration on 10^6 points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .gmm import GmmProblem, minimize_q, prop_coloc_full
from .selective import (
    SelectionContext,
    conditional_machinery,
    conditional_reference,
    selection_from_t,
)
from .simulate import SimConfig, gen_dataset, gen_ld
from .summary import JointEffects, to_joint_effects

CHI2_1_95 = 3.841458820694124


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"[{tag}] {self.suite}/{self.name}: {self.value:.6g} (threshold {self.threshold:g}){extra}"


# -- chi-square law of the full-test statistic ------------------------------

def full_statistic_draws(J: int, n: int, reps: int, seed: int) -> np.ndarray:
    """n * Q(eta_hat) over replicates of one fixed null instance."""
    cfg = SimConfig(n=n, J=J, xi=1.0, eta0=0.5, replicates=reps, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, J]))
    ld, causal = gen_ld(cfg, rng)
    out = np.empty(reps)
    for r in range(reps):
        ds, _ = gen_dataset(cfg, rng, ld=ld, causal=causal)
        out[r] = prop_coloc_full(to_joint_effects(ds)).statistic
    return out


def chisq_suite(seed: int = 0, n: int = 10_000, reps: int = 2000, Js=(3, 10),
                threshold: float = 0.05) -> list[Check]:
    checks = []
    for J in Js:
        draws = full_statistic_draws(J, n, reps, seed)
        ks = stats.kstest(draws, stats.chi2(J - 1).cdf).statistic
        checks.append(Check("chisq", f"ks_J{J}", float(ks), threshold, ks < threshold,
                            f"n={n} reps={reps} mean={draws.mean():.3f} (df={J - 1})"))
    return checks


# -- conditional machinery ---------------------------------------------------

def covariance_oracle(seed: int = 0, J: int = 5, n: int = 2000, reps: int = 5000,
                      eta0: float = 0.5, individual: bool = False) -> dict:
    """Empirical cov(Omega*^-1/2 sqrt(n) g*(eta0), T) under a fixed null instance.

    By default effect estimates are drawn from their joint normal model
    N(gamma, Sigma_gamma / n) built from the population standardized
    effects; with ``individual`` they come from full individual-level
    simulations reduced by ``to_joint_effects``. Omega*, D_gamma and the
    reference c_star are population values. Lead variants are held fixed at
    (causal variant, next index).
    """
    cfg = SimConfig(n=n, J=J, rho0=0.8, xi=1.0, eta0=eta0, replicates=reps, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    ld, causal = gen_ld(cfg, rng)
    _, truth = gen_dataset(SimConfig(n=3, J=J, eta0=eta0), rng, ld=ld, causal=causal)
    pop = truth.joint_effects(n)
    eta_std = truth.eta_standardized(eta0)
    j1 = causal[0]
    j2 = (j1 + 1) % J
    d = 1.0 / np.sqrt(np.diag(pop.sigma_gamma))
    t_pop = d * np.sqrt(n) * pop.stacked
    i_star = np.zeros((2, J))
    i_star[0, j1] = i_star[1, j2] = 1.0
    sel = SelectionContext(t_pop, d, j1, j2, i_star)
    mach = conditional_machinery(pop, sel, eta_std)
    root = mach.omega_star_inv_sqrt

    if individual:
        gammas = np.empty((reps, 2 * J))
        for r in range(reps):
            ds, _ = gen_dataset(cfg, rng, ld=ld, causal=causal)
            gammas[r] = to_joint_effects(ds).stacked
    else:
        chol = np.linalg.cholesky(pop.sigma_gamma / n)
        gammas = pop.stacked[None, :] + rng.standard_normal((reps, 2 * J)) @ chol.T
    g = gammas[:, [j1, j2]] - eta_std * gammas[:, [J + j1, J + j2]]
    xs = math.sqrt(n) * g @ root.T
    ts = math.sqrt(n) * gammas * d[None, :]

    xc = xs - xs.mean(axis=0)
    tc = ts - ts.mean(axis=0)
    prod = xc[:, :, None] * tc[:, None, :]
    cov = prod.mean(axis=0) * reps / (reps - 1)
    se = prod.std(axis=0, ddof=1) / math.sqrt(reps)
    ell = ts - xs @ mach.c_star
    corr = np.array([[np.corrcoef(xs[:, i], ell[:, j])[0, 1] for j in range(2 * J)] for i in range(2)])
    # the displayed variant with an extra Sigma_gamma factor, kept for comparison
    s = pop.sigma_gamma
    C = np.hstack([pop.block(1, 1) - pop.block(1, 2).T * eta_std,
                   pop.block(1, 2) - pop.block(2, 2) * eta_std])
    c_alt = root @ (C @ s)[[j1, j2]] * d[None, :]
    return {"cov": cov, "se": se, "c_star": mach.c_star, "c_star_alt": c_alt,
            "corr_x_ell": corr, "var_x": np.cov(xs.T)}


def random_pd(rng: np.random.Generator, k: int, cond_floor: float = 0.05) -> np.ndarray:
    a = rng.standard_normal((k, k))
    m = a @ a.T / k + cond_floor * np.eye(k)
    return 0.5 * (m + m.T)


def random_joint_effects(rng: np.random.Generator, J: int, n: int = 1000) -> JointEffects:
    """Random structured instance: random correlation LD and residual covariance."""
    a = rng.standard_normal((J, J + 3))
    cov = a @ a.T
    s = np.sqrt(np.diag(cov))
    ld = cov / np.outer(s, s)
    r12 = rng.uniform(-0.8, 0.8)
    sv = np.array([[rng.uniform(0.3, 1.0), 0.0], [0.0, rng.uniform(0.3, 1.0)]])
    sv[0, 1] = sv[1, 0] = r12 * math.sqrt(sv[0, 0] * sv[1, 1])
    g2 = rng.standard_normal(J) * 0.2
    g1 = rng.uniform(-2, 2) * g2 + rng.standard_normal(J) * 0.05
    return JointEffects.from_kronecker(g1, g2, ld, sv, n)


def projection_identity_errors(seed: int = 0, instances: int = 1000) -> tuple[float, float, float]:
    """Max |M M - M|, |tr M - 1| and |R Omega R - I| over random instances."""
    rng = np.random.default_rng(seed)
    idem = trace = root_err = 0.0
    for _ in range(instances):
        J = int(rng.integers(2, 9))
        je = random_joint_effects(rng, J)
        d = 1.0 / np.sqrt(np.diag(je.sigma_gamma))
        sel = selection_from_t(d * math.sqrt(je.n) * je.stacked, d)
        mach = conditional_machinery(je, sel, float(rng.uniform(-3, 3)))
        m = mach.m_star
        r = mach.omega_star_inv_sqrt
        idem = max(idem, float(np.max(np.abs(m @ m - m))))
        trace = max(trace, abs(float(np.trace(m)) - 1.0))
        root_err = max(root_err, float(np.max(np.abs(r @ mach.omega_star @ r - np.eye(2)))))
    return idem, trace, root_err


def sparse_signal_instance(J: int = 10, n: int = 10_000) -> JointEffects:
    """Unambiguous, exactly proportional leads; all other t-statistics are +-1.

    Trait 1 peaks at variant 0 (t = 20) and trait 2 at variant 1 (t = -20)
    once variant 0 is excluded; there is no cross-covariance.
    """
    t1 = np.array([(-1.0) ** j for j in range(J)])
    t2 = np.array([(-1.0) ** (j + 1) for j in range(J)])
    t1[0], t1[1] = 20.0, -10.0
    t2[0], t2[1] = 40.0, -20.0
    root_n = math.sqrt(n)
    return JointEffects.from_kronecker(t1 / root_n, t2 / root_n, np.eye(J), np.eye(2), n)


def sparse_signal_critical_value(seed: int = 0, draws: int = 10_000) -> tuple[float, float]:
    je = sparse_signal_instance()
    d = 1.0 / np.sqrt(np.diag(je.sigma_gamma))
    sel = selection_from_t(d * math.sqrt(je.n) * je.stacked, d)
    p = GmmProblem.from_joint(je).restrict(sel.indices)
    eta_hat = minimize_q(p).eta_hat
    mach = conditional_machinery(je, sel, eta_hat)
    ref, total = conditional_reference(mach, sel, draws, np.random.default_rng(seed))
    return float(np.quantile(ref, 0.95)), ref.size / total


def cstar_suite(seed: int = 0, reps: int = 5000) -> list[Check]:
    res = covariance_oracle(seed=seed, reps=reps)
    z = np.abs(res["cov"] - res["c_star"]) / res["se"]
    worst = float(z.max())
    z_alt = float((np.abs(res["cov"] - res["c_star_alt"]) / res["se"]).max())
    corr = float(np.max(np.abs(res["corr_x_ell"])))
    idem, trace, root_err = projection_identity_errors(seed)
    w, acc = sparse_signal_critical_value(seed)
    return [
        Check("cstar", "covariance_max_se", worst, 3.0, worst <= 3.0,
              f"{z.size} entries, {reps} replicates"),
        Check("cstar", "extra_sigma_variant_rejected_se", z_alt, 10.0, z_alt > 10.0,
              "the oracle must tell the two closed forms apart"),
        Check("cstar", "ell_decorrelation_max_abs_corr", corr, 0.05, corr < 0.05),
        Check("cstar", "m_star_idempotency", idem, 1e-10, idem < 1e-10, "1000 instances"),
        Check("cstar", "m_star_trace", trace, 1e-10, trace < 1e-10),
        Check("cstar", "omega_inv_sqrt_identity", root_err, 1e-10, root_err < 1e-10),
        Check("cstar", "sparse_signal_w_star_error", abs(w - CHI2_1_95), 0.15,
              abs(w - CHI2_1_95) < 0.15 and acc > 0.99, f"w*={w:.4f} acceptance={acc:.4f}"),
    ]


# -- optimizer ---------------------------------------------------------------

def random_general_problem(rng: np.random.Generator, J: int) -> GmmProblem:
    """Random problem whose covariance blocks share no common factor."""
    sigma = random_pd(rng, 2 * J)
    g1 = rng.standard_normal(J)
    g0 = rng.uniform(-2, 2) * g1 + 0.3 * rng.standard_normal(J) * np.abs(g1).mean()
    return GmmProblem(g0, g1, sigma[:J, :J], sigma[:J, J:], sigma[J:, J:], n=1000)


def _brute_q_solve(p: GmmProblem, etas: np.ndarray, chunk: int = 100_000) -> np.ndarray:
    out = np.empty(etas.size)
    cross = p.s12 + p.s12.T
    for s in range(0, etas.size, chunk):
        e = etas[s : s + chunk]
        om = p.s11[None] - cross[None] * e[:, None, None] + p.s22[None] * (e**2)[:, None, None]
        g = p.g0[None, :] - e[:, None] * p.g1[None, :]
        x = np.linalg.solve(om, g[..., None])[..., 0]
        out[s : s + chunk] = np.einsum("ij,ij->i", g, x)
    return out


def _brute_q_kron(je: JointEffects, etas: np.ndarray) -> np.ndarray:
    sv, ld = je.sigma_v, je.ld
    a = je.gamma1_hat @ ld @ je.gamma1_hat
    b = je.gamma1_hat @ ld @ je.gamma2_hat
    c = je.gamma2_hat @ ld @ je.gamma2_hat
    return (a - 2 * b * etas + c * etas**2) / (sv[0, 0] - 2 * sv[0, 1] * etas + sv[1, 1] * etas**2)


def brute_force_argmin(q_fn, bracket: float, points: int = 1_000_000) -> tuple[float, float]:
    """Two-stage enumeration: half the points over the bracket, half around the winner."""
    half = points // 2
    grid = np.linspace(-bracket, bracket, half)
    q = q_fn(grid)
    i = int(np.argmin(q))
    h = grid[1] - grid[0]
    fine = np.linspace(grid[i] - 2 * h, grid[i] + 2 * h, points - half)
    qf = q_fn(fine)
    k = int(np.argmin(qf))
    if qf[k] <= q[i]:
        return float(fine[k]), float(qf[k])
    return float(grid[i]), float(q[i])


def optimizer_oracle(seed: int = 0, instances: int = 200, points: int = 1_000_000) -> dict:
    rng = np.random.default_rng(seed)
    eta_err = []
    dominance = []
    for k in range(instances):
        J = int(rng.integers(1, 11))
        if k % 2 == 0:
            je = random_joint_effects(rng, J)
            p = GmmProblem.from_joint(je)
            q_fn = lambda e, je=je: _brute_q_kron(je, e)
        else:
            p = random_general_problem(rng, J)
            q_fn = lambda e, p=p: _brute_q_solve(p, e)
        eta_hat, q_min, diag = minimize_q(p)
        eta_grid, q_grid = brute_force_argmin(q_fn, diag["bracket"], points)
        eta_err.append(abs(eta_hat - eta_grid))
        dominance.append(q_min - q_grid - 1e-9 * max(1.0, q_grid) - 1e-12)
    return {"eta_err": np.array(eta_err), "dominance_excess": np.array(dominance)}


def optimizer_suite(seed: int = 0, instances: int = 200) -> list[Check]:
    res = optimizer_oracle(seed, instances)
    err = float(res["eta_err"].max())
    excess = float(res["dominance_excess"].max())
    return [
        Check("optimizer", "max_abs_eta_error", err, 1e-5, err < 1e-5, f"{instances} problems, J <= 10"),
        Check("optimizer", "q_min_dominance_excess", excess, 0.0, excess <= 0.0,
              "q_min - min grid value (with 1e-9 relative slack)"),
    ]


SUITES = {"chisq": chisq_suite, "cstar": cstar_suite, "optimizer": optimizer_suite}


def run_suites(names, seed: int = 0) -> list[Check]:
    out: list[Check] = []
    for name in names:
        out.extend(SUITES[name](seed=seed))
    return out
