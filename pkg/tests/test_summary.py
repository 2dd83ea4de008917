from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from propcoloc.errors import InputError, SingularLDError
from propcoloc.simulate import SimConfig, gen_dataset, gen_ld
from propcoloc.summary import (
    JointEffects,
    SummaryDataset,
    load_summary,
    order_traits,
    prune,
    select_top_k,
    to_joint_effects,
    write_summary,
)


def _write(tmp_path, assoc_rows, ld_rows, header=("variant_id", "beta1", "se1", "beta2", "se2")):
    a = tmp_path / "assoc.tsv"
    l = tmp_path / "ld.txt"
    a.write_text("\t".join(header) + "\n" + "".join("\t".join(map(str, r)) + "\n" for r in assoc_rows))
    l.write_text("".join(" ".join(map(str, r)) + "\n" for r in ld_rows))
    return a, l


ASSOC3 = [("rs1", 0.1, 0.02, 0.2, 0.02), ("rs2", -0.05, 0.02, 0.01, 0.03), ("rs3", 0.0, 0.01, 0.3, 0.05)]
EYE3 = np.eye(3).tolist()


# -- loading -----------------------------------------------------------------

def test_load_identity_example(tmp_path):
    ds = load_summary(*_write(tmp_path, ASSOC3, EYE3), trait_cor=0.1, n=500)
    assert ds.J == 3
    assert ds.variant_ids == ("rs1", "rs2", "rs3")
    np.testing.assert_array_equal(ds.ld, np.eye(3))
    np.testing.assert_array_equal(ds.beta[1], [0.2, 0.01, 0.3])
    np.testing.assert_array_equal(ds.se[0], [0.02, 0.02, 0.01])


def test_load_dimension_mismatch(tmp_path):
    rows = ASSOC3 + [("rs4", 0.1, 0.1, 0.1, 0.1)]
    with pytest.raises(InputError, match="dimension mismatch"):
        load_summary(*_write(tmp_path, rows, EYE3), trait_cor=0.0, n=100)


def test_load_header_ids_must_match(tmp_path):
    a, l = _write(tmp_path, ASSOC3, EYE3)
    l.write_text("rs1 rs3 rs2\n" + l.read_text())
    with pytest.raises(InputError, match="header"):
        load_summary(a, l, 0.0, 100)
    l.write_text("rs1\trs2\trs3\n" + "".join(" ".join(map(str, r)) + "\n" for r in EYE3))
    assert load_summary(a, l, 0.0, 100).J == 3


def test_load_missing_column(tmp_path):
    with pytest.raises(InputError, match="missing columns"):
        load_summary(*_write(tmp_path, [r[:4] for r in ASSOC3], EYE3,
                             header=("variant_id", "beta1", "se1", "beta2")), 0.0, 100)


def test_load_non_numeric(tmp_path):
    rows = [("rs1", "x", 0.1, 0.1, 0.1)] + ASSOC3[1:]
    with pytest.raises(InputError, match="non-numeric"):
        load_summary(*_write(tmp_path, rows, EYE3), 0.0, 100)


def test_load_drops_exact_duplicates(tmp_path, caplog):
    ld = [[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    ds = load_summary(*_write(tmp_path, ASSOC3, ld), 0.0, 100)
    assert ds.variant_ids == ("rs1", "rs3")
    assert "perfectly correlated" in caplog.text


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        load_summary(tmp_path / "nope.tsv", tmp_path / "nope.ld", 0.0, 100)


def test_simulated_file_round_trips_bit_identically(tmp_path):
    ds, _ = gen_dataset(SimConfig(n=300, J=8, seed=3), np.random.default_rng(3))
    for header in (False, True):
        a, l = tmp_path / f"a{header}.tsv", tmp_path / f"l{header}.txt"
        write_summary(ds, a, l, ld_header=header)
        back = load_summary(a, l, ds.trait_cor, ds.n)
        assert back.variant_ids == ds.variant_ids
        for name in ("beta", "se", "ld"):
            np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))


@pytest.mark.parametrize(
    "change, message",
    [
        ({"se": np.array([[0.1, 0.0], [0.1, 0.1]])}, "strictly positive"),
        ({"ld": np.array([[1.0, 0.5], [0.4, 1.0]])}, "symmetric"),
        ({"ld": np.array([[1.0, 1.2], [1.2, 1.0]])}, r"\[-1, 1\]"),
        ({"ld": np.array([[0.9, 0.1], [0.1, 1.0]])}, "unit diagonal"),
        ({"trait_cor": 1.0}, "trait correlation"),
        ({"n": 2}, "sample size"),
        ({"beta": np.array([[np.nan, 0.1], [0.1, 0.1]])}, "non-finite"),
        ({"variant_ids": ("a", "a")}, "unique"),
    ],
)
def test_dataset_validation(change, message):
    kw = dict(variant_ids=("a", "b"), beta=np.full((2, 2), 0.1), se=np.full((2, 2), 0.1),
              ld=np.eye(2), trait_cor=0.0, n=100)
    kw.update(change)
    with pytest.raises(InputError, match=message):
        SummaryDataset(**kw)


def test_dataset_arrays_are_read_only():
    ds = make_dataset([1, 2], [3, 4])
    with pytest.raises(ValueError):
        ds.beta[0, 0] = 5.0


# -- joint effects -------------------------------------------------------------

def test_identity_ld_recovers_marginal_effects():
    n = 1000
    r1 = np.array([0.5, 0.0])
    r2 = np.array([0.25, 0.0])
    # t-statistics whose implied correlations are exactly r
    t = np.vstack([r1, r2]) * math.sqrt(n - 2) / np.sqrt(1 - np.vstack([r1, r2]) ** 2)
    se = np.full((2, 2), 0.02)
    ds = SummaryDataset(("a", "b"), t * se, se, np.eye(2), 0.1, n)
    je = to_joint_effects(ds)
    np.testing.assert_allclose(je.gamma1_hat, r1, atol=1e-14)
    np.testing.assert_allclose(je.gamma2_hat, r2, atol=1e-14)


def test_matches_individual_level_multivariable_fit():
    cfg = SimConfig(n=5000, J=5, seed=11)
    rng = np.random.default_rng(11)
    ld, causal = gen_ld(cfg, rng)
    # regenerate the same individual-level data gen_dataset would draw
    state = np.random.default_rng(99)
    ds, truth = gen_dataset(cfg, state, ld=ld, causal=causal)
    state = np.random.default_rng(99)
    Z = state.standard_normal((cfg.n, cfg.J)) @ np.linalg.cholesky(ld).T
    V = state.standard_normal((cfg.n, 2)) @ np.linalg.cholesky(truth.sigma_v).T
    X = Z @ np.column_stack([truth.gamma1, truth.gamma2]) + V
    Zs = (Z - Z.mean(0)) / Z.std(0)
    Xs = (X - X.mean(0)) / X.std(0)
    direct, *_ = np.linalg.lstsq(Zs, Xs, rcond=None)
    je = to_joint_effects(ds)
    np.testing.assert_allclose(je.gamma1_hat, direct[:, 0], atol=1e-10)
    np.testing.assert_allclose(je.gamma2_hat, direct[:, 1], atol=1e-10)


def _sqrt_n_effect_draws(cfg: SimConfig, reps: int, seed: int):
    rng = np.random.default_rng(seed)
    ld, causal = gen_ld(cfg, rng)
    draws = np.empty((reps, 2 * cfg.J))
    for r in range(reps):
        ds, truth = gen_dataset(cfg, rng, ld=ld, causal=causal)
        draws[r] = math.sqrt(cfg.n) * to_joint_effects(ds).stacked
    return draws, truth


def test_monte_carlo_covariance_matches_sigma_gamma():
    cfg = SimConfig(n=2000, J=5, effect=0.1)
    draws, truth = _sqrt_n_effect_draws(cfg, 2000, seed=5)
    expected = np.diag(truth.joint_effects(cfg.n).sigma_gamma)
    np.testing.assert_allclose(np.var(draws, axis=0, ddof=1), expected, rtol=0.10)


def test_strong_effect_variance_shrinks_like_a_correlation():
    # A single standardized effect g behaves like a sample correlation, whose
    # variance is (1 - g^2)^2 / n rather than the normal model's (1 - g^2) / n.
    cfg = SimConfig(n=2000, J=5, rho0=0.0, eta0=0.0, effect=0.5)
    draws, truth = _sqrt_n_effect_draws(cfg, 4000, seed=6)
    j = truth.causal[0]
    g = truth.standardized()[1][j]
    model = truth.joint_effects(cfg.n).sigma_gamma[cfg.J + j, cfg.J + j]
    assert model == pytest.approx(1 - g**2, rel=1e-12)
    assert np.var(draws[:, cfg.J + j], ddof=1) == pytest.approx((1 - g**2) ** 2, rel=0.07)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), J=st.integers(2, 8))
def test_kronecker_structure(seed, J):
    ds, _ = gen_dataset(SimConfig(n=200, J=J, rho0=0.5), np.random.default_rng(seed))
    je = to_joint_effects(ds)
    ld_inv = np.linalg.inv(ds.ld)
    for k in (1, 2):
        for l in (1, 2):
            np.testing.assert_allclose(je.block(k, l), je.sigma_v[k - 1, l - 1] * ld_inv,
                                       rtol=0, atol=1e-10 * np.abs(ld_inv).max())
    assert np.linalg.eigvalsh(je.sigma_v).min() > 0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c1=st.floats(1e-3, 1e3), c2=st.floats(1e-3, 1e3))
def test_invariant_to_trait_scale(seed, c1, c2):
    ds, _ = gen_dataset(SimConfig(n=200, J=4, rho0=0.5), np.random.default_rng(seed))
    c = np.array([[c1], [c2]])
    scaled = SummaryDataset(ds.variant_ids, ds.beta * c, ds.se * c, ds.ld, ds.trait_cor, ds.n)
    a, b = to_joint_effects(ds), to_joint_effects(scaled)
    np.testing.assert_allclose(b.stacked, a.stacked, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(b.sigma_gamma, a.sigma_gamma, rtol=1e-12, atol=1e-14)


def test_singular_ld_is_reported():
    ld = np.array([[1.0, 0.5, 0.5], [0.5, 1.0, 1.0], [0.5, 1.0, 1.0]])
    ds = make_dataset([1, 2, 3], [1, 2, 3], ld=ld)
    with pytest.raises(SingularLDError, match="prun"):
        to_joint_effects(ds)


def test_from_kronecker_blocks():
    ld = np.array([[1.0, 0.3], [0.3, 1.0]])
    sv = np.array([[1.0, 0.2], [0.2, 0.5]])
    je = JointEffects.from_kronecker([1, 2], [3, 4], ld, sv, 10)
    np.testing.assert_allclose(je.block(2, 2), 0.5 * np.linalg.inv(ld))
    np.testing.assert_array_equal(je.stacked, [1, 2, 3, 4])


# -- pruning and filtering -------------------------------------------------------

def test_prune_keeps_stronger_of_correlated_pair():
    r = math.sqrt(0.9)
    ds = make_dataset([2.0, 5.0], [1.0, 1.0], ld=np.array([[1, r], [r, 1]]))
    assert prune(ds, 0.6).variant_ids == ("rs2",)


def test_prune_identity_keeps_all():
    ds = make_dataset(np.arange(1, 7), np.arange(6, 0, -1))
    for thr in (0.01, 0.5, 1.0):
        assert prune(ds, thr).variant_ids == ds.variant_ids


def test_prune_threshold_holds_on_simulated_ld():
    ds, _ = gen_dataset(SimConfig(n=1000, J=40, rho0=0.8), np.random.default_rng(2))
    out = prune(ds, 0.1)
    r2 = out.ld**2
    np.fill_diagonal(r2, 0.0)
    assert r2.max() <= 0.1
    assert 1 <= out.J < ds.J


def test_prune_rejects_bad_threshold():
    with pytest.raises(InputError):
        prune(make_dataset([1, 2], [1, 2]), 0.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), thr=st.floats(0.01, 1.0))
def test_prune_invariants(seed, thr):
    ds, _ = gen_dataset(SimConfig(n=100, J=12, rho0=0.9, xi=0.8), np.random.default_rng(seed))
    out = prune(ds, thr)
    r2 = out.ld**2
    np.fill_diagonal(r2, 0.0)
    assert r2.max(initial=0.0) <= thr
    strongest = ds.variant_ids[int(np.argmax(np.abs(ds.z).max(axis=0)))]
    assert strongest in out.variant_ids
    pos = [ds.variant_ids.index(v) for v in out.variant_ids]
    assert pos == sorted(pos)


def test_top_k_union_of_disjoint_sets():
    z1 = np.r_[np.arange(20, 10, -1), np.ones(30)]
    z2 = np.r_[np.ones(10), np.arange(20, 10, -1), np.ones(20)]
    out = select_top_k(make_dataset(z1, z2), 10)
    assert out.J == 20
    assert out.variant_ids == tuple(f"rs{j + 1}" for j in range(20))


def test_top_k_overlapping_sets_and_full_k():
    ds = make_dataset([5, 4, 3, 1], [5, 1, 4, 3])
    assert select_top_k(ds, 2).variant_ids == ("rs1", "rs2", "rs3")
    assert select_top_k(ds, 4).variant_ids == ds.variant_ids
    assert select_top_k(ds, 10).variant_ids == ds.variant_ids


def test_top_k_ties_go_to_lowest_index():
    ds = make_dataset([3, 3, 3, 3], [1, 1, 1, 1])
    assert select_top_k(ds, 2).variant_ids == ("rs1", "rs2")


@pytest.mark.parametrize("k", [1, 0, 2.5])
def test_top_k_rejects_bad_k(k):
    with pytest.raises(InputError):
        select_top_k(make_dataset([1, 2, 3], [1, 2, 3]), k)


def test_order_traits():
    ds = make_dataset([1.0, -2.0], [3.0, 0.5])
    same, flag = order_traits(ds)
    assert same is ds and flag is False
    swapped, flag = order_traits(make_dataset([-6.0, 2.0], [3.0, 0.5]))
    assert flag is True
    np.testing.assert_array_equal(swapped.z[1], [-6.0, 2.0])
    back = swapped.swap_traits().swap_traits()
    np.testing.assert_array_equal(back.beta, swapped.beta)
    np.testing.assert_array_equal(back.se, swapped.se)


def test_pvalues_are_two_sided():
    ds = make_dataset([1.959963984540054, 0.0], [-1.959963984540054, 10.0])
    p = ds.pvalues()
    np.testing.assert_allclose(p[:, 0], 0.05, rtol=1e-9)
    assert p[0, 1] == 1.0
