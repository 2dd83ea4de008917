from __future__ import annotations

import numpy as np
import pytest

from propcoloc.summary import SummaryDataset

# criterion label -> (passed, detail); filled by test_acceptance
ACCEPTANCE_LINES: dict[str, tuple[bool, str]] = {}


def record_acceptance(label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[label] = (bool(passed), detail)
    print(f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0].lstrip("C"))):
        passed, detail = ACCEPTANCE_LINES[label]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")


def make_dataset(z1, z2, ld=None, n=1000, trait_cor=0.2, ids=None) -> SummaryDataset:
    """Dataset with unit-scale standard errors and the given z-scores."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    J = z1.size
    se = np.full((2, J), 0.01)
    return SummaryDataset(
        variant_ids=tuple(ids or (f"rs{j + 1}" for j in range(J))),
        beta=np.vstack([z1, z2]) * se,
        se=se,
        ld=np.eye(J) if ld is None else ld,
        trait_cor=trait_cor,
        n=n,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
