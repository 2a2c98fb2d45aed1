"""Shared fixtures and reference helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings
from scipy.optimize import linprog

from fbc.core_model import (Alphabet, ChannelKernel, Distribution, LossFunction, ProblemInstance, bsc,
                            identity_channel)

settings.register_profile("fbc", deadline=None, derandomize=True, print_blob=True)
settings.load_profile("fbc")


def highs_value(lp) -> float:
    """Reference optimum from scipy's HiGHS, independent of the package solver."""
    res = linprog(np.asarray(lp.c, dtype=float), A_ub=lp.G.to_scipy(), b_ub=np.asarray(lp.h, dtype=float),
                  A_eq=lp.A.to_scipy(), b_eq=np.asarray(lp.b, dtype=float), bounds=(None, None), method="highs")
    assert res.status == 0, res.message
    return float(res.fun)


def binary_instance(channel: ChannelKernel, n_hat: int = 2, mode: str = "float") -> ProblemInstance:
    """Uniform bit through ``channel`` with loss 1{s != shat}."""
    d = [[0 if s == t else 1 for t in range(n_hat)] for s in range(2)]
    return ProblemInstance(Alphabet(2), Alphabet(channel.n_inputs), Alphabet(channel.n_outputs),
                           Alphabet(n_hat), Distribution.uniform(2, mode), channel,
                           LossFunction.excess(d, 0, mode))


@pytest.fixture
def bsc_bit():
    return binary_instance(bsc(0.1))


@pytest.fixture
def noiseless_bit():
    return binary_instance(identity_channel(2))


# acceptance summary: one line per criterion, printed after the run
ACCEPTANCE: list[str] = []


def report(number: int, ok: bool, detail: str, seconds: float) -> None:
    ACCEPTANCE.append(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f}s]")
    print(ACCEPTANCE[-1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
