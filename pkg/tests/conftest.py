"""Shared fixtures: a small deployment, a toy curve and a fake clock."""

from __future__ import annotations

import itertools
from typing import TYPE_CHECKING

import pytest

from medsentry._ec import CurveParams, Point
from medsentry._registry import KeyRegistry, provision
from medsentry._scenario import DEFAULT_EPOCH_MS
from medsentry._types import Timestamp
from tests._toy import TOY_A, TOY_B, TOY_ORDER, TOY_P, naive_multiple, toy_points

if TYPE_CHECKING:
    from collections.abc import Callable


@pytest.fixture(scope="session")
def deployment() -> KeyRegistry:
    """Two sensors and one user."""
    return provision(2, 7, n_users=1)


@pytest.fixture(scope="session")
def toy_curve() -> CurveParams:
    """The 28-point curve over GF(23), based at a point of order 7."""
    scratch = CurveParams("toy23", TOY_P, TOY_A, TOY_B, Point(0, 1), q=TOY_P)
    for candidate in toy_points():
        multiples = [naive_multiple(k, candidate, scratch) for k in range(1, 8)]
        if multiples[-1] is None and None not in multiples[:-1]:
            return CurveParams(
                "toy23", TOY_P, TOY_A, TOY_B, candidate, q=TOY_ORDER, cofactor=4
            )
    pytest.fail("no point of order 7 on the toy curve")


@pytest.fixture
def clock() -> Callable[[], int]:
    """A nanosecond counter that advances 1000 ns per reading."""
    ticks = itertools.count(step=1000)
    return lambda: next(ticks)


@pytest.fixture
def now() -> Timestamp:
    """Protocol time at the default simulation epoch."""
    return Timestamp(DEFAULT_EPOCH_MS)
