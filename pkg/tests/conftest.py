"""Shared helpers for the test suite."""

import math

import numpy as np
import pytest

from formc.form_language import parse_form_file
from formc.runtime import AffineMap


def simplex_integral(alpha):
    """Exact integral of X^alpha over the unit simplex of dimension len(alpha).

    Closed form: prod(alpha_i!) / (|alpha| + d)!.
    """
    d = len(alpha)
    num = math.prod(math.factorial(a) for a in alpha)
    return num / math.factorial(sum(alpha) + d)


def exponents_upto(d, degree):
    """All multi-exponents alpha of length d with |alpha| <= degree."""
    if d == 0:
        yield ()
        return
    for head in range(degree + 1):
        for tail in exponents_upto(d - 1, degree - head):
            yield (head,) + tail


def parse_one(text, name=None):
    """Parse form file text and return a single form (by name if given)."""
    forms = parse_form_file(text)
    if name is None:
        assert len(forms) == 1
        return forms[0]
    return next(f for f in forms if f.name == name)


def random_affine_map(rng, d, min_det=0.3):
    """Random well-conditioned affine map with positive orientation."""
    while True:
        B = rng.uniform(-1.5, 1.5, (d, d))
        det = float(np.linalg.det(B))
        if det > min_det:
            x0 = rng.uniform(-1.0, 1.0, d)
            return AffineMap(B, np.linalg.inv(B), det, x0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
