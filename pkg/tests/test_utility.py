import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import utilities
from encoding_oracle import encoding_min_milp
from evflex.utility import (UtilityError, UtilityFunction, encode_utility, encoding_minimum,
                            evaluate_utility, is_convex_shortcut_eligible, segment_of)


def _u(alpha, h, b):
    return UtilityFunction(np.array(alpha, float), np.array(h, float), np.array(b, float))


STEP = _u([0, 10, 30], [1.0, 0.5], [2.0, 20.0])  # jumps up at 0 and at 10


def test_values_and_segments():
    assert evaluate_utility(STEP, 0.0) == 0.0
    assert segment_of(STEP, 0.0) == 0
    assert segment_of(STEP, 10.0) == 1  # right end belongs to the left piece
    assert evaluate_utility(STEP, 10.0) == pytest.approx(12.0)
    assert segment_of(STEP, 10.0 + 1e-9) == 2
    assert evaluate_utility(STEP, 30.0) == pytest.approx(35.0)


def test_outside_domain():
    with pytest.raises(UtilityError):
        evaluate_utility(STEP, 31.0)
    with pytest.raises(UtilityError):
        encoding_minimum(STEP, -1.0)


@pytest.mark.parametrize("args", [([1, 2], [1.0], [0.0]), ([0, 2, 1], [1, 1], [0, 0]),
                                  ([0, 1], [1, 2], [0]), ([0, np.inf], [1.0], [0.0])])
def test_invalid_curves(args):
    with pytest.raises(UtilityError):
        _u(*args)


def test_zero_curve_warns():
    with pytest.warns(UserWarning):
        _u([0, 5], [0.0], [0.0])


def test_breakpoint_takes_cheaper_side():
    # at 10 the left piece gives 12 and the right piece 25; at 0 the zero point wins over 2
    assert encoding_minimum(STEP, 10.0) == pytest.approx(12.0)
    assert encoding_minimum(STEP, 0.0) == 0.0
    down = _u([0, 10, 30], [1.0, 0.5], [2.0, -4.0])  # jumps down at 10: right side is 1
    assert encoding_minimum(down, 10.0) == pytest.approx(1.0)


def test_convex_shortcut_eligibility():
    assert is_convex_shortcut_eligible(_u([0, 10, 20], [0.5, 1.0], [0.0, -5.0]))
    assert not is_convex_shortcut_eligible(STEP)  # fixed charge at 0
    assert not is_convex_shortcut_eligible(_u([0, 10, 20], [1.0, 0.5], [0.0, 5.0]))  # concave
    assert not is_convex_shortcut_eligible(_u([0, 10, 20], [0.5, 1.0], [0.0, -4.0]))  # jump


def test_encoding_layout():
    enc = encode_utility(STEP)
    assert enc.n_vars == 3 * 2 + 3
    assert enc.eq_matrix.shape == (3 + 2, enc.n_vars)
    assert set(enc.y) | set(enc.lam_lo) | set(enc.lam_hi) | {enc.z, enc.phi} == set(range(enc.n_vars))


def test_dict_round_trip():
    back = UtilityFunction.from_dict(STEP.to_dict())
    assert np.array_equal(back.alpha, STEP.alpha) and np.array_equal(back.b, STEP.b)


def _vertex_minimum(u, phi):
    """Enumerate every binary choice and every pair of active weights of the encoding."""
    enc = encode_utility(u)
    best = np.inf
    for k in range(u.kappa + 1):  # k = 0: all binaries off
        if k == 0:
            if abs(phi) < 1e-12:
                best = min(best, 0.0)
            continue
        lo, hi = u.alpha[k - 1], u.alpha[k]
        if lo - 1e-12 <= phi <= hi + 1e-12:
            t = (phi - lo) / (hi - lo)
            best = min(best, (1 - t) * u.u_left[k - 1] + t * u.u_right[k - 1])
    del enc
    return best


@settings(max_examples=150, deadline=None)
@given(u=utilities(), frac=st.one_of(st.just(0.0), st.floats(1e-6, 1.0)))
def test_oracle_agrees_with_vertex_enumeration(u, frac):
    phi = frac * u.domain_max
    assert encoding_minimum(u, phi) == pytest.approx(_vertex_minimum(u, phi), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(u=utilities(max_pieces=4), data=st.data())
def test_milp_encoding_matches_oracle(u, data):
    phis = list(u.alpha) + [data.draw(st.floats(1e-6, 1.0)) * u.domain_max]
    for phi in phis:
        assert encoding_min_milp(u, phi) == pytest.approx(encoding_minimum(u, phi), abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(u=utilities(), frac=st.one_of(st.just(0.0), st.floats(1e-6, 1.0)))
def test_oracle_never_above_curve(u, frac):
    phi = frac * u.domain_max
    m = encoding_minimum(u, phi)
    if phi > 0:
        assert m <= evaluate_utility(u, phi) + 1e-9
    # interior of a piece: the encoding cannot undercut the curve
    k = segment_of(u, phi)
    if k and all(abs(phi - a) > 1e-9 for a in u.alpha):
        assert m == pytest.approx(evaluate_utility(u, phi), abs=1e-9)


def test_exhaustive_small_curves():
    for h, b in itertools.product([(0.2, 0.8), (0.8, 0.2)], [(0.0, 3.0), (1.0, -2.0)]):
        u = _u([0, 4, 9], h, b)
        for phi in np.linspace(0, 9, 19):
            assert encoding_min_milp(u, phi) == pytest.approx(encoding_minimum(u, phi), abs=1e-7)


def test_single_segment_value():
    assert evaluate_utility(_u([0, 10], [2.0], [1.0]), 4.0) == 9.0
