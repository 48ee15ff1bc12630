import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fractrace.errors import BetaTooSmall, InputError
from fractrace.ifs import orbit_array
from fractrace.kms import KmsSpec, eval_kms_on_function, kms_report, kms_report_json, kms_weights
from fractrace.measures import constant, coordinate
from fractrace.systems import SP_T, sierpinski, tent


def test_documented_weights():
    w, tail = kms_weights(KmsSpec([0.5], np.log(4), 2, 2))
    assert w.tolist() == [0.5, 0.25, 0.125]
    assert tail == 0.125


def test_beta_bound():
    with pytest.raises(BetaTooSmall):
        KmsSpec([0.5], np.log(2), 3, 2)
    with pytest.raises(InputError):
        KmsSpec([0.5], 3.0, -1, 2)


def test_large_beta_concentrates_on_first_term():
    w, _ = kms_weights(KmsSpec([0.5], 60.0, 3, 2))
    assert w[0] == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 5.0), st.integers(0, 30), st.integers(2, 5))
def test_weights_and_tail_sum_to_one(excess, depth, N):
    w, tail = kms_weights(KmsSpec([0.0], np.log(N) + excess, depth, N))
    assert w.sum() + tail == pytest.approx(1.0, abs=1e-12)


def test_unit_and_tent_mean():
    s = tent()
    spec = KmsSpec.for_system(s, [0.5], np.log(4), 8)
    one, bound = eval_kms_on_function(s, spec, constant(1.0))
    _, tail = kms_weights(spec)
    assert one == pytest.approx(1 - tail, abs=1e-12)
    assert bound == pytest.approx(tail)
    v, _ = eval_kms_on_function(s, spec, coordinate())
    assert v == pytest.approx((1 - tail) / 2, abs=1e-12)


def test_sierpinski_matches_orbit_enumeration():
    s = sierpinski()
    beta, depth = 2.0, 5
    spec = KmsSpec.for_system(s, SP_T, beta, depth)
    q = 3 * np.exp(-beta)
    a = coordinate(1, 2)
    ref = sum((1 - q) * q ** j * np.mean(orbit_array(s, SP_T, j)[0][:, 1] ** 2) for j in range(depth + 1))
    v, _ = eval_kms_on_function(s, spec, a)
    assert v == pytest.approx(ref, abs=1e-12)


def test_near_critical_beta_reports_large_bound():
    s = tent()
    _, bound = eval_kms_on_function(s, KmsSpec.for_system(s, [0.5], np.log(2) + 1e-3, 4), constant(1.0))
    assert bound > 0.99


def test_report_shape():
    s = tent()
    rep = kms_report(s, KmsSpec.for_system(s, [0.5], np.log(4), 2), [coordinate()])
    assert set(rep) == {"b", "beta", "depth", "weights", "tail", "values"}
    assert rep["values"]["x"][0] == pytest.approx(0.875 / 2)
    assert '"tail": 0.125' in kms_report_json(rep)
