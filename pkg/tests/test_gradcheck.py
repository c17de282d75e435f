import numpy as np
import pytest

from hidisc.gradcheck import (
    GRADIENT_CHECKS,
    Case,
    central_difference,
    format_report,
    inverse_map_error,
    rel_error,
    run_check,
    run_checks,
    sign_flip,
)


def test_rel_error_floor_and_scale():
    assert rel_error([np.zeros(3)], [np.zeros(3)]) == 0.0
    assert rel_error([np.array([1e-9])], [np.array([0.0])]) == pytest.approx(1e-3)
    assert rel_error([np.array([2.0])], [np.array([1.0])]) == pytest.approx(0.5)


def test_central_difference_on_known_function():
    f = lambda x, c: float(np.sum(x**3) * c)  # noqa: E731
    x, c = np.array([1.0, -2.0]), 0.5
    gx, gc = central_difference(f, (x, c), 1e-5, curvature=(1,))
    np.testing.assert_allclose(gx, 3 * x**2 * c, rtol=1e-8)
    assert float(gc) == pytest.approx(np.sum(x**3), rel=1e-8)


@pytest.mark.parametrize("name", sorted(GRADIENT_CHECKS))
def test_each_check_passes_clean(name):
    res = run_check(name, seed=3, cases=10)
    assert res.passed, res.line()


@pytest.mark.parametrize("name", sorted(GRADIENT_CHECKS))
def test_sign_flip_is_caught_and_named(name):
    res = run_check(name, seed=3, cases=10, fault=sign_flip(0))
    assert not res.passed
    assert res.line().startswith(f"FAIL {name} ")


def test_scaled_gradient_is_caught():
    # a 1% scale error is far above the loss tolerance
    res = run_check("loss.busemann", cases=10, fault=lambda g: tuple(1.01 * np.asarray(x) for x in g))
    assert not res.passed


def test_report_names_the_failure():
    results = run_checks(seed=0, cases=5, names=["loss.outlier", "geometry.distance"], faults={"geometry.distance": sign_flip(1)})
    text = format_report(results)
    assert "PASS loss.outlier" in text and "FAIL geometry.distance" in text
    assert text.splitlines()[-1] == "FAIL 2/3 checks passed"


def test_unknown_fault_target():
    with pytest.raises(KeyError):
        run_checks(cases=1, names=[], faults={"nope": sign_flip()})


def test_inverse_maps():
    assert inverse_map_error(np.random.default_rng(0), n=200) < 1e-6


def test_kink_retry_recovers_step_artifact():
    # the kink of |x - 3e-6| lies inside the nominal stencil but outside the refined one
    case = Case(lambda x: float(abs(x[0] - 3e-6)), (np.array([0.0]),), (np.array([-1.0]),))
    num = central_difference(case.f, case.inputs, case.step)
    assert rel_error(case.analytic, num) > 1e-4
    fine = central_difference(case.f, case.inputs, case.step * 1e-2)
    assert rel_error(case.analytic, fine) < 1e-9
