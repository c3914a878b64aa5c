import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from expadr.schemes import ORDERS, SCHEME_NAMES, SchemeSpec, scheme_spec
from expadr.stability import (NoStableLambda, astability_region, lambda_threshold,
                              optimize_alpha_sl2, stability_function, sup_abs_phi,
                              tail_limit, write_pgm)

ANALYSED = [s for s in SCHEME_NAMES if s != "erbe"]


def test_ee_examples():
    assert stability_function("ee", 0.0, 0.7) == pytest.approx(1.0)
    z = np.linspace(-50, 0, 11)
    assert np.allclose(stability_function("ee", z, 1.0), np.exp(z), rtol=1e-14)


def test_le_at_lambda_zero():
    assert stability_function("le", -2.0, 0.0) == pytest.approx(-1.0)


def test_sle_minimum_at_threshold():
    lam = 1.0 / (2.0 * math.e)
    res = minimize_scalar(lambda z: 1.0 + z * math.exp(lam * z), bounds=(-50, 0), method="bounded",
                          options={"xatol": 1e-10})
    assert res.fun == pytest.approx(-1.0, abs=1e-9)
    assert float(stability_function("sle", res.x, lam)) == pytest.approx(res.fun, abs=1e-14)


def test_rejects_bad_queries():
    with pytest.raises(ValueError):
        stability_function("ee", 1.0, 0.5)
    with pytest.raises(ValueError):
        stability_function("ee", -1.0, 1.5)
    with pytest.raises(ValueError):
        stability_function("erbe", -1.0, 0.5)


@pytest.mark.parametrize("name", ANALYSED)
@pytest.mark.parametrize("lam", [0.0, 0.3, 0.77, 1.0])
def test_consistency(name, lam):
    assert stability_function(name, 0.0, lam) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("name", ANALYSED)
def test_local_order(name):
    # |Phi - e^z| ~ C |z|^{p+1}: a decade in z is p+1 decades in the defect
    p = ORDERS[name]
    lam = 0.8
    d = [abs(stability_function(name, z, lam) - math.exp(z)) for z in (-1e-2, -1e-3)]
    assert math.log10(d[0] / d[1]) == pytest.approx(p + 1, abs=0.1)


@pytest.mark.parametrize("name", ["ee", "erk2p1", "erk2p2"])
def test_exact_at_lambda_one(name):
    z = -np.logspace(-3, 2, 50)
    assert np.allclose(stability_function(name, z, 1.0), np.exp(z), rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("name", ["sle", "sl2"])
def test_not_exact_at_lambda_one(name):
    z = -np.logspace(-1, 1, 20)
    assert np.max(np.abs(stability_function(name, z, 1.0) - np.exp(z))) > 1e-3


def test_sup_examples():
    assert sup_abs_phi("ee", 1.0) == pytest.approx(1.0, abs=1e-12)
    assert sup_abs_phi("ee", 0.4) == pytest.approx(1.5, abs=1e-9)
    assert sup_abs_phi("le", 0.218) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("name", ANALYSED)
def test_tail_limit_matches_far_field(name):
    lam = 0.6
    spec = scheme_spec(name)
    far = abs(float(stability_function(spec, -1e9, lam)))
    assert far == pytest.approx(tail_limit(spec, lam), abs=1e-6)


@pytest.mark.parametrize("name,expected", [
    ("ee", 0.5), ("erk2p1", 1 / 3), ("l2a", 0.301), ("sle", 1 / (2 * math.e)),
])
def test_threshold_examples(name, expected):
    assert lambda_threshold(name) == pytest.approx(expected, abs=1e-3)


def test_threshold_is_stable_side():
    lam = lambda_threshold("le", tol=1e-5)
    assert sup_abs_phi("le", lam) <= 1 + 1e-9
    assert sup_abs_phi("le", lam - 1e-3) > 1


def test_no_stable_lambda(monkeypatch):
    # every analysed scheme is stable at lambda = 1, so force the failure path
    import expadr.stability as stab

    monkeypatch.setattr(stab, "is_stable", lambda spec, lam, slack=stab.SLACK: False)
    with pytest.raises(NoStableLambda):
        stab.lambda_threshold("ee")


def test_threshold_ordering():
    th = {s: lambda_threshold(s) for s in ANALYSED}
    assert th["bfe"] == pytest.approx(0.5, abs=1e-3)
    for s in ("imex2", "ee", "erk2p2"):
        assert th[s] == pytest.approx(th["bfe"], abs=1e-3)
    assert th["l2a"] == pytest.approx(th["l2b"], abs=1e-4)
    assert th["ee"] > th["erk2p1"] > th["l2a"] > th["le"] > th["sle"] > th["sl2"]


def test_alpha_sanity():
    alpha, lam = optimize_alpha_sl2()
    assert alpha == pytest.approx(0.327, abs=5e-3)
    assert lambda_threshold(SchemeSpec("sl2", alpha=1.0)) >= 0.183
    assert lam <= lambda_threshold("sle")


def test_region_points():
    win = (-1.05, 1.05, -0.05, 0.05)
    r = astability_region("sle", 1.0, win, (21, 1))
    # pixel centres at -1.0 and +1.0
    assert r[0, 0] and not r[0, -1]


@pytest.mark.parametrize("spec", [scheme_spec("sle"), SchemeSpec("sl2", alpha=0.327)])
def test_region_contains_negative_axis(spec):
    r = astability_region(spec, 1.0, (-1000.0, 0.0, -1e-9, 1e-9), (1000, 1))
    assert r.all()


def test_region_orientation_and_window():
    # upper half plane in the top rows
    r = astability_region("ee", 1.0, (-3, 3, 0.5, 2.5), (8, 4))
    assert r.shape == (4, 8)
    with pytest.raises(ValueError):
        astability_region("ee", 1.0, (0, 0, -1, 1), (4, 4))


def test_write_pgm(tmp_path):
    r = np.array([[True, False, True], [False, False, True]])
    path = tmp_path / "r.pgm"
    write_pgm(path, r)
    data = path.read_bytes()
    assert data.startswith(b"P5\n3 2\n255\n")
    assert list(data[-6:]) == [255, 0, 255, 0, 0, 255]
