"""Force families, assumption checks, and the constants ledger."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fkhomog as fk
from fkhomog.model import (ModelError, build_tabulated, model_from_config,
                           model_to_config, report_to_json)


def test_build_zero_potential_linear_chain():
    m = fk.build_classical_fk([1.0], amplitude=0.0, drive=0.0, m0=0.05)
    assert m.alpha0 == 10.0
    assert m.n == 1 and m.m == 1
    # F(V) = V1 - 2 V0 + V-1
    assert fk.eval_force(m, 1, 0.0, (0.0, 0.0, 0.0)) == 0.0
    assert fk.eval_force(m, 1, 0.0, (1.0, 2.0, 4.0)) == pytest.approx(1.0)


def test_build_two_type_model():
    m = fk.build_classical_fk([1.0, 2.0], amplitude=1.0, drive=0.3, m0=0.01)
    assert m.n == 2
    assert m.alpha0 == 50.0
    # F_1 couples theta_1 = 1 and theta_2 = 2
    v = fk.eval_force(m, 1, 0.0, (0.0, 0.0, 1.0))
    assert v == pytest.approx(2.0 * 1.0 + 0.3)


def test_build_rejects_bad_input():
    with pytest.raises(ModelError):
        fk.build_classical_fk([1.0], m0=0.0)
    with pytest.raises(ModelError):
        fk.build_classical_fk([1.0, -1.0], m0=0.01)
    with pytest.raises(ModelError):
        fk.build_classical_fk([], m0=0.01)


def test_eval_force_trivial_integer_lattice():
    m = fk.build_classical_fk([1.0], amplitude=1.0, drive=0.0, m0=0.01)
    for k in range(-2, 3):
        v = fk.eval_force(m, 1, 0.0, (k - 1.0, float(k), k + 1.0))
        assert abs(v) < 1e-12          # sin(2 pi k) = 0, zero elastic term


def test_eval_force_two_type_value():
    m = fk.build_classical_fk([1.0, 2.0], amplitude=1.0, drive=0.5, m0=0.01)
    got = fk.eval_force(m, 1, 0.37, (0.0, 0.25, 0.5))
    # independent scalar evaluation of the affine-plus-sine form
    want = 2.0 * (0.5 - 0.25) - 1.0 * (0.25 - 0.0) + math.sin(2 * math.pi * 0.25) + 0.5
    assert got == pytest.approx(want, abs=1e-15)
    assert got == pytest.approx(1.75, abs=1e-15)


def test_eval_force_reduces_j_mod_n():
    m = fk.build_classical_fk([1.0, 2.0], amplitude=0.3, drive=0.1, m0=0.01)
    w = (0.1, 0.33, 0.8)
    for j in (1, 2):
        assert fk.eval_force(m, j, 0.0, w) == fk.eval_force(m, j + 2, 0.0, w)
        assert fk.eval_force(m, j, 0.0, w) == fk.eval_force(m, j - 2, 0.0, w)


def test_eval_force_window_shape_checked():
    m = fk.build_classical_fk([1.0], m0=0.01)
    with pytest.raises(ModelError):
        fk.eval_force(m, 1, 0.0, (0.0, 1.0))


@given(th=st.lists(st.floats(0.2, 3.0), min_size=1, max_size=3),
       amp=st.floats(0.0, 2.0), drive=st.floats(-2.0, 2.0),
       base=st.floats(-3.0, 3.0), shift=st.integers(-3, 3),
       tshift=st.integers(-2, 2))
@settings(max_examples=60, deadline=None)
def test_classical_periodicity_is_exact(th, amp, drive, base, shift, tshift):
    """(A4): integer shifts of the window and of tau change nothing, exactly."""
    m = fk.build_classical_fk(th, amplitude=amp, drive=drive, m0=0.001)
    w = (base - 0.4, base, base + 0.7)
    ws = tuple(v + shift for v in w)
    a = fk.eval_force(m, 1, 0.3, w)
    b = fk.eval_force(m, 1, 0.3 + tshift, ws)
    # the elastic part uses differences and sin(2 pi (v+k)) = sin(2 pi v) only
    # up to fp rounding of the argument
    assert b == pytest.approx(a, abs=1e-9)
    if shift == 0:
        assert a == b


def test_check_assumptions_critical_mass_closed_form():
    m = fk.build_classical_fk([1.0], amplitude=1.0, drive=0.0, m0=0.02)
    rep = fk.check_assumptions(m)
    # sup(-dF/dV0) = 2 + 2 pi, so monotonicity needs alpha0 >= 4 + 4 pi
    assert rep.critical_mass == pytest.approx(1.0 / (8.0 + 8.0 * math.pi), rel=1e-14)
    assert rep.core_holds


def test_check_assumptions_no_potential_margins():
    m = fk.build_classical_fk([1.0], amplitude=0.0, drive=0.0, m0=0.1)
    rep = fk.check_assumptions(m)
    # a3 needs alpha0 >= 4 when A = 0; alpha0 = 5 here
    assert rep.a3.holds and rep.a3.margin == pytest.approx(1.0)
    assert rep.a2.holds and rep.a2.margin == pytest.approx(1.0)


def test_check_assumptions_a3_margin_zero_at_critical_mass():
    m0c = 1.0 / (8.0 + 8.0 * math.pi)
    m = fk.build_classical_fk([1.0], amplitude=1.0, drive=0.0, m0=m0c)
    rep = fk.check_assumptions(m)
    assert abs(rep.a3.margin) < 1e-12
    assert rep.a3.holds


def test_check_assumptions_a3_fails_below_threshold():
    # alpha0 just below 2 (th_j + th_{j+1}) + 4 pi for theta = (1, 2)
    alpha0 = 2.0 * 3.0 + 4.0 * math.pi - 0.1
    m = fk.build_classical_fk([1.0, 2.0], amplitude=1.0, drive=0.0,
                              m0=1.0 / (2.0 * alpha0))
    rep = fk.check_assumptions(m)
    assert not rep.a3.holds
    assert rep.a3.margin == pytest.approx(-0.1, abs=1e-9)
    assert rep.a3.witness is not None


def test_a3_margin_matches_sampled_derivative():
    """Sampled d F / d V0 agrees with the closed-form a3 margin to 1e-12."""
    m = fk.build_classical_fk([1.0, 2.0], amplitude=0.7, drive=0.4, m0=0.004)
    h = 1e-6
    worst = math.inf
    for j in (1, 2):
        for v0 in np.linspace(0.0, 1.0, 2001):
            d = (fk.eval_force(m, j, 0.0, (0.0, v0 + h, 0.0))
                 - fk.eval_force(m, j, 0.0, (0.0, v0 - h, 0.0))) / (2 * h)
            worst = min(worst, m.alpha0 + 2.0 * d)
    rep = fk.check_assumptions(m)
    assert worst == pytest.approx(rep.a3.margin, abs=1e-5)


def test_a2_sampled_neighbor_derivatives_nonnegative():
    m = fk.build_classical_fk([1.0, 0.5], amplitude=1.0, drive=0.0, m0=0.002)
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(200):
        w = rng.uniform(-1, 1, 3)
        for slot in (0, 2):
            wp = w.copy(); wp[slot] += h
            wm = w.copy(); wm[slot] -= h
            d = (fk.eval_force(m, 1, 0.0, wp) - fk.eval_force(m, 1, 0.0, wm)) / (2 * h)
            assert d >= -1e-9


def test_a6_threshold_two_types():
    # a1-a5 hold but a6 fails between the two thresholds
    alpha0 = 4.0 * 2.0 + 4.0 * math.pi - 0.5        # below a6 bound for theta_max = 2
    assert alpha0 > 2.0 * 3.0 + 4.0 * math.pi        # above the a3 bound
    m = fk.build_classical_fk([1.0, 2.0], amplitude=1.0, drive=0.0,
                              m0=1.0 / (2.0 * alpha0))
    rep = fk.check_assumptions(m)
    assert rep.core_holds
    assert not rep.a6.holds


def test_tabulated_constant_force_passes_checks():
    m = fk.build_constant_force(1.5, m0=0.05)
    rep = fk.check_assumptions(m, sample_density=4)
    assert rep.core_holds and rep.a6.holds
    assert rep.critical_mass == math.inf


def test_tabulated_periodicity_violation_detected():
    def fn(j, tau, w):
        w = np.asarray(w)
        body = 0.1 * w[..., 1]                      # not 1-periodic in the window
        return body if w.ndim == 2 else float(body)

    m = build_tabulated(fn, n=1, m=1, m0=0.05, lip_V=0.1, f_at_zero_sup=0.0,
                        batch=True)
    rep = fk.check_assumptions(m, sample_density=4)
    assert not rep.a4.holds
    assert rep.a4.witness is not None


def test_tabulated_sampled_a3_margin():
    def fn(j, tau, w):
        w = np.asarray(w)
        body = np.sin(2 * np.pi * w[..., 1])
        return body if w.ndim == 2 else float(body)

    alpha0 = 4.0 * math.pi + 1.0                    # margin 1 over 2*sup(-dF/dV0)
    m = build_tabulated(fn, n=1, m=1, m0=1 / (2 * alpha0), lip_V=2 * math.pi,
                        f_at_zero_sup=0.0, batch=True)
    rep = fk.check_assumptions(m, sample_density=16)
    assert rep.a3.holds
    # centered FD underestimates the sine derivative by sinc(pi h): ~1.3% at h=1/16
    assert rep.a3.margin == pytest.approx(1.0, abs=0.1)
    assert rep.critical_mass == pytest.approx(1 / (8 * math.pi), rel=0.02)


# ---------------------------------------------------------------------------
# Constants ledger
# ---------------------------------------------------------------------------

def test_ledger_drops_to_gbar_when_m0_zero():
    m = fk.build_classical_fk([1.0], amplitude=1.0, drive=0.8, m0=0.02)
    led = fk.constants_ledger(m, p=1.0, M0=0.0, delta=0.0)
    assert led.Gbar == pytest.approx(2.0 * 0.8)
    assert led.K1 >= led.Gbar


def test_ledger_full_values_at_reference_point():
    alpha0 = 4.0 + 4.0 * math.pi
    m = fk.build_classical_fk([1.0], amplitude=1.0, drive=0.0,
                              m0=1.0 / (2.0 * alpha0))
    led = fk.constants_ledger(m, p=1.0, K0=1.0, M0=0.0, delta=0.0)
    L_F = 4.0 + 2.0 * math.pi
    # direct arithmetic through the ledger formulas
    L0 = 2.0 * L_F + alpha0
    K1 = L0 * (2.0 + 1.0 * 1.0 / 1.0 + 0.0) + 0.0   # L2 = 0, Gbar = 0, M0 = 0
    C4 = L_F * (2.0 + 1.0 * 2.0) + 0.0 + (0.5 + L_F) * 1.0
    C1 = C4 / alpha0 + 3.0 + 2.0
    C2 = 6.0 + 4.0 * C4 / alpha0 + 3.0 + 2.0 * C1 + 2.0 * K1
    assert led.K1 == pytest.approx(K1, rel=1e-14)
    assert led.C4 == pytest.approx(C4, rel=1e-14)
    assert led.C1 == pytest.approx(C1, rel=1e-14)
    assert led.C2 == pytest.approx(C2, rel=1e-14)
    assert led.C3 == pytest.approx(C2 + 1.0, rel=1e-14)
    assert led.c3_closed_form() == pytest.approx(led.C3, rel=1e-12)


def test_ledger_ordering_and_finiteness():
    m = fk.build_classical_fk([1.0, 2.0], amplitude=0.5, drive=1.0, m0=0.005)
    for p in (0.25, 1.0, 3.0):
        led = fk.constants_ledger(m, p=p)
        vals = [led.Gbar, led.K1, led.C1, led.C2, led.C3, led.C4]
        assert all(math.isfinite(v) and v >= 0 for v in vals)
        assert led.C1 < led.C2 < led.C3


def test_ledger_a0_forced_to_zero_without_delta():
    m = fk.build_classical_fk([1.0], m0=0.02)
    led = fk.constants_ledger(m, p=1.0, delta=0.0, a0=7.0)
    assert led.a0 == 0.0
    led2 = fk.constants_ledger(m, p=1.0, delta=0.5, a0=1.0)
    assert led2.a0 == 1.0
    assert led2.C4 >= led.C4


def test_ledger_requires_valid_K0():
    m = fk.build_classical_fk([1.0], m0=0.02)
    with pytest.raises(ModelError):
        fk.constants_ledger(m, p=2.0, K0=1.5)


@given(th=st.lists(st.floats(0.1, 4.0), min_size=1, max_size=3),
       amp=st.floats(0.0, 2.0), drive=st.floats(-3.0, 3.0),
       m0=st.floats(0.001, 0.2), p=st.fractions(min_value="1/8", max_value=8))
@settings(max_examples=100, deadline=None)
def test_ledger_identity_exact_rationals(th, amp, drive, m0, p):
    """C3 = C2 + 1 equals 13 + 6 C4/alpha0 + 7p + 2 K1 bit for bit in exact
    arithmetic, and to 1e-12 in floats."""
    m = fk.build_classical_fk(th, amplitude=amp, drive=drive, m0=m0)
    assert fk.ledger_identity_exact(m, p)
    led = fk.constants_ledger(m, p=float(p))
    assert led.c3_closed_form() == pytest.approx(led.C3, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# JSON interface
# ---------------------------------------------------------------------------

def test_model_config_roundtrip():
    cfg = {"n": 2, "m": 1, "m0": 0.01,
           "force": {"kind": "classical_fk", "theta": [1.0, 2.0],
                     "amplitude": 1.0, "drive": 0.3}}
    m = model_from_config(cfg)
    assert m.n == 2 and m.alpha0 == 50.0
    back = model_from_config(model_to_config(m))
    assert back == m


def test_model_config_alpha0_form_and_errors():
    m = model_from_config({"alpha0": 20.0,
                           "force": {"kind": "classical_fk", "theta": [1.0]}})
    assert m.alpha0 == 20.0
    with pytest.raises(ModelError):
        model_from_config({"force": {"kind": "classical_fk", "theta": [1.0]}})
    with pytest.raises(ModelError):
        model_from_config({"m0": 0.01, "n": 3,
                           "force": {"kind": "classical_fk", "theta": [1.0]}})


def test_assumption_report_serializes():
    import json
    m = fk.build_classical_fk([1.0], m0=0.02)
    rep = fk.check_assumptions(m)
    d = json.loads(report_to_json(rep))
    assert d["a3"]["holds"] is True
    assert d["a4"]["margin"] is None            # structural guarantee -> inf -> null
