"""Force families for damped Frenkel-Kontorova chains with n particle types.

A chain couples particles through per-type forces F_j(tau, V_{-m}, ..., V_m)
acting on windows of 2m+1 neighbour positions.  The classical family is

    F_j(tau, V) = theta_{j+1} (V_1 - V_0) - theta_j (V_0 - V_{-1})
                  + A sin(2 pi V_0) + L

with spring constants theta repeating with period n.  The inertial dynamics
m0 U'' + U' = F is rewritten through the auxiliary variable Xi = U + 2 m0 U'
and the rate alpha0 = 1/(2 m0); the rewritten first-order system is monotone
(order preserving) exactly when the structural assumptions checked by
:func:`check_assumptions` hold, the sharp one being a mass bound on m0.

This module also evaluates the explicit a-priori constants (K1, C1..C4) that
certify rotation-number brackets downstream.  All constants are plain
arithmetic in the model data; :func:`ledger_identity_exact` reruns that
arithmetic in exact rationals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * math.pi


class ModelError(ValueError):
    """Rejected model input (nonpositive mass, bad spring table, ...)."""


@dataclass(frozen=True)
class ClassicalFK:
    """Nearest-neighbour springs plus a sinusoidal onsite force and a drive."""

    theta: tuple[float, ...]
    amplitude: float = 1.0
    drive: float = 0.0


@dataclass(frozen=True)
class TabulatedForce:
    """User-supplied force callable.

    ``fn(j, tau, window)`` returns F_j for a 1-based type index j and a window
    of 2m+1 positions.  With ``batch=True`` the callable must also accept an
    integer array j of shape (N,) and a window array of shape (N, 2m+1) and
    return shape (N,).
    """

    fn: Callable
    batch: bool = False

    def __hash__(self):  # callables hash by identity, which is what we want
        return hash((id(self.fn), self.batch))


@dataclass(frozen=True)
class ForceModel:
    """A force family together with the data every estimate depends on.

    lip_V is the Lipschitz constant of every F_j in the window variable
    (sup norm), f_at_zero_sup bounds sup_tau |F_j(tau, 0, ..., 0)|.
    """

    n: int
    m: int
    alpha0: float
    kind: ClassicalFK | TabulatedForce
    lip_V: float
    f_at_zero_sup: float

    def __post_init__(self):
        if self.n < 1:
            raise ModelError("type period n must be >= 1")
        if self.m < 0:
            raise ModelError("interaction radius m must be >= 0")
        if not self.alpha0 > 0:
            raise ModelError("alpha0 must be positive")
        if self.lip_V < 0 or self.f_at_zero_sup < 0:
            raise ModelError("lip_V and f_at_zero_sup must be nonnegative")

    @property
    def m0(self) -> float:
        return 1.0 / (2.0 * self.alpha0)

    @property
    def is_autonomous(self) -> bool:
        """Classical forces never depend on tau; tabulated ones may."""
        return isinstance(self.kind, ClassicalFK)


def build_classical_fk(theta, amplitude: float = 1.0, drive: float = 0.0,
                       m0: float = 0.05) -> ForceModel:
    """Classical FK family with n = len(theta) particle types and m = 1.

    lip_V is the tight sup-norm Lipschitz constant of the affine-plus-sine
    form: per-slot sums theta_j + (theta_j + theta_{j+1} + 2 pi A) + theta_{j+1},
    maximised over j.
    """
    theta = tuple(float(t) for t in theta)
    if not theta or any(t <= 0 for t in theta):
        raise ModelError("spring constants theta must all be positive")
    if not m0 > 0:
        raise ModelError("mass m0 must be positive")
    if amplitude < 0:
        raise ModelError("potential amplitude must be nonnegative")
    n = len(theta)
    pair = [theta[j] + theta[(j + 1) % n] for j in range(n)]
    lip_v = max(2.0 * s + TWO_PI * amplitude for s in pair)
    return ForceModel(
        n=n, m=1, alpha0=1.0 / (2.0 * m0),
        kind=ClassicalFK(theta=theta, amplitude=float(amplitude), drive=float(drive)),
        lip_V=lip_v, f_at_zero_sup=abs(float(drive)),
    )


def build_tabulated(fn, n: int, m: int, m0: float, lip_V: float,
                    f_at_zero_sup: float, batch: bool = False) -> ForceModel:
    """Wrap a user callable; lip_V and f_at_zero_sup are taken on trust and
    cross-checked by sampling in :func:`check_assumptions`."""
    if not m0 > 0:
        raise ModelError("mass m0 must be positive")
    return ForceModel(n=n, m=m, alpha0=1.0 / (2.0 * m0),
                      kind=TabulatedForce(fn=fn, batch=batch),
                      lip_V=float(lip_V), f_at_zero_sup=float(f_at_zero_sup))


def build_constant_force(value: float, n: int = 1, m: int = 1, m0: float = 0.05) -> ForceModel:
    """F_j identically equal to ``value``; the exactly solvable reference case."""
    v = float(value)

    def fn(j, tau, window):
        w = np.asarray(window, dtype=float)
        if w.ndim == 2:
            return np.full(w.shape[0], v)
        return v

    return build_tabulated(fn, n=n, m=m, m0=m0, lip_V=0.0,
                           f_at_zero_sup=abs(v), batch=True)


def with_extra_drive(model: ForceModel, L: float) -> ForceModel:
    """The family (L + F_j)_j.  Lipschitz data is unchanged; the zero-window
    bound grows by at most |L|."""
    if L == 0.0:
        return model
    if isinstance(model.kind, ClassicalFK):
        kind = replace(model.kind, drive=model.kind.drive + float(L))
        return replace(model, kind=kind, f_at_zero_sup=abs(kind.drive))
    base = model.kind

    def fn(j, tau, window):
        return base.fn(j, tau, window) + L

    return replace(model, kind=TabulatedForce(fn=fn, batch=base.batch),
                   f_at_zero_sup=model.f_at_zero_sup + abs(float(L)))


def eval_force(model: ForceModel, j: int, tau: float, window) -> float:
    """F_j(tau, V) for one window of 2m+1 positions; j reduces mod n."""
    w = np.asarray(window, dtype=float)
    if w.shape != (2 * model.m + 1,):
        raise ModelError(f"window must have exactly {2 * model.m + 1} entries, got {w.shape}")
    if isinstance(model.kind, ClassicalFK):
        k = model.kind
        t = (int(j) - 1) % model.n
        c = w[model.m]
        elastic = k.theta[(t + 1) % model.n] * (w[model.m + 1] - c) \
            - k.theta[t] * (c - w[model.m - 1])
        return float(elastic + k.amplitude * math.sin(TWO_PI * c) + k.drive)
    return float(model.kind.fn(int(j), float(tau), w))


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------

#: finite-difference tolerance for sampled (tabulated) assumption checks
SAMPLING_TOL = 1e-8


@dataclass(frozen=True)
class AssumptionCheck:
    holds: bool
    margin: float
    witness: Optional[tuple] = None
    note: str = ""


@dataclass(frozen=True)
class AssumptionReport:
    """Per-assumption verdicts with margins (margin >= 0 iff the assumption
    holds; +inf marks structural guarantees) plus the critical mass, the
    largest m0 for which the first-order system is monotone."""

    a1: AssumptionCheck
    a2: AssumptionCheck
    a3: AssumptionCheck
    a4: AssumptionCheck
    a5: AssumptionCheck
    a6: AssumptionCheck
    critical_mass: float

    @property
    def core_holds(self) -> bool:
        """a1..a5; a6 is only needed for particle-ordering results."""
        return all(getattr(self, k).holds for k in ("a1", "a2", "a3", "a4", "a5"))

    def to_json_dict(self) -> dict:
        def enc(c: AssumptionCheck) -> dict:
            margin = c.margin if math.isfinite(c.margin) else None
            d = {"holds": c.holds, "margin": margin}
            if c.witness is not None:
                d["witness"] = list(c.witness)
            if c.note:
                d["note"] = c.note
            return d

        out = {k: enc(getattr(self, k)) for k in ("a1", "a2", "a3", "a4", "a5", "a6")}
        out["critical_mass"] = self.critical_mass
        out["core_holds"] = self.core_holds
        return out


def _check_classical(model: ForceModel) -> AssumptionReport:
    k = model.kind
    n = model.n
    a0 = model.alpha0
    amp = k.amplitude
    pair_max = max(k.theta[j] + k.theta[(j + 1) % n] for j in range(n))
    th_min = min(k.theta)
    th_max = max(k.theta)

    # sup of -dF/dV0 = theta_j + theta_{j+1} + 2 pi A; monotonicity of
    # 2F + alpha0 V0 needs alpha0 >= 2 pair + 4 pi A
    a3_threshold = 2.0 * pair_max + 2.0 * TWO_PI * amp
    a3_margin = a0 - a3_threshold
    # ordering of distinct types additionally needs alpha0 >= 4 theta_j + 4 pi A
    a6_margin = a0 - (4.0 * th_max + 2.0 * TWO_PI * amp)
    critical_mass = 1.0 / (2.0 * a3_threshold) if a3_threshold > 0 else math.inf

    # the worst onsite derivative sits where cos(2 pi V0) = -1, i.e. V0 = 1/2
    return AssumptionReport(
        a1=AssumptionCheck(True, math.inf, note="affine-plus-sine form, Lipschitz by construction"),
        a2=AssumptionCheck(th_min > 0, th_min),
        a3=AssumptionCheck(a3_margin >= 0, a3_margin,
                           witness=None if a3_margin >= 0 else (0.5,)),
        a4=AssumptionCheck(True, math.inf, note="exact by construction"),
        a5=AssumptionCheck(True, math.inf, note="spring table repeats with period n"),
        a6=AssumptionCheck(a6_margin >= 0, a6_margin,
                           witness=None if a6_margin >= 0 else (0.5,)),
        critical_mass=critical_mass,
    )


def _check_tabulated(model: ForceModel, d: int, tol: float) -> AssumptionReport:
    """Centered finite differences with step 1/d on [0,1)^{2m+2}; periodicity
    reduces every check to one cell."""
    n, m = model.n, model.m
    w = 2 * model.m + 1
    h = 1.0 / d

    axes = [np.arange(d) * h for _ in range(w + 1)]  # tau plus 2m+1 window slots
    mesh = np.meshgrid(*axes, indexing="ij")
    taus = mesh[0].ravel()
    windows = np.stack([g.ravel() for g in mesh[1:]], axis=-1)
    npts = windows.shape[0]

    def f_all(j: int, tau_arr, win_arr):
        if model.kind.batch:
            jj = np.full(win_arr.shape[0], j, dtype=int)
            # tabulated batch callables take scalar tau per call in tests;
            # evaluate per distinct tau to stay general
            out = np.empty(win_arr.shape[0])
            for t in np.unique(tau_arr):
                sel = tau_arr == t
                out[sel] = model.kind.fn(jj[sel], float(t), win_arr[sel])
            return out
        return np.array([model.kind.fn(j, float(t), wv)
                         for t, wv in zip(tau_arr, win_arr)])

    worst = {
        "a1": (math.inf, None), "a2": (math.inf, None), "a3": (math.inf, None),
        "a5": (math.inf, None),
    }
    a4_res, a4_wit = 0.0, None
    sup_neg_d0 = 0.0

    for j in range(1, n + 1):
        base = f_all(j, taus, windows)

        # periodicity in the window and in tau
        res = np.abs(f_all(j, taus, windows + 1.0) - base)
        i = int(np.argmax(res))
        if res[i] > a4_res:
            a4_res, a4_wit = float(res[i]), (j, float(taus[i]), *windows[i])
        res = np.abs(f_all(j, taus + 1.0, windows) - base)
        i = int(np.argmax(res))
        if res[i] > a4_res:
            a4_res, a4_wit = float(res[i]), (j, float(taus[i]), *windows[i])

        # type periodicity
        res = np.abs(f_all(j + n, taus, windows) - base)
        i = int(np.argmax(res))
        if tol - res[i] < worst["a5"][0]:
            worst["a5"] = (float(tol - res[i]), (j, float(taus[i]), *windows[i]))

        grad_abs_sum = np.zeros(npts)
        for slot in range(w):
            shift = np.zeros(w)
            shift[slot] = h / 2
            dF = (f_all(j, taus, windows + shift) - f_all(j, taus, windows - shift)) / h
            grad_abs_sum += np.abs(dF)
            if slot == m:
                mar = model.alpha0 + 2.0 * dF
                i = int(np.argmin(mar))
                if mar[i] < worst["a3"][0]:
                    worst["a3"] = (float(mar[i]), (j, float(taus[i]), *windows[i]))
                sup_neg_d0 = max(sup_neg_d0, float(np.max(-dF)))
            else:
                i = int(np.argmin(dF))
                if dF[i] < worst["a2"][0]:
                    worst["a2"] = (float(dF[i]), (j, float(taus[i]), *windows[i]))
        mar = model.lip_V + tol - grad_abs_sum
        i = int(np.argmin(mar))
        if mar[i] < worst["a1"][0]:
            worst["a1"] = (float(mar[i]), (j, float(taus[i]), *windows[i]))

    # a6 on sampled ordered tuples (V_{-m}, ..., V_{m+1})
    rng = np.random.default_rng(0)
    tup = np.sort(rng.uniform(0.0, 2.0, size=(max(256, 64 * d), w + 1)), axis=1)
    ts = rng.uniform(0.0, 1.0, size=tup.shape[0])
    a6_worst = (math.inf, None)
    for j in range(1, n + 1):
        lhs = 2.0 * f_all(j + 1, ts, tup[:, 1:]) + model.alpha0 * tup[:, m + 1]
        rhs = 2.0 * f_all(j, ts, tup[:, :-1]) + model.alpha0 * tup[:, m]
        mar = lhs - rhs
        i = int(np.argmin(mar))
        if mar[i] < a6_worst[0]:
            a6_worst = (float(mar[i]), (j, float(ts[i]), *tup[i]))

    def chk(key, strict_tol=-tol):
        mval, wit = worst[key]
        return AssumptionCheck(mval >= strict_tol, mval, wit if mval < strict_tol else None)

    critical = 1.0 / (4.0 * sup_neg_d0) if sup_neg_d0 > 0 else math.inf
    return AssumptionReport(
        a1=chk("a1"),
        a2=chk("a2"),
        a3=chk("a3"),
        a4=AssumptionCheck(a4_res <= tol, tol - a4_res,
                           a4_wit if a4_res > tol else None),
        a5=chk("a5"),
        a6=AssumptionCheck(a6_worst[0] >= -tol, a6_worst[0],
                           a6_worst[1] if a6_worst[0] < -tol else None),
        critical_mass=critical,
    )


def check_assumptions(model: ForceModel, sample_density: int = 8,
                      tol: float = SAMPLING_TOL) -> AssumptionReport:
    """Verify the structural assumptions.

    Classical models use closed forms; tabulated ones are sampled with
    centered differences on a periodic cell.  critical_mass = 1/(2 alpha0_min)
    where alpha0_min is the smallest rate satisfying the V0-monotonicity
    bound on the (sampled or closed-form) derivative range.
    """
    if isinstance(model.kind, ClassicalFK):
        return _check_classical(model)
    if sample_density < 2:
        raise ModelError("sample_density must be >= 2")
    return _check_tabulated(model, sample_density, tol)


def require_monotone(model: ForceModel) -> AssumptionReport:
    report = check_assumptions(model)
    if not report.core_holds:
        failing = [k for k in ("a1", "a2", "a3", "a4", "a5")
                   if not getattr(report, k).holds]
        raise ModelError(
            f"model fails monotonicity assumptions {failing}; "
            f"critical mass m0^c = {report.critical_mass:.6g}, model m0 = {model.m0:.6g}")
    return report


# ---------------------------------------------------------------------------
# Constants ledger
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantsLedger:
    """Explicit a-priori constants evaluated at slope p.

    C2/T is the certified half-width of the rotation bracket; C3 bounds the
    distance of the orbit to the traveling line p y + lambda tau; C4 bounds
    |lambda| itself.  The chain C1 -> C2 -> C3 collapses to the closed form
    C3 = 13 + 6 C4/alpha0 + 7 p + 2 K1, reproduced by :meth:`c3_closed_form`.
    """

    p: float
    K0: float
    M0: float
    C0: float
    Gbar: float
    K1: float
    C1: float
    C2: float
    C3: float
    C4: float
    alpha0: float
    delta: float = 0.0
    a0: float = 0.0

    def c3_closed_form(self) -> float:
        return 13.0 + 6.0 * self.C4 / self.alpha0 + 7.0 * self.p + 2.0 * self.K1

    def to_json_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("p", "K0", "M0", "C0", "Gbar", "K1", "C1", "C2", "C3", "C4",
                 "alpha0", "delta", "a0")}


def _ledger_arith(alpha0, lip_v, f0, n, m, p, K0, M0, delta, a0, C0, one):
    """Shared ledger arithmetic; ``one`` is 1 in the working number type."""
    if delta == 0:
        a0 = 0 * one
    L_F = lip_v
    L0 = 2 * L_F + alpha0
    if delta > 0:
        L0 = max(L0, delta * (abs(a0) + C0))
    L1 = delta
    L2 = L1 * K0
    Gbar = 2 * f0 + delta * abs(a0) * K0
    K1 = max(L2 * C0 + L0 * (2 * one + K0 * m / n + M0) + Gbar, alpha0 * M0)
    C4 = max(alpha0 * M0,
             L_F * (2 * one + p * (m + n)) + f0 + (p / 2 + L_F) * (a0 + C0))
    C1 = C4 / alpha0 + 3 * one + 2 * p
    C2 = 6 * one + 4 * C4 / alpha0 + 3 * p + 2 * C1 + 2 * K1
    C3 = C2 + one
    closed = 13 * one + 6 * C4 / alpha0 + 7 * p + 2 * K1
    return Gbar, K1, C1, C2, C3, C4, closed, a0


def constants_ledger(model: ForceModel, p: float, K0: Optional[float] = None,
                     M0: float = 0.0, delta: float = 0.0, a0: float = 0.0,
                     C0: float = 1.0) -> ConstantsLedger:
    """Evaluate the full ledger at slope p.

    For delta = 0 the transport coefficients vanish (L1 = L2 = 0, a0 forced
    to 0) and the window oscillation constant C0 defaults to 1.
    """
    if not p > 0:
        raise ModelError("slope p must be positive")
    k0_min = max(p, 1.0 / p)
    if K0 is None:
        K0 = k0_min
    if K0 < k0_min * (1 - 1e-12):
        raise ModelError(f"K0 must be >= max(p, 1/p) = {k0_min}")
    Gbar, K1, C1, C2, C3, C4, closed, a0_eff = _ledger_arith(
        model.alpha0, model.lip_V, model.f_at_zero_sup, model.n, model.m,
        float(p), float(K0), float(M0), float(delta), float(a0), float(C0), 1.0)
    ledger = ConstantsLedger(p=float(p), K0=float(K0), M0=float(M0), C0=float(C0),
                             Gbar=Gbar, K1=K1, C1=C1, C2=C2, C3=C3, C4=C4,
                             alpha0=model.alpha0, delta=float(delta), a0=a0_eff)
    assert abs(ledger.c3_closed_form() - C3) <= 1e-12 * max(1.0, abs(C3))
    return ledger


def ledger_identity_exact(model: ForceModel, p, K0=None, M0=0, delta=0, a0=0, C0=1) -> bool:
    """Recompute the ledger in exact rationals and compare C2 + 1 with the
    closed form for C3 bit for bit."""
    p = Fraction(p)
    if K0 is None:
        K0 = max(p, 1 / p)
    alpha0, lip_v, f0 = (Fraction(x) for x in
                         (model.alpha0, model.lip_V, model.f_at_zero_sup))
    _, _, _, C2, C3, _, closed, _ = _ledger_arith(
        alpha0, lip_v, f0, Fraction(model.n), Fraction(model.m),
        p, Fraction(K0), Fraction(M0), Fraction(delta), Fraction(a0),
        Fraction(C0), Fraction(1))
    return C3 == closed and C3 == C2 + 1


# ---------------------------------------------------------------------------
# JSON config interface
# ---------------------------------------------------------------------------

def model_from_config(cfg: dict) -> ForceModel:
    """Build a model from {n, m, m0 | alpha0, force: {...}}.

    Only the classical family and the constant force are expressible in JSON;
    general tabulated forces must be constructed in code.
    """
    force = cfg.get("force")
    if not isinstance(force, dict) or "kind" not in force:
        raise ModelError("config.force.kind is required")
    if "m0" in cfg:
        m0 = float(cfg["m0"])
    elif "alpha0" in cfg:
        a0 = float(cfg["alpha0"])
        if not a0 > 0:
            raise ModelError("config.alpha0 must be positive")
        m0 = 1.0 / (2.0 * a0)
    else:
        raise ModelError("config must give m0 or alpha0")
    kind = force["kind"]
    if kind == "classical_fk":
        model = build_classical_fk(theta=force["theta"],
                                   amplitude=force.get("amplitude", 1.0),
                                   drive=force.get("drive", 0.0), m0=m0)
    elif kind == "constant":
        model = build_constant_force(force.get("value", 0.0),
                                     n=int(cfg.get("n", 1)),
                                     m=int(cfg.get("m", 1)), m0=m0)
    else:
        raise ModelError(f"config.force.kind: unknown kind {kind!r}")
    if "n" in cfg and int(cfg["n"]) != model.n:
        raise ModelError(f"config.n = {cfg['n']} does not match force data (n = {model.n})")
    if "m" in cfg and int(cfg["m"]) != model.m:
        raise ModelError(f"config.m = {cfg['m']} does not match force kind (m = {model.m})")
    return model


def model_to_config(model: ForceModel) -> dict:
    if not isinstance(model.kind, ClassicalFK):
        raise ModelError("only classical models serialize to JSON configs")
    k = model.kind
    return {"n": model.n, "m": model.m, "m0": model.m0,
            "force": {"kind": "classical_fk", "theta": list(k.theta),
                      "amplitude": k.amplitude, "drive": k.drive}}


def report_to_json(report: AssumptionReport, indent: int = 2) -> str:
    return json.dumps(report.to_json_dict(), indent=indent, sort_keys=True)
