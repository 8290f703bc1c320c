"""Rotation numbers with certified brackets and the effective Hamiltonian.

For slope-p initial data the orbit stays within C3 of the traveling line
p y + lambda tau for a unique lambda; the window rates

    lambda_plus(T)  = sup over tracked series v and times tau of (v(tau+T) - v(tau)) / T
    lambda_minus(T) = the corresponding inf

bracket lambda (T lambda_plus is sub-additive, so the brackets nest), and the
bracket width obeys the a-priori bound (lambda_plus - lambda_minus) <= C2 / T
with C2 from the constants ledger.  lambda_hat is the bracket midpoint, which
minimizes the worst-case error; the map (L, p) -> lambda is the effective
Hamiltonian F(L, p) tabulated by :func:`sweep`.

Sups over tau are taken on the sampled grid only; the induced slack
(sample_dt * max observed velocity, in lambda units divided by T) is reported
rather than hidden.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .model import (ForceModel, ConstantsLedger, constants_ledger,
                    require_monotone, with_extra_drive)
from .chain import (TrajectoryLog, cfl_dt, extend, init_linear, run,
                    NumericalError)


class LogTooShort(ValueError):
    pass


def lambda_pm(log: TrajectoryLog, T: float) -> tuple[float, float]:
    """Window rates (lambda_minus, lambda_plus) over all tracked U and Xi
    series; T snaps to the sample grid."""
    h = log.sample_dt
    K = int(round(T / h))
    if K < 1:
        raise LogTooShort(f"window T = {T} is below one sample spacing {h}")
    S = log.sample_times.size - 1
    if S < 2 * K:
        raise LogTooShort(
            f"log spans {S * h:.6g}, need at least 2T = {2 * K * h:.6g}")
    series = np.vstack([log.tracked_u, log.tracked_xi])
    T_eff = K * h
    d = (series[:, K:] - series[:, :-K]) / T_eff
    return float(d.min()), float(d.max())


@dataclass(frozen=True)
class RotationEstimate:
    """Bracketed rotation number with both error accountings.

    certified_halfwidth is the a-priori C2/T; the empirical bracket
    [lambda_minus, lambda_plus] contains lambda by sub-additivity up to the
    reported sampling slack.  history holds one row per doubling stage.
    """

    lambda_minus: float
    lambda_plus: float
    lambda_hat: float
    T: float
    certified_halfwidth: float
    empirical_width: float
    slack: float
    converged: bool
    ledger: ConstantsLedger
    p: Fraction
    history: tuple = ()

    @property
    def halfwidth_best(self) -> float:
        """Tightest valid half-width: empirical bracket or a-priori bound."""
        return min(self.certified_halfwidth, self.empirical_width / 2.0 + self.slack)


def rotation_number(model: ForceModel, p, L_extra: float = 0.0,
                    tol: float = 1e-3, T_cap: float = 2000.0, *,
                    cells: int = 1, safety: float = 0.5,
                    sample_dt: Optional[float] = None,
                    T0: Optional[float] = None,
                    perturbation=None) -> RotationEstimate:
    """Certified rotation number for the family (L_extra + F_j) at slope p.

    Doubles the window T (reusing one trajectory) until
    min(empirical width, C2/T) <= 2 tol or T reaches T_cap; the estimate then
    carries the bracket, the certified half-width C2/T and a converged flag.
    """
    p = Fraction(p)
    model2 = with_extra_drive(model, L_extra)
    require_monotone(model2)
    ledger = constants_ledger(model2, p=float(p))
    dt = cfl_dt(model2, safety=safety, check=False)
    if sample_dt is None:
        sample_dt = dt
    if T0 is None:
        T0 = max(1.0, 64.0 * sample_dt)
    # windows are integer multiples of the sample spacing so that the T and 2T
    # sups run over aligned grids (exact bracket nesting)
    K0 = max(1, int(math.ceil(T0 / sample_dt)))
    T = K0 * sample_dt

    chain = init_linear(model2, p, cells=cells, perturbation=perturbation)
    log = run(chain, 2.0 * T, sample_dt, dt=dt, check=False)

    history = []
    while True:
        lam_lo, lam_hi = lambda_pm(log, T)
        width = lam_hi - lam_lo
        certified = ledger.C2 / T
        slack = log.max_velocity() * sample_dt / T
        history.append({"T": T, "lambda_minus": lam_lo, "lambda_plus": lam_hi,
                        "certified_halfwidth": certified, "slack": slack})
        if min(width, certified) <= 2.0 * tol:
            converged = True
            break
        if 2.0 * T > T_cap:
            converged = False
            break
        T = 2.0 * T
        log = extend(log, 2.0 * T - log.span)

    return RotationEstimate(
        lambda_minus=lam_lo, lambda_plus=lam_hi,
        lambda_hat=0.5 * (lam_lo + lam_hi), T=T,
        certified_halfwidth=certified, empirical_width=width, slack=slack,
        converged=converged, ledger=ledger, p=p, history=tuple(history))


def effective_hamiltonian(model: ForceModel, p, L: float = 0.0,
                          tol: float = 1e-3, T_cap: float = 2000.0, **kw) -> float:
    """F(L, p): the rotation number of the driven family at slope p."""
    return rotation_number(model, p, L_extra=L, tol=tol, T_cap=T_cap, **kw).lambda_hat


# ---------------------------------------------------------------------------
# Tables over (L, p)
# ---------------------------------------------------------------------------

@dataclass
class EffectiveTable:
    """Tabulated F(L, p) with per-entry half-widths and ledger metadata.

    lam[i, j] is the estimate at (L_grid[i], p_grid[j]); halfwidths holds the
    tightest valid per-entry half-width (empirical bracket vs C2/T).
    """

    p_grid: list                      # Fractions
    L_grid: np.ndarray
    lam: np.ndarray                   # (nL, nP)
    halfwidths: np.ndarray
    converged: np.ndarray             # bool (nL, nP)
    ledger_refs: list                 # per-entry dicts, row major
    failures: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def column(self, p) -> np.ndarray:
        j = self.p_grid.index(Fraction(p))
        return self.lam[:, j]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("L,p,lambda,halfwidth,converged\n")
        for i, L in enumerate(self.L_grid):
            for j, p in enumerate(self.p_grid):
                buf.write(f"{float(L)!r},{p.numerator}/{p.denominator},"
                          f"{float(self.lam[i, j])!r},{float(self.halfwidths[i, j])!r},"
                          f"{int(self.converged[i, j])}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EffectiveTable":
        lines = [ln for ln in text.strip().splitlines()[1:] if ln]
        rows = []
        for ln in lines:
            Ls, ps, lam, hw, conv = ln.split(",")
            rows.append((float(Ls), Fraction(ps), float(lam), float(hw), bool(int(conv))))
        L_grid = sorted({r[0] for r in rows})
        p_grid = sorted({r[1] for r in rows})
        nL, nP = len(L_grid), len(p_grid)
        lam = np.full((nL, nP), np.nan)
        hw = np.full((nL, nP), np.nan)
        conv = np.zeros((nL, nP), dtype=bool)
        for Lv, pv, lv, hv, cv in rows:
            i, j = L_grid.index(Lv), p_grid.index(pv)
            lam[i, j], hw[i, j], conv[i, j] = lv, hv, cv
        return cls(p_grid=p_grid, L_grid=np.array(L_grid), lam=lam,
                   halfwidths=hw, converged=conv,
                   ledger_refs=[{} for _ in range(nL * nP)])

    def to_json_dict(self) -> dict:
        return {
            "p_grid": [f"{p.numerator}/{p.denominator}" for p in self.p_grid],
            "L_grid": [float(x) for x in self.L_grid],
            "lambda": self.lam.tolist(),
            "halfwidths": self.halfwidths.tolist(),
            "converged": self.converged.astype(int).tolist(),
            "ledger_refs": self.ledger_refs,
            "failures": self.failures,
            "diagnostics": self.diagnostics,
        }


def _table_diagnostics(table: EffectiveTable) -> dict:
    """Monotonicity-in-L and continuity-in-p summaries."""
    diag = {}
    if table.L_grid.size >= 2:
        jumps = table.lam[:-1, :] - table.lam[1:, :]   # positive = downward in L
        with np.errstate(invalid="ignore"):
            diag["max_downward_jump_in_L"] = float(np.nanmax(np.maximum(jumps, 0.0))) \
                if np.isfinite(jumps).any() else float("nan")
    if len(table.p_grid) >= 2:
        dp = np.diff([float(p) for p in table.p_grid])
        dl = np.abs(np.diff(table.lam, axis=1))
        with np.errstate(invalid="ignore"):
            diag["max_p_increment"] = float(np.nanmax(dl)) if np.isfinite(dl).any() else float("nan")
            diag["min_p_spacing"] = float(dp.min())
    return diag


def sweep(model: ForceModel, p_grid, L_grid, tol: float = 1e-3,
          T_cap: float = 2000.0, threads: int = 1, **kw) -> EffectiveTable:
    """Fill the (L, p) table; entries are independent runs, collected in a
    fixed order so output bytes do not depend on the thread count."""
    p_grid = [Fraction(p) for p in p_grid]
    L_grid = np.asarray(list(L_grid), dtype=float)
    if not p_grid or L_grid.size == 0:
        raise ValueError("p_grid and L_grid must be nonempty")
    jobs = [(i, j, float(L), p) for i, L in enumerate(L_grid)
            for j, p in enumerate(p_grid)]

    def solve(job):
        i, j, L, p = job
        try:
            est = rotation_number(model, p, L_extra=L, tol=tol, T_cap=T_cap, **kw)
            return (i, j, est.lambda_hat, est.halfwidth_best, est.converged,
                    {"C2": est.ledger.C2, "C4": est.ledger.C4,
                     "K1": est.ledger.K1, "T": est.T}, None)
        except NumericalError as exc:
            return (i, j, float("nan"), float("nan"), False, {}, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(solve, jobs))
    else:
        results = [solve(job) for job in jobs]

    nL, nP = L_grid.size, len(p_grid)
    lam = np.full((nL, nP), np.nan)
    hw = np.full((nL, nP), np.nan)
    conv = np.zeros((nL, nP), dtype=bool)
    refs = [{} for _ in range(nL * nP)]
    failures = []
    for i, j, lv, hv, cv, ref, err in results:
        lam[i, j], hw[i, j], conv[i, j] = lv, hv, cv
        refs[i * nP + j] = ref
        if err is not None:
            failures.append({"L": float(L_grid[i]), "p": str(p_grid[j]), "error": err})

    table = EffectiveTable(p_grid=p_grid, L_grid=L_grid, lam=lam, halfwidths=hw,
                           converged=conv, ledger_refs=refs, failures=failures)
    table.diagnostics = _table_diagnostics(table)
    return table


def monotone_in_L_violation(table: EffectiveTable, j: Optional[int] = None) -> float:
    """Worst downward step of L -> lambda beyond the summed half-widths
    (negative or zero means monotone within certification)."""
    cols = range(len(table.p_grid)) if j is None else [j]
    worst = -math.inf
    for jj in cols:
        lam = table.lam[:, jj]
        hwc = table.halfwidths[:, jj]
        for i in range(lam.size - 1):
            if np.isnan(lam[i]) or np.isnan(lam[i + 1]):
                continue
            worst = max(worst, (lam[i] - lam[i + 1]) - (hwc[i] + hwc[i + 1]))
    return worst


def depinning_threshold(table: EffectiveTable, p, tol: float = 1e-6) -> tuple[float, float]:
    """Bracket the drive where the p-column leaves lambda = 0, from the table
    alone (measured, not asserted)."""
    j = table.p_grid.index(Fraction(p))
    lam = table.lam[:, j]
    moving = np.flatnonzero(lam > tol)
    if moving.size == 0:
        return float(table.L_grid[-1]), math.inf
    k = int(moving[0])
    lo = float(table.L_grid[k - 1]) if k > 0 else -math.inf
    return lo, float(table.L_grid[k])


def table_to_json(table: EffectiveTable, indent: int = 2) -> str:
    return json.dumps(table.to_json_dict(), indent=indent, sort_keys=True)
