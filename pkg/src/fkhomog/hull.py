"""Hull functions: the periodic shape of a traveling lattice.

A converged slope-p orbit with speed lambda is h_j(p y + lambda tau) in U and
g_j(...) in Xi, where the hull pair (h_j, g_j) is nondecreasing, commutes with
integer shifts (h_j(z+1) = h_j(z) + 1), is ordered in j, satisfies the type
shift h_{j+n}(z) = h_j(z + p), and stays within 2 ceil(C3) of the identity.

Extraction pools phase samples from trajectory snapshots: particle i of type
j at time tau sits at phase z = frac(p y_i + lambda tau) with y_i = (i - j)/n,
and its position lifts onto the graph of h.  Raw samples carry integrator
noise, so they are projected onto the monotone cone (pool-adjacent-violators,
L2 optimal) before gridding.  The phase p y_i is reduced mod 1 in exact
rational arithmetic so long logs cannot drift between bins.

For rational slopes in the pinned regime the orbit visits finitely many
phases and the true hull may be discontinuous; the gridded hull is then the
monotone envelope of the sampled phases and residuals may stagnate under
refinement.  That stagnation is reported, not hidden.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .model import ClassicalFK, ForceModel, ConstantsLedger, TWO_PI
from .chain import TrajectoryLog, TRANSIENT_RELAXATION_MULTIPLE


class HullExtractionError(ValueError):
    pass


def isotonic_fit(v: np.ndarray, w: Optional[np.ndarray] = None) -> np.ndarray:
    """L2 projection onto nondecreasing sequences (pool adjacent violators)."""
    v = np.asarray(v, dtype=float)
    if w is None:
        w = np.ones_like(v)
    # blocks as (weight, mean); merge while the last two violate monotonicity
    means = []
    weights = []
    sizes = []
    for val, wt in zip(v, w):
        means.append(val)
        weights.append(wt)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), weights.pop(), sizes.pop()
            m1, w1, s1 = means.pop(), weights.pop(), sizes.pop()
            wt_tot = w1 + w2
            means.append((m1 * w1 + m2 * w2) / wt_tot)
            weights.append(wt_tot)
            sizes.append(s1 + s2)
    out = np.empty_like(v)
    pos = 0
    for mval, s in zip(means, sizes):
        out[pos:pos + s] = mval
        pos += s
    return out


def _isotonic_periodic(v: np.ndarray, w: Optional[np.ndarray] = None) -> np.ndarray:
    """Monotone projection respecting the lift v(z+1) = v(z) + 1: project two
    stacked periods and keep the first."""
    n = v.size
    vv = np.concatenate([v, v + 1.0])
    ww = None if w is None else np.concatenate([w, w])
    fit = isotonic_fit(vv, ww)
    return fit[:n]


@dataclass
class HullFunction:
    """Sampled hull pair on a uniform phase grid over [0, 1)."""

    p: Fraction
    lam: float
    Z: int
    z_grid: np.ndarray
    h: np.ndarray                  # (n, Z)
    g: np.ndarray                  # (n, Z)
    tau_dependent: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.h.shape[0]


def _interp_wrapped(row: np.ndarray, z_grid: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Evaluate a gridded profile at arbitrary phases using the +1 lift."""
    z = np.asarray(z, dtype=float)
    k = np.floor(z)
    zf = z - k
    nodes = np.concatenate([[z_grid[-1] - 1.0], z_grid, [z_grid[0] + 1.0]])
    vals = np.concatenate([[row[-1] - 1.0], row, [row[0] + 1.0]])
    return np.interp(zf, nodes, vals) + k


def hull_value(hull: HullFunction, j: int, z, which: str = "h"):
    """h_j(z) (or g_j) for any integer j via the type shift
    h_{j + n}(z) = h_j(z + p)."""
    shift, j0 = divmod(int(j) - 1, hull.n)
    row = (hull.h if which == "h" else hull.g)[j0]
    zz = np.asarray(z, dtype=float) + shift * float(hull.p)
    out = _interp_wrapped(row, hull.z_grid, zz)
    return float(out) if np.isscalar(z) else out


def extract_hull(log: TrajectoryLog, lam: float, p, *, Z: int = 64,
                 lambda_halfwidth: float = 0.0, width_threshold: float = 0.25,
                 check_converged: bool = True,
                 transient: Optional[float] = None) -> HullFunction:
    """Pool phase samples from snapshots, project monotone, resample on Z bins.

    Snapshots are windowed so that the phase smear tau_window * halfwidth of
    the lambda estimate stays below one grid cell.  Refuses logs that have
    not reached the traveling regime (bracket width above threshold) or that
    supply fewer than Z samples per particle type.
    """
    from .rotation import lambda_pm, LogTooShort

    p = Fraction(p)
    if not log.snapshots:
        raise HullExtractionError("hull extraction needs full snapshots; "
                                  "rerun with snapshot_stride > 0")
    model = log.final_state.model
    n = model.n
    if transient is None:
        transient = TRANSIENT_RELAXATION_MULTIPLE / model.alpha0
    cut = float(log.sample_times[0]) + transient
    snaps = [s for s in log.snapshots if s[0] >= cut]
    if not snaps:
        raise HullExtractionError("no snapshots past the relaxation transient")

    if check_converged:
        try:
            lo, hi = lambda_pm(log, max(log.span / 4.0, log.sample_dt))
        except LogTooShort as exc:
            raise HullExtractionError(f"log too short to assess convergence: {exc}")
        if hi - lo > width_threshold:
            raise HullExtractionError(
                f"dynamics not in the traveling regime: bracket width {hi - lo:.3g} "
                f"exceeds {width_threshold}")

    if not model.is_autonomous:
        raise HullExtractionError(
            "the stationary-hull path needs an autonomous force; use "
            "extract_hull_periodic for tau-periodic families")

    if lambda_halfwidth > 0.0:
        tau_window = (1.0 / Z) / lambda_halfwidth
        t_end = snaps[-1][0]
        windowed = [s for s in snaps if s[0] >= t_end - tau_window]
        if windowed:
            snaps = windowed

    z_grid = (np.arange(Z) + 0.5) / Z  # cell midpoints on [0, 1)
    h, g, iso_residual = _grid_snapshots(snaps, model, p, lam, Z, z_grid)
    return HullFunction(
        p=p, lam=float(lam), Z=Z, z_grid=z_grid, h=h, g=g,
        tau_dependent=False,
        diagnostics={"isotonic_residual": iso_residual,
                     "snapshots_used": len(snaps),
                     "lambda_halfwidth": lambda_halfwidth})


def _grid_snapshots(snaps, model, p: Fraction, lam: float, Z: int,
                    z_grid: np.ndarray):
    """Pool lifted phase samples from snapshots and grid them per type."""
    n = model.n
    q, r = p.numerator, p.denominator
    N = snaps[0][1].size
    idx = np.arange(N)
    types = idx % n
    y = idx // n                      # integer cell index of each particle
    qk = (q * y) % r
    z_rat = qk / r                    # exact rational part of p*y mod 1
    z_int = (q * y) // r

    per_type = {t: ([], [], []) for t in range(n)}
    for tau, U, Xi in snaps:
        s = lam * tau
        w = z_rat + s
        fl = np.floor(w)
        z = w - fl
        lift = z_int + fl
        hs = U - lift
        gs = Xi - lift
        for t in range(n):
            sel = types == t
            per_type[t][0].append(z[sel])
            per_type[t][1].append(hs[sel])
            per_type[t][2].append(gs[sel])

    h = np.empty((n, Z))
    g = np.empty((n, Z))
    iso_residual = 0.0
    for t in range(n):
        z = np.concatenate(per_type[t][0])
        hv = np.concatenate(per_type[t][1])
        gv = np.concatenate(per_type[t][2])
        if z.size < Z:
            need = math.ceil(Z / max(1, z.size // max(1, len(snaps))))
            raise HullExtractionError(
                f"type {t + 1} supplies {z.size} phase samples < Z = {Z}; "
                f"need about {need} snapshots")
        order = np.argsort(z, kind="stable")
        z, hv, gv = z[order], hv[order], gv[order]
        viol_h = float(np.maximum(hv[:-1] - hv[1:], 0.0).max()) if z.size > 1 else 0.0
        viol_g = float(np.maximum(gv[:-1] - gv[1:], 0.0).max()) if z.size > 1 else 0.0
        iso_residual = max(iso_residual, viol_h, viol_g)
        # collapse repeated phases (pinned orbits revisit few of them) before
        # the weighted monotone projection
        z_u, inv, counts = np.unique(z, return_inverse=True, return_counts=True)
        hv = np.bincount(inv, weights=hv) / counts
        gv = np.bincount(inv, weights=gv) / counts
        wts = counts.astype(float)
        hv = _isotonic_periodic(hv, wts)
        gv = _isotonic_periodic(gv, wts)
        h[t] = _resample(z_u, hv, wts, Z, z_grid)
        g[t] = _resample(z_u, gv, wts, Z, z_grid)
    return h, g, iso_residual


@dataclass
class TauPeriodicHull:
    """Hull pair of a tau-periodic family on a (tau, z) grid over [0,1)^2;
    extraction is stratified by frac(tau)."""

    p: Fraction
    lam: float
    Z: int
    n_tau: int
    z_grid: np.ndarray
    tau_grid: np.ndarray           # bin midpoints on [0, 1)
    h: np.ndarray                  # (n_tau, n, Z)
    g: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.h.shape[1]

    def slice(self, k: int) -> HullFunction:
        """The hull profile of one tau stratum (tau-periodicity makes every
        stratum a valid snapshot of the moving profile)."""
        return HullFunction(p=self.p, lam=self.lam, Z=self.Z, z_grid=self.z_grid,
                            h=self.h[k], g=self.g[k], tau_dependent=True,
                            diagnostics=dict(self.diagnostics, tau_bin=k))

    def value(self, tau: float, j: int, z: float, which: str = "h") -> float:
        """Nearest-stratum evaluation of h_j(tau, z) (or g_j)."""
        k = int(math.floor((tau % 1.0) * self.n_tau)) % self.n_tau
        return hull_value(self.slice(k), j, z, which)

    def reconstruct(self, tau: float, y: float, j: int) -> tuple[float, float]:
        z = float(self.p) * y + self.lam * tau
        return (self.value(tau, j, z, "h"), self.value(tau, j, z, "g"))


def extract_hull_periodic(log: TrajectoryLog, lam: float, p, *, Z: int = 32,
                          n_tau: int = 8,
                          transient: Optional[float] = None) -> TauPeriodicHull:
    """Stratify snapshots by frac(tau) and grid each stratum separately.

    The unit tau-periodicity of the force makes each stratum stationary; the
    log must sample incommensurately enough that every bin receives
    snapshots (refused otherwise, with the failing bin).
    """
    p = Fraction(p)
    if not log.snapshots:
        raise HullExtractionError("hull extraction needs full snapshots; "
                                  "rerun with snapshot_stride > 0")
    model = log.final_state.model
    if transient is None:
        transient = TRANSIENT_RELAXATION_MULTIPLE / model.alpha0
    cut = float(log.sample_times[0]) + transient
    snaps = [s for s in log.snapshots if s[0] >= cut]
    if not snaps:
        raise HullExtractionError("no snapshots past the relaxation transient")

    bins = [[] for _ in range(n_tau)]
    for s in snaps:
        k = int(math.floor((s[0] % 1.0) * n_tau)) % n_tau
        bins[k].append(s)
    z_grid = (np.arange(Z) + 0.5) / Z
    tau_grid = (np.arange(n_tau) + 0.5) / n_tau
    n = model.n
    h = np.empty((n_tau, n, Z))
    g = np.empty((n_tau, n, Z))
    worst_iso = 0.0
    for k, group in enumerate(bins):
        if not group:
            raise HullExtractionError(
                f"tau stratum {k}/{n_tau} received no snapshots; sample "
                f"faster or longer")
        h[k], g[k], iso = _grid_snapshots(group, model, p, lam, Z, z_grid)
        worst_iso = max(worst_iso, iso)
    return TauPeriodicHull(p=p, lam=float(lam), Z=Z, n_tau=n_tau,
                           z_grid=z_grid, tau_grid=tau_grid, h=h, g=g,
                           diagnostics={"isotonic_residual": worst_iso,
                                        "snapshots_used": len(snaps)})


def _resample(z: np.ndarray, v: np.ndarray, w: np.ndarray, Z: int,
              z_grid: np.ndarray) -> np.ndarray:
    """Interpolate grid midpoints through per-cell weighted mean anchors.

    Averaging both phase and value per cell suppresses sample jitter without
    losing the exactness of affine hulls (interpolation through points on a
    line stays on the line); monotone input keeps the anchors monotone.
    """
    cell = np.minimum((z * Z).astype(int), Z - 1)
    wsum = np.bincount(cell, weights=w, minlength=Z)
    filled = wsum > 0
    zc = np.bincount(cell, weights=w * z, minlength=Z)[filled] / wsum[filled]
    vc = np.bincount(cell, weights=w * v, minlength=Z)[filled] / wsum[filled]
    zz = np.concatenate([zc - 1.0, zc, zc + 1.0])
    vv = np.concatenate([vc - 1.0, vc, vc + 1.0])
    return np.interp(z_grid, zz, vv)


# ---------------------------------------------------------------------------
# Residuals and axioms
# ---------------------------------------------------------------------------

def _neighbor_window(hull: HullFunction, model: ForceModel) -> np.ndarray:
    """[h]_{j,m}(z) on the grid: values h_{j+s}(z) for s in -m..m via the
    type-shift convention.  Shape (n, Z, 2m+1)."""
    n, Z, m = hull.n, hull.Z, model.m
    out = np.empty((n, Z, 2 * m + 1))
    for t in range(n):
        j = t + 1
        for s in range(-m, m + 1):
            out[t, :, s + m] = hull_value(hull, j + s, hull.z_grid, "h")
    return out


def hull_residual(hull: HullFunction, model: ForceModel) -> dict:
    """Sup-norm defects of the stationary hull equations on the grid.

    r_h checks lambda D_z h = alpha0 (g - h); r_g checks
    lambda D_z g = 2 F_j([h]_{j,m}(z)) + alpha0 (h - g).  One-sided
    differences are upwinded by the sign of lambda.
    """
    if hull.tau_dependent:
        raise HullExtractionError("stationary residuals need an autonomous force")
    lam = hull.lam
    a0 = model.alpha0
    dz = 1.0 / hull.Z

    def d_z(rows: np.ndarray) -> np.ndarray:
        if lam >= 0:
            prev = np.roll(rows, 1, axis=1)
            prev[:, 0] -= 1.0       # h(z - dz) for z = 0 wraps to h(1 - dz) - 1
            return (rows - prev) / dz
        nxt = np.roll(rows, -1, axis=1)
        nxt[:, -1] += 1.0
        return (nxt - rows) / dz

    r_h = float(np.abs(lam * d_z(hull.h) - a0 * (hull.g - hull.h)).max())

    win = _neighbor_window(hull, model)
    n, Z = hull.n, hull.Z
    F = np.empty((n, Z))
    if isinstance(model.kind, ClassicalFK):
        k = model.kind
        for t in range(n):
            c = win[t, :, model.m]
            F[t] = k.theta[(t + 1) % n] * (win[t, :, model.m + 1] - c) \
                - k.theta[t] * (c - win[t, :, model.m - 1]) \
                + k.amplitude * np.sin(TWO_PI * c) + k.drive
    else:
        for t in range(n):
            if model.kind.batch:
                jj = np.full(Z, t + 1, dtype=int)
                F[t] = model.kind.fn(jj, 0.0, win[t])
            else:
                F[t] = [model.kind.fn(t + 1, 0.0, w) for w in win[t]]
    r_g = float(np.abs(lam * d_z(hull.g) - (2.0 * F + a0 * (hull.h - hull.g))).max())
    return {"r_h": r_h, "r_g": r_g}


@dataclass(frozen=True)
class HullAxiomReport:
    monotone_ok: bool
    monotone_worst: float          # most negative grid increment (0 if clean)
    monotone_witness: Optional[tuple]
    ordering_ok: bool
    ordering_worst: float
    displacement: float
    displacement_bound: float
    displacement_ok: bool
    wrap_ok: bool = True           # wrap and n-shift hold by storage convention

    @property
    def all_ok(self) -> bool:
        return self.monotone_ok and self.ordering_ok and self.displacement_ok

    def to_json_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("monotone_ok", "monotone_worst", "ordering_ok", "ordering_worst",
              "displacement", "displacement_bound", "displacement_ok", "wrap_ok")}
        d["monotone_witness"] = list(self.monotone_witness) if self.monotone_witness else None
        return d


def verify_hull_axioms(hull: HullFunction, ledger: ConstantsLedger,
                       tol: float = 1e-9) -> HullAxiomReport:
    """Check monotonicity (with the +1 wrap at the seam), ordering in j
    (including h_1(z + p) >= h_n(z) across the type period), and the
    displacement bound |h - id| <= 2 ceil(C3)."""
    worst = 0.0
    witness = None
    for name, rows in (("h", hull.h), ("g", hull.g)):
        lifted = np.concatenate([rows, rows[:, :1] + 1.0], axis=1)
        inc = np.diff(lifted, axis=1)
        i = np.unravel_index(np.argmin(inc), inc.shape)
        if inc[i] < worst:
            worst = float(inc[i])
            witness = (name, int(i[0]) + 1, int(i[1]))

    ord_worst = 0.0
    for rows in (hull.h, hull.g):
        for t in range(hull.n - 1):
            ord_worst = min(ord_worst, float((rows[t + 1] - rows[t]).min()))
    # seam ordering: h_{n+1}(z) = h_1(z + p) must dominate h_n(z)
    for which, rows in (("h", hull.h), ("g", hull.g)):
        top = hull_value(hull, hull.n + 1, hull.z_grid, which)
        ord_worst = min(ord_worst, float((top - rows[hull.n - 1]).min()))

    disp = max(float(np.abs(hull.h - hull.z_grid).max()),
               float(np.abs(hull.g - hull.z_grid).max()))
    bound = 2.0 * math.ceil(ledger.C3)
    return HullAxiomReport(
        monotone_ok=worst >= -tol, monotone_worst=worst, monotone_witness=witness,
        ordering_ok=ord_worst >= -tol, ordering_worst=ord_worst,
        displacement=disp, displacement_bound=bound,
        displacement_ok=disp <= bound + tol)


def reconstruct_traveling_wave(hull: HullFunction, tau: float, y: float,
                               j: int) -> tuple[float, float]:
    """(U, Xi) of the traveling solution: (h_j(p y + lambda tau), g_j(...))."""
    z = float(hull.p) * y + hull.lam * tau
    return (hull_value(hull, j, z, "h"), hull_value(hull, j, z, "g"))


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def hull_to_csv(hull: HullFunction) -> str:
    buf = io.StringIO()
    buf.write("j,z,h,g\n")
    for t in range(hull.n):
        for k in range(hull.Z):
            buf.write(f"{t + 1},{float(hull.z_grid[k])!r},{float(hull.h[t, k])!r},{float(hull.g[t, k])!r}\n")
    return buf.getvalue()


def hull_header_json(hull: HullFunction, residuals: Optional[dict] = None,
                     indent: int = 2) -> str:
    d = {"p": f"{hull.p.numerator}/{hull.p.denominator}", "lambda": hull.lam,
         "Z": hull.Z, "tau_dependent": hull.tau_dependent,
         "residuals": residuals or {}, "diagnostics": hull.diagnostics}
    return json.dumps(d, indent=indent, sort_keys=True)
