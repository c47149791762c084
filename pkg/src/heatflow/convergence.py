"""Post-processing of flow trajectories: evolution identity, decay rates, spectral gap.

Every routine here only reads a :class:`~heatflow.flow.FlowTrajectory`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLimit, EmptyWindow, InsufficientSnapshots, NotConverged
from .jacobi import assemble_system, lowest_eigs, strong_quadratic
from .maps import dof_mask, tension_l2, tension_values


# evolution identity ----------------------------------------------------------

@dataclass
class IdentityCheck:
    """Per-sample terms of ``1/2 d/dt ||tau||^2 = -<K tau, tau>``.

    ``residual[k] = |lhs[k] - rhs[k]| / max(||tau_k||^2, floor)`` for interior
    samples (the first and last sample have no central difference).
    """

    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    tension_sq: np.ndarray
    residual: np.ndarray
    floor: float

    def max_residual(self, t_min=None):
        mask = np.ones(len(self.times), bool) if t_min is None else self.times >= t_min
        return float(np.max(self.residual[mask])) if np.any(mask) else float("nan")

    def rows(self):
        return [(float(t), float(a), float(b), float(r))
                for t, a, b, r in zip(self.times, self.lhs, self.rhs, self.residual)]


def _snapshot_terms(traj, k):
    f = traj.snapshot(k)
    tau = tension_values(f.grid, f.target, f.values, f.winding)
    return tension_l2(f.grid, f.target, f.values, tau) ** 2, strong_quadratic(f, tau)


def check_evolution_identity(traj, floor=None, floor_rel=1e-6) -> IdentityCheck:
    """Compare the central time difference of 1/2 ||tau||^2 with -<K tau, tau>_M.

    Parameters
    ----------
    traj : FlowTrajectory
        Needs at least three stored samples.
    floor : float, optional
        Lower bound of the normalisation ``||tau||^2``.  Defaults to
        ``(floor_rel * ||tau_0||)^2``; below that level the tension itself is
        dominated by rounding (it is a second difference quotient of the map).
    """
    if len(traj) < 3:
        raise InsufficientSnapshots(f"need at least 3 samples with maps, got {len(traj)}")
    terms = np.array([_snapshot_terms(traj, k) for k in range(len(traj))])
    sq, quad = terms[:, 0], terms[:, 1]
    if floor is None:
        floor = (floor_rel * np.sqrt(sq[0])) ** 2
    floor = max(float(floor), np.finfo(float).tiny)
    t = traj.times
    # three-point derivative on a possibly non-uniform final interval
    lhs = 0.5 * np.gradient(sq, t)[1:-1]
    rhs = -quad[1:-1]
    res = np.abs(lhs - rhs) / np.maximum(sq[1:-1], floor)
    return IdentityCheck(t[1:-1], lhs, rhs, sq[1:-1], res, floor)


def energy_dissipation_residuals(traj, floor_rel=1e-6):
    """``|(E_{k+1} - E_{k-1}) / (t_{k+1} - t_{k-1}) + ||tau_k||^2| / ||tau_k||^2``."""
    t, e, n = traj.times, traj.energy, traj.tension_l2
    if len(t) < 3:
        raise InsufficientSnapshots("need at least 3 samples")
    slope = (e[2:] - e[:-2]) / (t[2:] - t[:-2])
    sq = n[1:-1] ** 2
    return np.abs(slope + sq) / np.maximum(sq, (floor_rel * n[0]) ** 2)


def energy_monotone(traj, rel_tol=1e-12):
    """True when no sample raises the energy by more than ``rel_tol * E(t_0)``."""
    if len(traj) < 2:
        return True
    return bool(np.all(np.diff(traj.energy) <= rel_tol * abs(traj.energy[0])))


# rate fitting ----------------------------------------------------------------

@dataclass
class RateFit:
    rate: float
    intercept: float
    residual: float
    window: tuple
    samples: int
    shift: int = 0
    admissible: bool = True


def _line(t, logy):
    a = np.vstack([t, np.ones_like(t)]).T
    (slope, intercept), *_ = np.linalg.lstsq(a, logy, rcond=None)
    resid = logy - (slope * t + intercept)
    return float(slope), float(intercept), float(np.sqrt(np.mean(resid**2)))


def fit_decay_rate(t, y, lower=1e-8, upper=1e-3, min_samples=20, window=None,
                   linearity_tol=None, min_decades=2.0, y0=None) -> RateFit:
    """Least-squares fit of ``log y = log a - b t``; returns ``b`` as the rate.

    Window policy
    -------------
    * ``window=(t_a, t_b)`` fits all samples with ``t_a <= t <= t_b``.
    * Otherwise the band ``lower * y0 <= y <= upper * y0`` is used.  With
      ``linearity_tol`` set, the band is slid down by half decades until the
      rates fitted on its two halves agree within ``linearity_tol`` (the
      sampled decay is a single exponential there); the earliest such band
      wins.  A band must hold ``min_samples`` samples and span
      ``min_decades``.  If no band qualifies the unshifted band is used and
      the fit is marked not admissible.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        mask = (t >= window[0]) & (t <= window[1])
        if mask.sum() < 2 or np.any(y[mask] <= 0):
            raise EmptyWindow(f"window {window} holds {int(mask.sum())} positive samples")
        slope, icpt, res = _line(t[mask], np.log(y[mask]))
        return RateFit(-slope, icpt, res, (float(t[mask][0]), float(t[mask][-1])), int(mask.sum()))

    y0 = float(y[0]) if y0 is None else float(y0)
    if not y0 > 0:
        raise EmptyWindow("reference value y0 must be positive")
    positive = y > 0
    logy = np.where(positive, np.log(np.where(positive, y, 1.0)), -np.inf)
    log_lo, log_hi = np.log(lower * y0), np.log(upper * y0)

    def band(shift):
        lo = log_lo - 0.5 * shift * np.log(10)
        hi = log_hi - 0.5 * shift * np.log(10)
        return positive & (logy >= lo) & (logy <= hi)

    def candidate(shift):
        mask = band(shift)
        if mask.sum() < min_samples:
            return None
        span = (logy[mask].max() - logy[mask].min()) / np.log(10)
        if span < min_decades:
            return None
        slope, icpt, res = _line(t[mask], logy[mask])
        return mask, slope, icpt, res

    first = candidate(0)
    if linearity_tol is not None:
        shift = 0
        while np.any(band(shift)):
            got = candidate(shift)
            if got is not None:
                mask, slope, icpt, res = got
                idx = np.flatnonzero(mask)
                half = len(idx) // 2
                if half >= 2:
                    s1 = _line(t[idx[:half]], logy[idx[:half]])[0]
                    s2 = _line(t[idx[half:]], logy[idx[half:]])[0]
                    if abs(s1 - s2) <= linearity_tol * max(abs(slope), 1e-300):
                        return RateFit(-slope, icpt, res, (float(t[idx[0]]), float(t[idx[-1]])),
                                       int(mask.sum()), shift, True)
            shift += 1
    if first is None:
        raise EmptyWindow(
            f"fewer than {min_samples} samples (or < {min_decades} decades) in [{lower:g}, {upper:g}] * y0")
    mask, slope, icpt, res = first
    idx = np.flatnonzero(mask)
    return RateFit(-slope, icpt, res, (float(t[idx[0]]), float(t[idx[-1]])), int(mask.sum()), 0,
                   linearity_tol is None)


# spectral gap along the flow -------------------------------------------------

@dataclass
class GapTrack:
    times: np.ndarray
    lambda1: np.ndarray
    tension_l2: np.ndarray
    tail: np.ndarray
    lambda_final: float

    @property
    def tail_min(self):
        return float(np.min(self.lambda1[self.tail])) if np.any(self.tail) else float("nan")

    def tail_ratio(self):
        return self.tail_min / self.lambda_final


def gap_track(traj, stride=1, k=1, tail_rel=1e-3, seed=0) -> GapTrack:
    """lambda_1 of the Jacobi system at every ``stride``-th sample and at the last.

    The tail is the set of tracked samples with ``||tau|| <= tail_rel * ||tau_0||``.
    """
    if len(traj) == 0:
        raise InsufficientSnapshots("trajectory holds no samples")
    idx = list(range(0, len(traj), max(int(stride), 1)))
    if idx[-1] != len(traj) - 1:
        idx.append(len(traj) - 1)
    lam = np.array([lowest_eigs(assemble_system(traj.snapshot(i)), k=k, seed=seed).lambda1 for i in idx])
    norms = traj.tension_l2[idx]
    tail = norms <= tail_rel * traj.tension_l2[0]
    return GapTrack(traj.times[idx], lam, norms, tail, float(lam[-1]))


# energy gap --------------------------------------------------------------------

def energy_gap(traj, system=None):
    """``E(f_t) - E(f_final)`` for every sample.

    Plain differences lose all digits once the gap falls below rounding of
    E itself.  There the second-order expansion about the final map is used:
    ``-<tau_final, d>_M + 1/2 d^T Q d`` with ``d = log_{f_final} f_t``, whose
    own error is third order in ``d``.
    """
    final = traj.final_map()
    system = assemble_system(final) if system is None else system
    e_final = traj.energy[-1]
    direct = traj.energy - e_final
    target, grid = final.target, final.grid
    mask = dof_mask(grid)
    tau_final = tension_values(grid, target, final.values, final.winding)
    mtau = (grid.weights()[..., None] * target.conformal_factor(final.values)[..., None] * tau_final)[mask].ravel()
    out = direct.copy()
    cut = 1e-8 * max(abs(e_final), np.finfo(float).tiny)
    for k, value in enumerate(direct):
        if abs(value) >= cut:
            continue
        d = target.log_map(final.values, traj.maps[k])[mask].ravel()
        out[k] = -mtau @ d + 0.5 * d @ (system.weak @ d)
    return out


# rate report -------------------------------------------------------------------

@dataclass
class RateReport:
    """Observed decay rates against the guaranteed bound ``b = lambda_1 / 2``."""

    b_fit: float
    fit_window: tuple
    fit_residual: float
    fit_admissible: bool
    b_fit_default_window: float | None
    lambda1_final: float
    b_paper: float
    energy_rate: float | None
    energy_window: tuple | None
    degenerate: bool
    kernel_dim: int
    lambda_first_nonzero: float | None
    tol_rate: float
    verdict: str
    sharp_rel_error: float
    energy_rel_error: float | None
    envelope_ok: bool | None
    energy_monotone: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = {}
        for key, value in self.__dict__.items():
            if isinstance(value, tuple):
                value = [float(v) for v in value]
            elif isinstance(value, (np.floating, np.integer)):
                value = value.item()
            out[key] = value
        return out

    def summary(self):
        lines = [
            f"verdict            {self.verdict}",
            f"b_fit              {self.b_fit!r}  window {self.fit_window}",
            f"lambda1_final      {self.lambda1_final!r}",
            f"b_paper            {self.b_paper!r}",
            f"energy_rate        {self.energy_rate!r}",
            f"kernel_dim         {self.kernel_dim}",
            f"energy_monotone    {self.energy_monotone}",
        ]
        if self.degenerate and self.lambda_first_nonzero is not None:
            lines.append(f"first nonzero lam  {self.lambda_first_nonzero!r}")
        lines.append(f"rate rel. error    {self.sharp_rel_error!r}")
        return "\n".join(lines)


def build_rate_report(traj, spectrum, system=None, tol_rate=None, linearity_tol=0.05,
                      min_samples=20, strict_degenerate=False) -> RateReport:
    """Fit decay rates of ``||tau||`` and of the energy gap and compare with lambda_1.

    Verdict ``PASS`` needs ``b_fit >= b_paper - tol_rate`` and
    ``energy_rate >= 2 b_paper - tol_rate``; ``DEGENERATE`` (informational)
    is returned when the final map has Jacobi kernel.
    """
    if not traj.converged:
        raise NotConverged(
            f"trajectory stopped at ||tau||={traj.tension_l2[-1]:.3e} before the stop tolerance")
    if strict_degenerate and spectrum.degenerate:
        raise DegenerateLimit(f"final map has {spectrum.kernel_dim}-dimensional Jacobi kernel")
    lam1 = spectrum.lambda1
    b_paper = 0.5 * lam1
    nonzero = spectrum.values[spectrum.values >= spectrum.kernel_threshold]
    first_nonzero = float(nonzero[0]) if len(nonzero) else None
    ref = first_nonzero if spectrum.degenerate else lam1
    tol_rate = 0.01 * abs(b_paper) if tol_rate is None else float(tol_rate)

    fit = fit_decay_rate(traj.times, traj.tension_l2, min_samples=min_samples,
                         linearity_tol=linearity_tol)
    try:
        plain = fit_decay_rate(traj.times, traj.tension_l2, min_samples=min_samples).rate
    except EmptyWindow:
        plain = None

    # the energy gap is fitted over the same time window as the tension, so
    # that both rates describe the same stretch of the trajectory
    gap = energy_gap(traj, system)[:-1]
    times = traj.times[:-1]
    keep = gap > 0
    try:
        efit = fit_decay_rate(times[keep], gap[keep], window=fit.window)
        energy_rate, energy_window = efit.rate, efit.window
    except EmptyWindow:
        energy_rate, energy_window = None, None

    envelope = None
    if not spectrum.degenerate:
        ta, tb = fit.window
        m = (traj.times >= ta) & (traj.times <= tb)
        bound = (1 + 1e-2) * traj.tension_l2[m][0] * np.exp(-b_paper * (traj.times[m] - ta))
        envelope = bool(np.all(traj.tension_l2[m] <= bound))

    if spectrum.degenerate:
        verdict = "DEGENERATE"
    else:
        ok = fit.rate >= b_paper - tol_rate and energy_rate is not None and energy_rate >= 2 * b_paper - tol_rate
        verdict = "PASS" if ok else "FAIL"

    return RateReport(
        b_fit=float(fit.rate), fit_window=fit.window, fit_residual=fit.residual,
        fit_admissible=fit.admissible, b_fit_default_window=plain,
        lambda1_final=float(lam1), b_paper=float(b_paper),
        energy_rate=energy_rate, energy_window=energy_window,
        degenerate=bool(spectrum.degenerate), kernel_dim=spectrum.kernel_dim,
        lambda_first_nonzero=first_nonzero, tol_rate=tol_rate, verdict=verdict,
        sharp_rel_error=float(abs(fit.rate - ref) / ref) if ref else float("nan"),
        energy_rel_error=(float(abs(energy_rate - 2 * fit.rate) / (2 * fit.rate))
                          if energy_rate is not None else None),
        envelope_ok=envelope, energy_monotone=energy_monotone(traj),
    )
