"""Sampling-based verdicts for behavioral specifications.

Every checker here drives the simulator from finitely many initial points
under finitely many disturbance draws over a finite horizon, so PASS means
"no counterexample found", never a proof.  Reports carry the sample counts
needed to judge the evidence.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import SetRegion, contains, dist_to_set, inflate
from .hybrid import as_vector
from .report import CheckReport, Counterexample, Verdict
from .simulate import BadInitialCondition, SimConfig, solve

log = logging.getLogger(__name__)


class EmptyEstimate(RuntimeError):
    """No grid point survived the invariance sweep; the core may still be
    nonempty below grid resolution."""


def _sample_region(region, n, rng, cap_factor=1000):
    bbox = region.bounding_box()
    if bbox is None:
        raise ValueError("initial-condition region needs a bounding box")
    lo, hi = bbox.lo, bbox.hi
    out = []
    for _ in range(cap_factor * n):
        p = rng.uniform(lo, hi)
        if contains(region, p, 0.0):
            out.append(p)
            if len(out) == n:
                return out
    raise ValueError("could not draw %d points from region" % n)


def _initial_points(x0, n, seed=0):
    if isinstance(x0, SetRegion):
        return _sample_region(x0, n, np.random.default_rng(seed))
    return [as_vector(p) for p in x0]


@dataclass
class RASSpec:
    """Reach-avoid-stay: avoid `unsafe`, settle into `target` by total time
    t_spec and remain there through the horizon."""

    x0: object
    unsafe: SetRegion
    target: SetRegion
    t_spec: float

    def __post_init__(self):
        if self.t_spec <= 0.0:
            raise ValueError("t_spec must be positive")
        self._warn_if_overlapping()

    def _warn_if_overlapping(self):
        bbox = self.target.bounding_box()
        if bbox is None:
            return
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = rng.uniform(bbox.lo, bbox.hi)
            if contains(self.target, p, 0.0) and contains(self.unsafe, p, 0.0):
                log.warning("target and unsafe sets overlap near %s", p)
                return

    def initial_points(self, n=16, seed=0):
        return _initial_points(self.x0, n, seed)


@dataclass
class StabSafeSpec:
    """Stability with safety: `attractor` uniformly pre-asymptotically
    stable with basin covering x0, all solutions avoiding `unsafe`."""

    x0: object
    unsafe: SetRegion
    attractor: SetRegion
    eps_levels: tuple = (0.1, 1.0)

    def __post_init__(self):
        if any(e <= 0.0 for e in self.eps_levels):
            raise ValueError("eps_levels must be positive")

    def initial_points(self, n=16, seed=0):
        return _initial_points(self.x0, n, seed)


def _penetration(region, x):
    """How deep x sits inside region; 0 when the depth is not computable."""
    from .geometry import Complement

    try:
        return dist_to_set(x, Complement(region))
    except Exception:
        return 0.0


def _solve_all(system, points, config, n_dist=1, seed=0):
    """Arcs from each point under n_dist disturbance draws; errors logged."""
    runs = []
    skipped = 0
    for i, p in enumerate(points):
        for k in range(n_dist):
            cfg = SimConfig(
                h=config.h,
                T_max=config.T_max,
                J_max=config.J_max,
                event_tol=config.event_tol,
                priority=config.priority,
                disturbance=config.disturbance.reseed([seed, i, k]),
                t_min=config.t_min,
            )
            try:
                runs.append((p, solve(system, p, cfg)))
            except BadInitialCondition as err:
                skipped += 1
                log.warning("no solution from %s: %s", p, err)
    return runs, skipped


def check_forward_invariance(system, K, n_init, config, seed=0):
    """Do all sampled solutions from K stay in inflate(K, event_tol)?"""
    if not isinstance(K, SetRegion):
        raise ValueError("K must be a SetRegion")
    points = _initial_points(K, n_init, seed)
    K_slack = inflate(K, config.event_tol)
    runs, skipped = _solve_all(system, points, config, seed=seed)
    ces = []
    n_samples = 0
    worst = 0.0
    for p, rep in runs:
        for j, t, x in rep.arc.samples():
            n_samples += 1
            if not contains(K_slack, x, 0.0):
                margin = dist_to_set(x, K) - config.event_tol
                worst = max(worst, margin)
                ces.append(
                    Counterexample("invariance", x, margin=margin, witness=(j, t))
                )
                break  # first escaping sample per arc
    verdict = Verdict.PASS if not ces else Verdict.FAIL
    if not runs:
        verdict = Verdict.INCONCLUSIVE
    return CheckReport(
        verdict=verdict,
        counterexamples=ces,
        stats={
            "arcs": len(runs),
            "samples": n_samples,
            "skipped_initial_points": skipped,
            "worst_margin": worst,
        },
    )


def _settle_total_time(arc, slack_region):
    """Least total time T with every later sample inside the slack region;
    None when the arc never settles (its last sample is outside)."""
    last_exit = None
    entry_after_exit = 0.0
    for j, t, x in arc.samples():
        if not contains(slack_region, x, 0.0):
            last_exit = (j, t, x)
            entry_after_exit = None
        elif entry_after_exit is None:
            entry_after_exit = t + j
    if last_exit is not None and entry_after_exit is None:
        return None, last_exit
    return entry_after_exit, None


def check_ras(system, spec: RASSpec, n_init, n_dist, config, seed=0):
    """Sampled reach-avoid-stay verdict.

    Safety: no stored sample in the unsafe set.  Reach-and-stay: each arc's
    last exit from inflate(target, event_tol) happens before t_spec in total
    time; the report carries the worst settle time over arcs.
    """
    points = spec.initial_points(n=n_init, seed=seed)
    target_slack = inflate(spec.target, config.event_tol)
    runs, skipped = _solve_all(system, points, config, n_dist=n_dist, seed=seed)
    ces = []
    worst_settle = 0.0
    n_samples = 0
    short_arcs = 0
    for p, rep in runs:
        for j, t, x in rep.arc.samples():
            n_samples += 1
            if contains(spec.unsafe, x, 0.0):
                ces.append(
                    Counterexample(
                        "safety", x, margin=_penetration(spec.unsafe, x),
                        witness=(j, t),
                    )
                )
                break
        settle, exit_sample = _settle_total_time(rep.arc, target_slack)
        if settle is None:
            j, t, x = exit_sample
            ces.append(
                Counterexample(
                    "reach-stay", x,
                    margin=dist_to_set(x, spec.target), witness=(j, t),
                )
            )
        else:
            worst_settle = max(worst_settle, settle)
            if settle > spec.t_spec:
                ces.append(
                    Counterexample(
                        "settle-deadline", p, margin=settle - spec.t_spec,
                    )
                )
            if rep.arc.max_total_time() < spec.t_spec:
                short_arcs += 1

    verdict = Verdict.PASS if not ces else Verdict.FAIL
    if not runs or (not ces and short_arcs == len(runs)):
        # nothing violated but no arc even reached the deadline
        verdict = Verdict.INCONCLUSIVE
    return CheckReport(
        verdict=verdict,
        counterexamples=ces,
        stats={
            "arcs": len(runs),
            "samples": n_samples,
            "skipped_initial_points": skipped,
            "settle_time": worst_settle,
            "t_spec": spec.t_spec,
            "short_arcs": short_arcs,
        },
    )


def check_stability_safety(system, spec: StabSafeSpec, n_init, config,
                           seed=0, bisect_iters=8):
    """Empirical UpAS-with-safety verdict.

    For each eps level, bisection over initial offsets finds the largest
    delta_eps <= eps such that all sampled arcs from inflate(A, delta_eps)
    keep |x|_A < eps; FAIL when even the smallest tested offset escapes.
    Attraction is recorded as settle times of arcs from x0 into each eps
    level; safety flags any stored sample inside the unsafe set.
    """
    A = spec.attractor
    ces = []
    delta_found = {}
    n_arcs = 0

    def all_stay_below(delta, eps):
        nonlocal n_arcs
        shell = inflate(A, delta)
        try:
            points = _sample_region(shell, n_init, np.random.default_rng(seed))
        except ValueError:
            return None
        runs, _ = _solve_all(system, points, config, seed=seed)
        n_arcs += len(runs)
        for _, rep in runs:
            for j, t, x in rep.arc.samples():
                if dist_to_set(x, A) >= eps:
                    return (j, t, x)
        return False

    for eps in spec.eps_levels:
        lo, hi = 0.0, float(eps)
        escape = all_stay_below(hi, eps)
        if escape is None:
            # shell around A has no finite bounding box to draw from; the
            # offset sweep proves nothing, so record the skip instead
            delta_found[eps] = None
            continue
        if escape is False:
            delta_found[eps] = hi
            continue
        floor = hi / 2.0**bisect_iters
        escape = all_stay_below(floor, eps)
        if escape:
            j, t, x = escape
            ces.append(
                Counterexample(
                    "stability", x,
                    margin=dist_to_set(x, A) - eps, witness=(j, t),
                )
            )
            delta_found[eps] = 0.0
            continue
        lo = floor
        for _ in range(bisect_iters):
            mid = 0.5 * (lo + hi)
            if all_stay_below(mid, eps) is False:
                lo = mid
            else:
                hi = mid
        delta_found[eps] = lo

    points = spec.initial_points(n=n_init, seed=seed)
    runs, skipped = _solve_all(system, points, config, seed=seed)
    n_arcs += len(runs)
    settle_times = {float(eps): 0.0 for eps in spec.eps_levels}
    for p, rep in runs:
        for j, t, x in rep.arc.samples():
            if contains(spec.unsafe, x, 0.0):
                ces.append(
                    Counterexample(
                        "safety", x, margin=_penetration(spec.unsafe, x),
                        witness=(j, t),
                    )
                )
                break
        for eps in spec.eps_levels:
            shell = inflate(A, float(eps))
            settle, exit_sample = _settle_total_time(rep.arc, shell)
            if settle is None:
                j, t, x = exit_sample
                ces.append(
                    Counterexample(
                        "attraction", x,
                        margin=dist_to_set(x, A) - eps, witness=(j, t),
                    )
                )
            else:
                settle_times[float(eps)] = max(settle_times[float(eps)], settle)

    verdict = Verdict.PASS if not ces else Verdict.FAIL
    if n_arcs == 0:
        verdict = Verdict.INCONCLUSIVE
    return CheckReport(
        verdict=verdict,
        counterexamples=ces,
        stats={
            "arcs": n_arcs,
            "skipped_initial_points": skipped,
            "delta_per_eps": {float(k): v for k, v in delta_found.items()},
            "settle_times": settle_times,
            "note": "uniform-T over all solutions certified only up to the "
                    "realized maximum settle time of the sampled arcs",
        },
    )


def estimate_invariant_core(system, I, grid_n, n_dist, config, seed=0):
    """Grid points of I from which every sampled arc stays in I.

    Returns the surviving points (a sampled inner estimate of the maximal
    invariant subset of I).  Points admitting no solution at all survive
    vacuously; when only such points survive the estimate is logged as
    inconclusive.  Raises EmptyEstimate when nothing survives.
    """
    bbox = I.bounding_box()
    if bbox is None:
        raise ValueError("I needs a bounding box")
    lo, hi = bbox.lo, bbox.hi
    if np.isscalar(grid_n) or isinstance(grid_n, int):
        grid_n = (int(grid_n),) * lo.size
    axes = [np.linspace(lo[k], hi[k], grid_n[k]) for k in range(lo.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid_pts = np.stack([m.ravel() for m in mesh], axis=-1)

    I_slack = inflate(I, config.event_tol)
    survivors = []
    vacuous = 0
    for idx, p in enumerate(grid_pts):
        if not contains(I, p, 0.0):
            continue
        ok = True
        solved = 0
        for k in range(n_dist):
            cfg = SimConfig(
                h=config.h,
                T_max=config.T_max,
                J_max=config.J_max,
                event_tol=config.event_tol,
                priority=config.priority,
                disturbance=config.disturbance.reseed([seed, idx, k]),
                t_min=config.t_min,
            )
            try:
                rep = solve(system, p, cfg)
            except BadInitialCondition:
                continue
            solved += 1
            if any(
                not contains(I_slack, x, 0.0) for _, _, x in rep.arc.samples()
            ):
                ok = False
                break
        if ok:
            survivors.append(np.array(p))
            if solved == 0:
                vacuous += 1

    if not survivors:
        raise EmptyEstimate(
            "no grid point of I survived; refine the grid before concluding"
        )
    if vacuous == len(survivors):
        log.warning(
            "invariant-core estimate inconclusive: all %d survivors admit "
            "no solution", vacuous,
        )
    return survivors
