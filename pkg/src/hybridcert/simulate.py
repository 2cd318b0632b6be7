"""Fixed-step hybrid simulator with bisection event refinement.

Flows are integrated with classical RK4; set-membership events (jump-set
entry, flow-set exit, bounds exit) are located by bisecting the step until
the state-space bracket width drops below ``event_tol``.  Disturbances are
held constant across each accepted step, which keeps perturbed runs
reproducible from a single seed.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import contains
from .hybrid import (
    Disturbance,
    HybridArc,
    HybridSystem,
    Termination,
    as_vector,
)
from .report import CheckReport, Counterexample, Verdict

log = logging.getLogger(__name__)

_MAX_BISECT = 200


class BadInitialCondition(ValueError):
    """Initial state outside bounds, or outside both flow and jump sets."""


class HorizonTooShort(ValueError):
    """Arc does not reach the requested total time."""


class Priority(Enum):
    JUMP_FIRST = "JumpFirst"
    FLOW_FIRST = "FlowFirst"


@dataclass
class SimConfig:
    """Solver knobs.

    t_min is the smallest positive gap allowed between consecutive jumps;
    a shorter (but still positive) gap triggers the system's zeno_map when
    present and a ZenoAccumulation stop otherwise.  Zero-gap jump chains
    are left alone so purely discrete systems run normally.
    """

    h: float = 1e-3
    T_max: float = 10.0
    J_max: int = 1000
    event_tol: float = 1e-9
    priority: Priority = Priority.JUMP_FIRST
    disturbance: Disturbance = None
    t_min: float = 1e-6

    def __post_init__(self):
        if self.h <= 0.0 or self.T_max <= 0.0:
            raise ValueError("h and T_max must be positive")
        if self.J_max < 0:
            raise ValueError("J_max must be nonnegative")
        if not 0.0 < self.event_tol < self.h:
            raise ValueError("event_tol must lie in (0, h)")
        if self.disturbance is None:
            self.disturbance = Disturbance.none()


@dataclass
class SolveReport:
    arc: HybridArc
    flow_time: float
    jump_count: int
    zeno_snapped: bool = False

    @property
    def termination(self):
        return self.arc.termination


def _rk4_step(f, x, dt, d):
    k1 = f(x) + d
    k2 = f(x + 0.5 * dt * k1) + d
    k3 = f(x + 0.5 * dt * k2) + d
    k4 = f(x + dt * k3) + d
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _bisect_event(f, x0, dt, d, pred, x_full, event_tol):
    """Shrink [0, dt] around the first parameter where pred flips true.

    pred(x0) must be False and pred(x_full) True.  Returns
    (theta_in, x_in, theta_out, x_out) with |x_out - x_in| <= event_tol;
    both states come from a single RK4 substep off the same start point.
    """
    lo, x_lo = 0.0, x0
    hi, x_hi = dt, x_full
    for _ in range(_MAX_BISECT):
        if np.linalg.norm(x_hi - x_lo) <= event_tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        x_mid = _rk4_step(f, x0, mid, d)
        if pred(x_mid):
            hi, x_hi = mid, x_mid
        else:
            lo, x_lo = mid, x_mid
    return lo, x_lo, hi, x_hi


class _ArcBuilder:
    """Accumulates phases sample by sample, tolerating zero-length phases."""

    def __init__(self, t0, x0):
        self.phases = []
        self.times = [t0]
        self.states = [np.array(x0, dtype=float)]

    def append(self, t, x):
        if t <= self.times[-1]:
            # Event refinement can land within float resolution of the last
            # accepted sample; fold it in rather than storing a dead segment.
            self.states[-1] = np.array(x, dtype=float)
        else:
            self.times.append(t)
            self.states.append(np.array(x, dtype=float))

    def last(self):
        return self.times[-1], self.states[-1]

    def new_phase(self, t, x_plus):
        self.phases.append((np.array(self.times), np.vstack(self.states)))
        self.times = [t]
        self.states = [np.array(x_plus, dtype=float)]

    def build(self, termination):
        self.phases.append((np.array(self.times), np.vstack(self.states)))
        return HybridArc(self.phases, termination=termination)


def solve(system: HybridSystem, x0, config: SimConfig) -> SolveReport:
    """Integrate one maximal solution from x0 under the stop rules in config."""
    x0 = as_vector(x0)
    if x0.size != system.dim:
        raise BadInitialCondition(
            "x0 has dimension %d, system expects %d" % (x0.size, system.dim)
        )
    if not np.all(np.isfinite(x0)):
        raise BadInitialCondition("x0 is not finite")
    if not contains(system.bounds, x0, 0.0):
        raise BadInitialCondition("x0 outside simulation bounds")
    tol = config.event_tol
    if not (contains(system.flow_set, x0, tol) or contains(system.jump_set, x0, 0.0)):
        raise BadInitialCondition("x0 outside both flow and jump sets")

    draw = config.disturbance.start(system.dim, system.delta)
    builder = _ArcBuilder(0.0, x0)
    t, j, x = 0.0, 0, x0.copy()
    jump_count = 0
    zeno_snapped = False
    last_jump_t = None
    termination = None

    def do_jump():
        nonlocal t, j, x, jump_count, zeno_snapped, last_jump_t, termination
        if jump_count >= config.J_max:
            termination = Termination.HORIZON_REACHED
            return False
        gap = None if last_jump_t is None else t - last_jump_t
        if gap is not None and 0.0 < gap < config.t_min:
            if system.zeno_map is None:
                termination = Termination.ZENO_ACCUMULATION
                return False
            x_plus = as_vector(system.zeno_map(x))
            zeno_snapped = True
        else:
            candidates = system.jump_candidates(x)
            x_plus = as_vector(candidates[0]) + draw(t, j)
        builder.new_phase(t, x_plus)
        j += 1
        jump_count += 1
        last_jump_t = t
        x = x_plus
        return True

    while termination is None:
        if t >= config.T_max:
            termination = Termination.HORIZON_REACHED
            break
        in_D = contains(system.jump_set, x, 0.0)
        in_C = contains(system.flow_set, x, tol)
        if in_D and (config.priority == Priority.JUMP_FIRST or not in_C):
            if not do_jump():
                break
            continue
        if not in_C:
            termination = Termination.LEFT_FLOW_AND_JUMP_SETS
            break

        dt = min(config.h, config.T_max - t)
        d = draw(t, j)
        x_prop = _rk4_step(system.flow, x, dt, d)

        if config.priority == Priority.JUMP_FIRST and contains(
            system.jump_set, x_prop, 0.0
        ):
            pred = lambda y: contains(system.jump_set, y, 0.0)
            _, _, th, x_star = _bisect_event(
                system.flow, x, dt, d, pred, x_prop, tol
            )
            t += th
            builder.append(t, x_star)
            x = x_star
            continue  # loop top performs the jump

        if not contains(system.flow_set, x_prop, tol):
            pred = lambda y: not contains(system.flow_set, y, tol)
            th_in, x_in, th_out, x_out = _bisect_event(
                system.flow, x, dt, d, pred, x_prop, tol
            )
            if contains(system.jump_set, x_in, 0.0):
                t += th_in
                builder.append(t, x_in)
                x = x_in
            elif contains(system.jump_set, x_out, 0.0):
                t += th_out
                builder.append(t, x_out)
                x = x_out
            else:
                t += th_in
                builder.append(t, x_in)
                x = x_in
                termination = Termination.LEFT_FLOW_AND_JUMP_SETS
            continue

        if not contains(system.bounds, x_prop, 0.0):
            pred = lambda y: not contains(system.bounds, y, 0.0)
            _, _, th, x_out = _bisect_event(
                system.flow, x, dt, d, pred, x_prop, tol
            )
            t += th
            builder.append(t, x_out)
            termination = Termination.ESCAPED_BOUNDS
            continue

        t += dt
        x = x_prop
        builder.append(t, x)

    arc = builder.build(termination)
    flow_time = sum(times[-1] - times[0] for times, _ in arc.phases)
    return SolveReport(
        arc=arc, flow_time=flow_time, jump_count=jump_count, zeno_snapped=zeno_snapped
    )


def solve_batch(system, initial_states, config, base_seed=0):
    """Solve from each initial state; entries are SolveReport or the error.

    Random disturbances are re-seeded per index so results are independent
    of batch order and reproducible run to run.
    """
    out = []
    for i, x0 in enumerate(initial_states):
        cfg = SimConfig(
            h=config.h,
            T_max=config.T_max,
            J_max=config.J_max,
            event_tol=config.event_tol,
            priority=config.priority,
            disturbance=config.disturbance.reseed([base_seed, i]),
            t_min=config.t_min,
        )
        try:
            out.append(solve(system, x0, cfg))
        except BadInitialCondition as err:
            log.warning("batch item %d rejected: %s", i, err)
            out.append(err)
    return out


def reachable_sample(system, X0, T, n_init, n_dist, config, seed=0):
    """Under-approximate the reach set up to total time T by a point cloud.

    Initial points are rejection-sampled from X0's bounding box; each is
    driven under n_dist disturbance realizations and every stored sample
    with t + j <= T is collected.
    """
    bbox = X0.bounding_box()
    if bbox is None:
        raise ValueError("X0 must expose a finite bounding box for sampling")
    lo, hi = bbox.lo, bbox.hi
    rng = np.random.default_rng(seed)
    points = []
    attempts = 0
    cap = max(10000, 1000 * n_init)
    while len(points) < n_init and attempts < cap:
        p = rng.uniform(lo, hi)
        attempts += 1
        if contains(X0, p, 0.0):
            points.append(p)
    if len(points) < n_init:
        raise ValueError("could not draw %d points from X0" % n_init)

    cloud = [np.array(p, dtype=float) for p in points]
    if T <= 0.0:
        return cloud

    cloud = []
    horizon = min(config.T_max, T + 1.0)
    for i, p in enumerate(points):
        for k in range(n_dist):
            cfg = SimConfig(
                h=config.h,
                T_max=horizon,
                J_max=config.J_max,
                event_tol=config.event_tol,
                priority=config.priority,
                disturbance=config.disturbance.reseed([seed, i, k]),
                t_min=config.t_min,
            )
            try:
                rep = solve(system, p, cfg)
            except BadInitialCondition:
                continue
            for jj, tt, xx in rep.arc.samples():
                if tt + jj <= T:
                    cloud.append(xx)
    return cloud


def _point_segment_dist(p, a, b):
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    s = float(np.dot(p - a, ab)) / denom
    s = min(1.0, max(0.0, s))
    return float(np.linalg.norm(p - (a + s * ab)))


def _window_dist(x, times, states, s0, s1):
    """Min distance from x to the polyline restricted to times in [s0, s1]."""
    t_lo, t_hi = times[0], times[-1]
    s0 = max(s0, t_lo)
    s1 = min(s1, t_hi)
    if s0 > s1:
        return None

    def interp(s):
        k = int(np.searchsorted(times, s, side="right")) - 1
        k = min(max(k, 0), len(times) - 2) if len(times) > 1 else 0
        if len(times) == 1:
            return states[0]
        t0, t1 = times[k], times[k + 1]
        w = 0.0 if t1 == t0 else (s - t0) / (t1 - t0)
        return states[k] + w * (states[k + 1] - states[k])

    pa = interp(s0)
    if s1 == s0:
        return float(np.linalg.norm(x - pa))
    best = np.inf
    prev = pa
    inside = (times > s0) & (times < s1)
    for idx in np.nonzero(inside)[0]:
        best = min(best, _point_segment_dist(x, prev, states[idx]))
        prev = states[idx]
    best = min(best, _point_segment_dist(x, prev, interp(s1)))
    return best


def closeness(arc_a, arc_b, tau, eps):
    """Symmetric (tau, eps)-closeness test on stored samples.

    Each sample (t, j, x) with t + j <= tau must have a point of the other
    arc, at the same jump index and within eps in time, closer than eps in
    state.  Linear interpolation stands in for the unstored continuum.
    """
    return _one_sided_close(arc_a, arc_b, tau, eps) and _one_sided_close(
        arc_b, arc_a, tau, eps
    )


def _one_sided_close(src, dst, tau, eps):
    for j, t, x in src.samples():
        if t + j > tau:
            continue
        if j >= dst.num_phases:
            return False
        times, states = dst.phases[j]
        d = _window_dist(x, times, states, t - eps, t + eps)
        if d is None or d >= eps:
            return False
    return True


def construct_perturbed(arc, x_new, T):
    """Companion arc from a new start, rejoining the original at t + j = T.

    The offset x_new - arc(0,0) is scaled by max(0, 1 - (t+j)/T) at every
    stored sample, so the deviation never exceeds the initial offset and
    dies out linearly in total time.  Samples past T are dropped; the exact
    rejoin point is interpolated so equality at total time T is bitwise.
    """
    if arc.max_total_time() < T:
        raise HorizonTooShort(
            "arc spans total time %.6g < %.6g" % (arc.max_total_time(), T)
        )
    if T <= 0.0:
        raise ValueError("T must be positive")
    x_new = as_vector(x_new)
    offset = x_new - arc.phases[0][1][0]

    phases = []
    for j, (times, states) in enumerate(arc.phases):
        totals = times + j
        keep = totals < T
        ts = list(times[keep])
        xs = [states[k] for k in np.nonzero(keep)[0]]
        if np.all(keep):
            phases.append((ts, xs, j))
            continue
        t_star = T - j
        if ts:
            ts.append(t_star)
            xs.append(arc.eval(t_star, j))
        else:
            # whole phase starts at or past T: keep its first sample only
            ts.append(float(times[0]))
            xs.append(states[0])
        phases.append((ts, xs, j))
        break

    out_phases = []
    for ts, xs, j in phases:
        shifted = []
        for t, x in zip(ts, xs):
            lam = max(0.0, 1.0 - (t + j) / T)
            if j == 0 and t == 0.0:
                shifted.append(x_new.copy())
            elif lam > 0.0:
                shifted.append(x + lam * offset)
            else:
                shifted.append(np.array(x, dtype=float))
        out_phases.append((np.array(ts), np.vstack(shifted)))
    return HybridArc(out_phases, termination=Termination.HORIZON_REACHED)


def estimate_lipschitz(fn, box, n_pairs=2000, seed=0):
    """Empirical Lipschitz constant of fn over an axis box via random pairs."""
    bb = box.bounding_box()
    lo, hi = bb.lo, bb.hi
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_pairs):
        a = rng.uniform(lo, hi)
        b = rng.uniform(lo, hi)
        gap = float(np.linalg.norm(a - b))
        if gap < 1e-12:
            continue
        ratio = float(np.linalg.norm(as_vector(fn(a)) - as_vector(fn(b)))) / gap
        best = max(best, ratio)
    return best


def companion_radius_bound(delta, tau, lip_flow, lip_jump, delta_prime=0.0):
    """Largest initial offset r with a guaranteed delta-inflated companion:
    r <= (delta - delta') / max(1, 1/tau + L_C, 1 + L_D)."""
    if delta <= delta_prime:
        raise ValueError("need delta > delta_prime")
    scale = max(1.0, 1.0 / tau + lip_flow, 1.0 + lip_jump)
    return (delta - delta_prime) / scale


def verify_solution(system, arc, slope_tol=1e-3, membership_tol=None):
    """Check an arc against a system's data: membership, slopes, jumps.

    (a) every flow sample lies in the flow set within membership_tol,
    (b) each stored segment's chord slope matches the flow map at the
        segment midpoint state within delta + slope_tol,
    (c) each jump departs from the jump set and lands within
        delta + slope_tol of some jump-map candidate.
    """
    if membership_tol is None:
        membership_tol = 1e-9
    delta = system.delta
    # set inflation lives in flow_set/jump_set themselves (see perturb);
    # delta only widens the slack on map mismatches here
    set_tol = membership_tol
    ces = []
    n_samples = 0
    n_segments = 0
    n_jumps = 0

    last_phase = arc.num_phases - 1
    for j, (times, states) in enumerate(arc.phases):
        for k in range(len(times)):
            skip_escape = (
                arc.termination == Termination.ESCAPED_BOUNDS
                and j == last_phase
                and k == len(times) - 1
            )
            if skip_escape:
                continue
            n_samples += 1
            x = states[k]
            if not contains(system.flow_set, x, set_tol):
                in_jump = contains(system.jump_set, x, set_tol)
                if not in_jump:
                    margin = _membership_margin(system.flow_set, x, set_tol)
                    ces.append(
                        Counterexample(
                            condition="flow-membership",
                            point=x,
                            margin=margin,
                            witness=(j, float(times[k])),
                        )
                    )
        for k in range(len(times) - 1):
            dt = float(times[k + 1] - times[k])
            if dt <= 1e-12:
                continue
            n_segments += 1
            slope = (states[k + 1] - states[k]) / dt
            f_mid = system.flow(0.5 * (states[k] + states[k + 1]))
            err = float(np.linalg.norm(slope - f_mid))
            # the chord of one RK4 step deviates from f at the midpoint by
            # O(dt^2) plus whatever constant disturbance acted on the step
            margin = err - (delta + slope_tol)
            if margin > 0.0:
                ces.append(
                    Counterexample(
                        condition="flow-slope",
                        point=0.5 * (states[k] + states[k + 1]),
                        margin=margin,
                        witness=(j, float(times[k])),
                    )
                )

    for j in range(arc.num_phases - 1):
        n_jumps += 1
        times_m, states_m = arc.phases[j]
        times_p, states_p = arc.phases[j + 1]
        x_minus = states_m[-1]
        x_plus = states_p[0]
        t_jump = float(times_m[-1])
        if not contains(system.jump_set, x_minus, set_tol):
            margin = _membership_margin(system.jump_set, x_minus, set_tol)
            ces.append(
                Counterexample(
                    condition="jump-departure",
                    point=x_minus,
                    margin=margin,
                    witness=(j, t_jump),
                )
            )
        candidates = system.jump_candidates(x_minus)
        gap = min(float(np.linalg.norm(x_plus - as_vector(g))) for g in candidates)
        margin = gap - (delta + slope_tol)
        if margin > 0.0:
            ces.append(
                Counterexample(
                    condition="jump-landing",
                    point=x_plus,
                    margin=margin,
                    witness=(j + 1, t_jump),
                )
            )

    verdict = Verdict.PASS if not ces else Verdict.FAIL
    return CheckReport(
        verdict=verdict,
        counterexamples=ces,
        stats={
            "samples": n_samples,
            "segments": n_segments,
            "jumps": n_jumps,
            "delta": delta,
            "slope_tol": slope_tol,
        },
    )


def _membership_margin(region, x, tol):
    try:
        from .geometry import dist_to_set

        return dist_to_set(x, region) - tol
    except Exception:
        return float("inf")
