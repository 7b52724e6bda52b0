"""Sweep generators and the Monte Carlo engine.

Every sweep returns a list of :class:`SweepRecord`; :func:`write_csv` turns
them into the on-disk table. Randomness comes from the experiment's master
seed: pilots from ``pilot_seed``, and trial ``j`` of sweep point ``i`` from
``SeedSequence([seed, i, j])``, so results do not depend on evaluation order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import analysis as an
from .channel import RadioConfig, dbm_to_watt, make_pilots
from .estimator import EstimationError, LocalizationResult, locate, refine, sample_channel_params
from .fim import (BoundsReport, channel_efim, compute_approx_bounds, compute_bounds, crb_state, extract_bounds,
                  mode_jacobian)
from .geometry import MOBILE, STATIONARY, GeometryError, Scenario

HEATMAP = "heatmap"
SPEED = "speed-sweep"
POWER = "power-sweep"
SOLVABILITY = "solvability"
CRB = "crb"
LOCATE = "locate"
KINDS = (CRB, HEATMAP, SPEED, POWER, SOLVABILITY, LOCATE)

# cells closer than this to the BS or an IP are masked in heatmaps
MASK_RADIUS = 0.05
FLOAT_FORMAT = ".9g"


def default_scenario() -> Scenario:
    """Reference layout with the first speed-sweep velocity (10 m/s along [1, 2])."""
    direction = np.array([1.0, 2.0]) / np.sqrt(5.0)
    return Scenario(ue_position=[5.0, 2.0], ip_positions=[[-6.0, 8.0], [8.0, 6.0]], velocity=10.0 * direction)


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: Scenario = field(default_factory=default_scenario)
    radio: RadioConfig = field(default_factory=RadioConfig)
    kind: str = CRB
    mode: str = MOBILE
    seed: int = 0
    pilot_seed: int = 0
    trials: int = 0
    refine: bool = False
    direction: Optional[np.ndarray] = None  # speed-sweep direction (defaults to the scenario's)
    speed_range: tuple = (1e-3, 10.0, 15)  # log-spaced (min, max, points)
    power_range: tuple = (-20.0, 30.0, 17)  # dBm, linear (min, max, points)
    heatmap_x: tuple = (-10.0, 10.0)
    heatmap_y: tuple = (0.5, 10.0)
    heatmap_step: float = 0.25
    instances: int = 200
    output: Optional[str] = None
    plot: bool = True

    def replace(self, **changes) -> "ExperimentSpec":
        return replace(self, **changes)

    def speeds(self) -> np.ndarray:
        lo, hi, n = self.speed_range
        return np.logspace(np.log10(lo), np.log10(hi), int(n))

    def powers_dbm(self) -> np.ndarray:
        lo, hi, n = self.power_range
        return np.linspace(lo, hi, int(n))

    def sweep_direction(self) -> np.ndarray:
        if self.direction is not None:
            d = np.asarray(self.direction, dtype=float)
        else:
            d = np.asarray(self.scenario.velocity, dtype=float)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise ValueError("speed sweep needs a nonzero velocity direction")
        return d / norm


@dataclass
class SweepRecord:
    axis: tuple
    peb: float
    meb: List[float]
    ceb: float
    veb: float
    peb_approx: float = float("nan")
    veb_approx: float = float("nan")
    peb_inf: float = float("nan")
    rmse_p: Optional[float] = None
    rmse_map: Optional[float] = None
    rmse_b: Optional[float] = None
    rmse_v: Optional[float] = None
    trials: int = 0
    feasible_rate: Optional[float] = None
    flag: str = "ok"

    @property
    def meb_agg(self) -> float:
        if not self.meb:
            return float("nan")
        return float(np.sqrt(np.mean(np.square(self.meb))))


@dataclass(frozen=True)
class RmseSummary:
    position: float
    mapping: float
    clock: float
    velocity: float
    successes: int
    failures: int

    @property
    def feasible_rate(self) -> float:
        total = self.successes + self.failures
        return self.successes / total if total else float("nan")


def rmse(results: Sequence[Optional[LocalizationResult]], truth: Scenario) -> RmseSummary:
    """Root-mean-square errors over successful trials; ``None`` entries count as failures.

    The mapping error of one trial is the RMS over IPs of the position error.
    """
    ok = [r for r in results if r is not None]
    failures = len(results) - len(ok)
    if not ok:
        raise ValueError("no successful trial")
    p = np.array([np.sum((r.ue_position - truth.ue_position) ** 2) for r in ok])
    m = np.array([np.mean(np.sum((r.ip_positions - truth.ip_positions) ** 2, axis=1)) for r in ok])
    b = np.array([(r.clock_offset - truth.clock_offset) ** 2 for r in ok])
    v = np.array([np.sum((r.velocity - truth.velocity) ** 2) for r in ok])
    return RmseSummary(*(float(np.sqrt(np.mean(x))) for x in (p, m, b, v)), len(ok), failures)


def trial_seed(master: int, point: int, trial: int) -> int:
    return int(np.random.SeedSequence([master, point, trial]).generate_state(1)[0])


def monte_carlo(scenario: Scenario, efim, trials: int, master: int, point: int,
                do_refine: bool = False) -> List[Optional[LocalizationResult]]:
    out = []
    for j in range(trials):
        meas = sample_channel_params(scenario, efim, seed=trial_seed(master, point, j))
        try:
            res = locate(meas, bs_position=scenario.bs_position)
            if do_refine:
                res = refine(res, meas)
        except EstimationError:
            res = None
        out.append(res)
    return out


def _with_rmse(rec: SweepRecord, results, truth: Scenario) -> SweepRecord:
    rec.trials = len(results)
    if not results:
        return rec
    try:
        s = rmse(results, truth)
        rec.rmse_p, rec.rmse_map, rec.rmse_b, rec.rmse_v = s.position, s.mapping, s.clock, s.velocity
        rec.feasible_rate = s.feasible_rate
    except ValueError:
        rec.rmse_p = rec.rmse_map = rec.rmse_b = rec.rmse_v = float("nan")
        rec.feasible_rate = 0.0
    return rec


def _record(axis, bounds: BoundsReport, flag: Optional[str] = None) -> SweepRecord:
    return SweepRecord(tuple(axis), bounds.peb, list(bounds.meb), bounds.ceb, bounds.veb,
                       flag=flag or ("singular" if bounds.singular else "ok"))


def scenario_bounds(spec: ExperimentSpec) -> Dict[str, object]:
    """Exact and approximated bounds plus the state-FIM rank for the spec's scenario."""
    sc, cfg = spec.scenario, spec.radio
    pilots = make_pilots(cfg, spec.pilot_seed)
    efim = channel_efim(sc, cfg, pilots, spec.mode)
    crb = crb_state(efim, mode_jacobian(sc, spec.mode))
    exact = extract_bounds(crb, sc.num_ips, spec.mode)
    approx = compute_approx_bounds(sc, cfg, pilots, efim) if spec.mode == MOBILE else None
    return {"exact": exact, "approx": approx, "rank": crb.rank, "dim": crb.covariance.shape[0]}


def run_heatmap(spec: ExperimentSpec) -> List[SweepRecord]:
    """Bounds over a grid of UE positions; cells on top of the BS or an IP are masked."""
    base, cfg = spec.scenario, spec.radio
    pilots = make_pilots(cfg, spec.pilot_seed)
    step = spec.heatmap_step
    xs = np.arange(spec.heatmap_x[0], spec.heatmap_x[1] + step / 2, step)
    ys = np.arange(spec.heatmap_y[0], spec.heatmap_y[1] + step / 2, step)
    anchors = np.vstack([base.bs_position[None], base.ip_positions])
    nan = float("nan")
    records = []
    for y in ys:
        for x in xs:
            p0 = np.array([x, y])
            axis = (float(x), float(y))
            if np.min(np.linalg.norm(anchors - p0, axis=1)) < MASK_RADIUS:
                records.append(SweepRecord(axis, nan, [nan] * base.num_ips, nan, nan, flag="masked"))
                continue
            sc = base.replace(ue_position=p0)
            try:
                bounds = compute_bounds(sc, cfg, pilots, spec.mode)
            except GeometryError:
                records.append(SweepRecord(axis, nan, [nan] * base.num_ips, nan, nan, flag="masked"))
                continue
            records.append(_record(axis, bounds))
    return records


def run_speed_sweep(spec: ExperimentSpec) -> List[SweepRecord]:
    """Exact, approximated and asymptotic bounds over log-spaced speeds at a fixed direction."""
    base, cfg = spec.scenario, spec.radio
    pilots = make_pilots(cfg, spec.pilot_seed)
    direction = spec.sweep_direction()
    records = []
    for i, v in enumerate(spec.speeds()):
        sc = base.replace(velocity=v * direction)
        efim = channel_efim(sc, cfg, pilots)
        rec = _record((float(v),), extract_bounds(crb_state(efim, mode_jacobian(sc)), sc.num_ips))
        if sc.has_los:
            approx = compute_approx_bounds(sc, cfg, pilots, efim)
            rec.peb_approx, rec.veb_approx = approx.peb, approx.veb
            try:
                rec.peb_inf = an.asymptotic_limit(an.decompose(sc, cfg, pilots, efim)).peb
            except an.AnalysisError:
                rec.peb_inf = float("nan")
        if spec.trials > 0:
            _with_rmse(rec, monte_carlo(sc, efim, spec.trials, spec.seed, i, spec.refine), sc)
        records.append(rec)
    return records


def run_power_sweep(spec: ExperimentSpec) -> List[SweepRecord]:
    """Bounds and Monte Carlo RMSE of the range-search estimator over transmit powers."""
    sc = spec.scenario
    records = []
    for i, p_dbm in enumerate(spec.powers_dbm()):
        cfg = spec.radio.replace(tx_power=float(dbm_to_watt(p_dbm)))
        pilots = make_pilots(cfg, spec.pilot_seed)
        efim = channel_efim(sc, cfg, pilots)
        rec = _record((float(p_dbm),), extract_bounds(crb_state(efim, mode_jacobian(sc)), sc.num_ips))
        approx = compute_approx_bounds(sc, cfg, pilots, efim)
        rec.peb_approx, rec.veb_approx = approx.peb, approx.veb
        if spec.trials > 0 and not rec.flag == "singular":
            _with_rmse(rec, monte_carlo(sc, efim, spec.trials, spec.seed, i, spec.refine), sc)
        records.append(rec)
    return records


def run_locate(spec: ExperimentSpec):
    """One seeded end-to-end trial: sample parameters, search, optionally refine."""
    sc, cfg = spec.scenario, spec.radio
    pilots = make_pilots(cfg, spec.pilot_seed)
    efim = channel_efim(sc, cfg, pilots)
    meas = sample_channel_params(sc, efim, seed=trial_seed(spec.seed, 0, 0))
    res = locate(meas, bs_position=sc.bs_position)
    if spec.refine:
        res = refine(res, meas)
    return meas, res


# ---------------------------------------------------------------------------
# solvability

@dataclass(frozen=True)
class SolvabilityRow:
    label: str
    has_los: bool
    mobility: str
    num_ips: int
    unknowns: int
    measurements: int
    min_nlos: Optional[int]
    counted: bool
    instances: int
    numeric_full_rank: int
    mismatches: int


def random_scenario(rng: np.random.Generator, num_ips: int, has_los: bool, mobility: str,
                    box=((-10.0, 10.0), (0.5, 10.0)), min_sep: float = 1.0, min_sin: float = 0.1,
                    max_tries: int = 1000) -> Scenario:
    """Random non-degenerate layout.

    Rejects layouts with points closer than ``min_sep`` and with nearly
    parallel path directions (at the BS or at the UE), which are the
    measure-zero cases where the counting rule does not predict the rank.
    """
    (x0, x1), (y0, y1) = box
    for _ in range(max_tries):
        pts = np.column_stack([rng.uniform(x0, x1, num_ips + 1), rng.uniform(y0, y1, num_ips + 1)])
        allp = np.vstack([np.zeros((1, 2)), pts])
        dist = np.linalg.norm(allp[:, None] - allp[None], axis=2)
        if np.min(dist[np.triu_indices(len(allp), 1)]) < min_sep:
            continue
        ue, ips = pts[0], pts[1:]
        dir_bs = allp[1:] / np.linalg.norm(allp[1:], axis=1, keepdims=True)
        dir_ue = np.vstack([-ue[None], ips - ue])
        dir_ue /= np.linalg.norm(dir_ue, axis=1, keepdims=True)
        if not (_spread(dir_bs, min_sin) and _spread(dir_ue, min_sin)):
            continue
        speed = rng.uniform(1.0, 10.0) if mobility != STATIONARY else 0.0
        heading = rng.uniform(-np.pi, np.pi)
        vel = speed * np.array([np.cos(heading), np.sin(heading)])
        if mobility != STATIONARY and np.min(np.abs(dir_ue @ np.array([-vel[1], vel[0]]))) < min_sin * speed:
            continue  # velocity along a path direction
        return Scenario(ue, ips, velocity=vel, clock_offset=rng.uniform(-3.0, 3.0), has_los=has_los)
    raise RuntimeError("could not draw a non-degenerate scenario")


def _spread(dirs: np.ndarray, min_sin: float) -> bool:
    cross = dirs[:, None, 0] * dirs[None, :, 1] - dirs[:, None, 1] * dirs[None, :, 0]
    iu = np.triu_indices(len(dirs), 1)
    return bool(np.all(np.abs(cross[iu]) >= min_sin))


def solvability_levels(has_los: bool, mobility: str) -> List[int]:
    """IP counts to test: the minimum and one below, or two generic counts for unsolvable rows."""
    m = an.solvability(0, has_los, mobility).min_nlos
    if m is None:
        return [2, 3]
    return [m] if m == 0 else [m, m - 1]


def run_solvability_matrix(instances: int = 200, seed: int = 0, cfg: Optional[RadioConfig] = None,
                           pilot_seed: int = 0) -> List[SolvabilityRow]:
    """Counting verdicts for every table row, each confirmed by numerical ranks on random layouts.

    ``instances`` are split evenly over the (row, L) combinations.
    """
    cfg = cfg or RadioConfig()
    pilots = make_pilots(cfg, pilot_seed)
    combos = [(label, los, mob, L) for label, los, mob in an.TABLE_ROWS for L in solvability_levels(los, mob)]
    per = [instances // len(combos) + (1 if i < instances % len(combos) else 0) for i in range(len(combos))]
    rows = []
    for idx, ((label, los, mob, L), n) in enumerate(zip(combos, per)):
        verdict = an.solvability(L, los, mob)
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        full = 0
        mismatches = 0
        for _ in range(n):
            sc = random_scenario(rng, L, los, mob)
            check = an.numerical_rank_check(sc, cfg, pilots, mob)
            full += int(check.full_rank)
            mismatches += int(check.full_rank != verdict.solvable)
        rows.append(SolvabilityRow(label, los, mob, L, verdict.unknowns, verdict.measurements, verdict.min_nlos,
                                   verdict.solvable, n, full, mismatches))
    return rows


# ---------------------------------------------------------------------------
# CSV output

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), FLOAT_FORMAT)
    return str(x)


def sweep_header(records: Sequence[SweepRecord], axis_names: Sequence[str]) -> List[str]:
    L = len(records[0].meb) if records else 0
    return (list(axis_names) + ["peb", "meb_agg"] + [f"meb_{l}" for l in range(1, L + 1)]
            + ["ceb", "veb", "peb_approx", "veb_approx", "peb_inf", "rmse_p", "rmse_map", "rmse_b", "rmse_v",
               "trials", "feasible_rate", "flag"])


def sweep_rows(records: Sequence[SweepRecord]) -> List[List[str]]:
    rows = []
    for r in records:
        tail = (r.ceb, r.veb, r.peb_approx, r.veb_approx, r.peb_inf, r.rmse_p, r.rmse_map, r.rmse_b, r.rmse_v,
                r.trials, r.feasible_rate, r.flag)
        rows.append([_fmt(a) for a in r.axis] + [_fmt(r.peb), _fmt(r.meb_agg)] + [_fmt(m) for m in r.meb]
                    + [_fmt(x) for x in tail])
    return rows


SOLVABILITY_HEADER = ["row", "has_los", "mobility", "L", "unknowns", "measurements", "min_nlos", "solvable",
                      "instances", "numeric_full_rank", "mismatches"]


def solvability_rows(rows: Sequence[SolvabilityRow]) -> List[List[str]]:
    return [[r.label, _fmt(r.has_los), r.mobility, _fmt(r.num_ips), _fmt(r.unknowns), _fmt(r.measurements),
             _fmt(r.min_nlos), _fmt(r.counted), _fmt(r.instances), _fmt(r.numeric_full_rank), _fmt(r.mismatches)]
            for r in rows]


def to_csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(to_csv(header, rows))


AXIS_NAMES = {HEATMAP: ("x", "y"), SPEED: ("axis",), POWER: ("axis",)}
