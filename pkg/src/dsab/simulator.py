"""Microscopic highway simulator producing labelled trajectory datasets.

Vehicles follow the Intelligent Driver Model (IDM); tailgaters use a linear
constant-time-gap controller instead.  Lane changes are evaluated once per
second with a speed-advantage incentive, a keep-right rule and a braking
safety check.  Integration runs at ``dt`` (0.1 s by default) and states are
recorded at 1 Hz after a warm-up that fills the road.

Internal units are feet and seconds; the recorded table uses miles, feet,
mph and mph/s.  Lane 1 is the rightmost lane.
"""

from __future__ import annotations

import bisect
import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .rng import substream
from .trajectory import Dataset, write_dataset_csv

MPH = 5280.0 / 3600.0  # ft/s per mph
FT_PER_MILE = 5280.0
VEHICLE_LENGTH_FT = 15.0
LANE_WIDTH_FT = 12.0
MIN_GAP_FT = 1.0  # hard floor kept by the position guard
MAX_DECEL = 30.0  # ft/s^2, emergency braking limit
LOOKAHEAD_FT = 500.0


class SimulationError(RuntimeError):
    pass


class Behavior(enum.IntEnum):
    NORMAL = 0
    SPEEDING = 1
    SLOW = 2
    TAILGATER = 3
    STALL = 4


class Scenario(str, enum.Enum):
    NORMAL = "normal"
    SPEEDING = "speeding"
    SLOW = "slow"
    TAILGATING = "tailgating"
    STALLED = "stalled"
    COMPREHENSIVE = "comprehensive"


@dataclass(frozen=True)
class DriverProfile:
    behavior: Behavior
    desired_speed: float  # mph
    headway_target: float | None = None  # s, tailgaters only
    stall_start: float | None = None  # s of simulation time
    stall_duration: float | None = None

    def __post_init__(self):
        if self.behavior == Behavior.SPEEDING and self.desired_speed < 85:
            raise ValueError("speeding drivers want at least 85 mph")
        if self.behavior == Behavior.SLOW and self.desired_speed > 50:
            raise ValueError("slow drivers want at most 50 mph")
        if self.behavior == Behavior.TAILGATER and not (0 < (self.headway_target or 0) < 0.5):
            raise ValueError("tailgaters need a headway target in (0, 0.5) s")
        if self.behavior == Behavior.STALL and (self.stall_start is None or not self.stall_duration):
            raise ValueError("stalls need a start time and a positive duration")


@dataclass(frozen=True)
class IDMParams:
    """IDM constants in the user-facing units (mph/s, s, ft)."""

    a_max: float = 3.5
    b: float = 4.5
    T: float = 1.5
    s0: float = 6.6
    delta: float = 4.0


@dataclass(frozen=True)
class CTGParams:
    k_v: float = 0.6  # 1/s
    k_g: float = 0.2  # 1/s^2


def idm_desired_gap(v, dv, p: IDMParams = IDMParams()):
    """Desired bumper gap s* in ft for speed ``v`` and closing speed ``dv`` (ft/s)."""
    ab = math.sqrt(p.a_max * p.b) * MPH
    return p.s0 + np.maximum(0.0, v * p.T + v * dv / (2.0 * ab))


def idm_accel(v, v0, gap, v_lead, p: IDMParams = IDMParams()):
    """IDM acceleration in ft/s^2.  ``gap`` is ``inf`` where there is no leader."""
    v, v0, gap, v_lead = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64)
                                               for a in (v, v0, gap, v_lead)))
    a_max = p.a_max * MPH
    free = a_max * (1.0 - (v / np.maximum(v0, 1e-9)) ** p.delta)
    has = np.isfinite(gap)
    inter = np.zeros_like(v)
    if has.any():
        s_star = idm_desired_gap(v[has], v[has] - v_lead[has], p)
        inter[has] = a_max * (s_star / np.maximum(gap[has], 1e-3)) ** 2
    return free - inter


def ctg_accel(v, v_lead, gap, headway, p: CTGParams = CTGParams()):
    """Constant-time-gap controller, ft/s^2: zero when v == v_lead and gap == v * headway."""
    return p.k_v * (np.asarray(v_lead) - v) + p.k_g * (np.asarray(gap) - np.asarray(v) * headway)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """One simulated recording.  Durations in minutes, lengths in miles."""

    scenario: Scenario = Scenario.NORMAL
    demand: float = 800.0  # veh/lane/hour
    duration: float = 30.0
    road_length: float = 1.0
    lanes: int = 3
    seed: int = 0
    frac_normal: float = 1.0
    frac_speeding: float = 0.0
    frac_slow: float = 0.0
    frac_tailgater: float = 0.0
    normal_speed_mean: float = 72.5
    normal_speed_std: float = 7.6
    speeding_speed: tuple[float, float] = (85.0, 95.0)
    slow_speed: tuple[float, float] = (40.0, 50.0)
    tailgater_headway: tuple[float, float] = (0.3, 0.45)
    n_stalls: int = 0
    stall_minutes: float = 5.0
    stall_decel: float = 4.5  # mph/s while coming to a stop
    dt: float = 0.1
    warmup: float | None = None  # s; default covers one traversal at 45 mph
    entry_zone: float = 0.25  # miles of unrecorded road upstream where vehicles enter
    max_pending: int = 40  # queued arrivals per lane before declaring deadlock

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        for name in ("speeding_speed", "slow_speed", "tailgater_headway"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.demand <= 0:
            raise ValueError("demand must be positive")
        if self.duration <= 0 or self.road_length <= 0 or self.lanes < 1:
            raise ValueError("duration, road_length and lanes must be positive")
        fr = (self.frac_normal, self.frac_speeding, self.frac_slow, self.frac_tailgater)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError("profile fractions must be non-negative and sum to 1")
        if not 0 < self.dt <= 1:
            raise ValueError("dt must lie in (0, 1]")
        if self.speeding_speed[0] < 85 or self.slow_speed[1] > 50:
            raise ValueError("speeding range must start at 85 mph, slow range end at 50 mph")
        if not 0 < self.tailgater_headway[0] <= self.tailgater_headway[1] < 0.5:
            raise ValueError("tailgater headways must lie in (0, 0.5) s")
        if self.entry_zone < 0:
            raise ValueError("entry_zone must be non-negative")
        if self.n_stalls < 0 or self.stall_minutes <= 0 or self.stall_decel <= 0:
            raise ValueError("invalid stall settings")

    @property
    def warmup_s(self) -> float:
        if self.warmup is not None:
            return float(self.warmup)
        return math.ceil((self.road_length + self.entry_zone) * 3600.0 / 45.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.value
        for k in ("speeding_speed", "slow_speed", "tailgater_headway"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)


# Recipes for the six scenarios.  The scenario-specific base traffic wants
# about 65 mph; the normal recording uses a wider real-world style spread.
_SCENARIO_65 = dict(normal_speed_mean=65.0, normal_speed_std=3.0)
SCENARIO_DEFAULTS: dict[Scenario, dict] = {
    Scenario.NORMAL: dict(demand=800.0),
    Scenario.SPEEDING: dict(demand=500.0, frac_normal=0.7, frac_speeding=0.3, **_SCENARIO_65),
    Scenario.SLOW: dict(demand=500.0, frac_normal=0.98, frac_slow=0.02, **_SCENARIO_65),
    Scenario.TAILGATING: dict(demand=500.0, frac_normal=0.95, frac_tailgater=0.05, **_SCENARIO_65),
    Scenario.STALLED: dict(demand=1000.0, n_stalls=15, stall_minutes=5.0, **_SCENARIO_65),
    Scenario.COMPREHENSIVE: dict(demand=1000.0, frac_normal=0.86, frac_speeding=0.10,
                                 frac_slow=0.01, frac_tailgater=0.03, n_stalls=2,
                                 stall_minutes=3.0, **_SCENARIO_65),
}


def scenario_config(scenario: Scenario | str, **overrides) -> ScenarioConfig:
    """Default recipe for ``scenario`` with keyword overrides applied."""
    scenario = Scenario(scenario)
    return ScenarioConfig(scenario=scenario, **{**SCENARIO_DEFAULTS[scenario], **overrides})


@dataclass(frozen=True)
class LabelRules:
    speeding_mph: float = 80.0
    slow_mph: float = 50.0
    slow_gap_factor: float = 2.0
    tailgate_headway_s: float = 0.5
    stall_mph: float = 1.0


# ---------------------------------------------------------------------------
# state and dynamics
# ---------------------------------------------------------------------------

_ARRAYS = ("ids", "x", "lane", "v", "a", "v0", "behavior", "headway", "stall_start",
           "stall_end", "cooldown")


@dataclass
class SimState:
    """Struct-of-arrays vehicle state.  ``x`` is the front bumper in ft."""

    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lane: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    a: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    behavior: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    headway: np.ndarray = field(default_factory=lambda: np.zeros(0))
    stall_start: np.ndarray = field(default_factory=lambda: np.zeros(0))
    stall_end: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cooldown: np.ndarray = field(default_factory=lambda: np.zeros(0))
    t: float = 0.0
    n_lanes: int = 1
    idm: IDMParams = IDMParams()
    ctg: CTGParams = CTGParams()
    stall_decel: float = 4.5 * MPH

    def __len__(self) -> int:
        return len(self.x)

    def copy(self) -> "SimState":
        return replace(self, **{k: getattr(self, k).copy() for k in _ARRAYS})

    def append(self, **values) -> None:
        for k in _ARRAYS:
            arr = getattr(self, k)
            setattr(self, k, np.append(arr, np.asarray(values[k], dtype=arr.dtype)))

    def keep(self, sel: np.ndarray) -> None:
        for k in _ARRAYS:
            setattr(self, k, getattr(self, k)[sel])

    def stalled(self, t: float | None = None) -> np.ndarray:
        t = self.t if t is None else t
        return (self.stall_start <= t) & (t < self.stall_end)

    def leaders(self) -> tuple[np.ndarray, np.ndarray]:
        """Index of the vehicle ahead in the same lane (-1 if none) and the bumper gap."""
        n = len(self)
        lead = np.full(n, -1, dtype=np.int64)
        if n > 1:
            order = np.lexsort((self.ids, self.x, self.lane))
            same = self.lane[order[1:]] == self.lane[order[:-1]]
            lead[order[:-1]] = np.where(same, order[1:], -1)
        gap = np.full(n, np.inf)
        has = lead >= 0
        gap[has] = self.x[lead[has]] - self.x[has] - VEHICLE_LENGTH_FT
        return lead, gap


def _accelerations(s: SimState, lead: np.ndarray, gap: np.ndarray) -> np.ndarray:
    has = lead >= 0
    v_lead = np.where(has, s.v[np.maximum(lead, 0)], s.v)
    acc = idm_accel(s.v, s.v0, gap, v_lead, s.idm)
    tg = (s.behavior == Behavior.TAILGATER) & has
    if tg.any():
        free = idm_accel(s.v[tg], s.v0[tg], np.inf, 0.0, s.idm)
        acc[tg] = np.minimum(ctg_accel(s.v[tg], v_lead[tg], gap[tg], s.headway[tg], s.ctg), free)
    st = s.stalled()
    if st.any():
        acc[st] = np.minimum(acc[st], -s.stall_decel)
    return np.clip(acc, -MAX_DECEL, s.idm.a_max * MPH)


def _guard_positions(s: SimState, x_new: np.ndarray) -> np.ndarray:
    """Cap each position so the bumper gap to the (moved) leader stays >= MIN_GAP_FT."""
    d = VEHICLE_LENGTH_FT + MIN_GAP_FT
    out = x_new.copy()
    for ln in np.unique(s.lane):
        idx = np.flatnonzero(s.lane == ln)
        idx = idx[np.lexsort((s.ids[idx], s.x[idx]))]
        # ascending in x: require out[k] <= out[k+1] - d, i.e. z = out - k*d non-decreasing
        k = np.arange(len(idx)) * d
        z = out[idx] - k
        z = np.minimum.accumulate(z[::-1])[::-1]
        out[idx] = z + k
    return out


def step(state: SimState, dt: float) -> SimState:
    """Advance by ``dt`` seconds; returns a new state.

    Car following, stalls and integration happen every call; lane changes
    are evaluated whenever a whole second boundary is crossed.
    """
    if not 0 < dt <= 1:
        raise ValueError("dt must lie in (0, 1]")
    s = state.copy()
    if len(s):
        lead, gap = s.leaders()
        acc = _accelerations(s, lead, gap)
        v_new = np.maximum(0.0, s.v + acc * dt)
        x_new = _guard_positions(s, s.x + 0.5 * (s.v + v_new) * dt)
        capped = x_new < s.x + 0.5 * (s.v + v_new) * dt - 1e-9
        if capped.any():
            has = lead >= 0
            v_cap = np.where(has, v_new[np.maximum(lead, 0)], v_new)
            v_new = np.where(capped, np.minimum(v_new, v_cap), v_new)
        s.a = (v_new - s.v) / dt
        s.v, s.x = v_new, x_new
    t_old = s.t
    s.t = round(t_old + dt, 9)
    if math.floor(s.t + 1e-9) > math.floor(t_old + 1e-9) and len(s):
        _lane_changes(s)
    return s


def _lane_changes(s: SimState) -> None:
    """Sequential lane-change pass, front vehicles first."""
    p = s.idm
    b = p.b * MPH
    gain = 5.0 * MPH
    lanes = {ln: sorted((float(s.x[i]), int(s.ids[i]), int(i)) for i in np.flatnonzero(s.lane == ln))
             for ln in range(1, s.n_lanes + 1)}
    stalled = s.stalled()

    def neighbours(ln, x, vid):
        arr = lanes[ln]
        k = bisect.bisect_left(arr, (x, vid, -1))
        ahead = k
        while ahead < len(arr) and arr[ahead][1] == vid:
            ahead += 1
        behind = k - 1
        return (arr[ahead][2] if ahead < len(arr) else -1), (arr[behind][2] if behind >= 0 else -1)

    def expected_speed(i, ln):
        ahead, _ = neighbours(ln, float(s.x[i]), int(s.ids[i]))
        if ahead >= 0 and s.x[ahead] - s.x[i] < LOOKAHEAD_FT:
            return min(s.v0[i], s.v[ahead])
        return s.v0[i]

    def safe(i, ln):
        x = float(s.x[i])
        ahead, behind = neighbours(ln, x, int(s.ids[i]))
        if ahead >= 0:
            g = s.x[ahead] - x - VEHICLE_LENGTH_FT
            if g < p.s0 or idm_accel(s.v[i], s.v0[i], g, s.v[ahead], p) < -b:
                return False
        if behind >= 0:
            g = x - s.x[behind] - VEHICLE_LENGTH_FT
            if g < p.s0 or idm_accel(s.v[behind], s.v0[behind], g, s.v[i], p) < -b:
                return False
        return True

    for i in np.lexsort((s.ids, -s.x)):
        if stalled[i] or s.cooldown[i] > s.t:
            continue
        ln = int(s.lane[i])
        here = expected_speed(i, ln)
        target = None
        if ln < s.n_lanes and expected_speed(i, ln + 1) - here > gain and safe(i, ln + 1):
            target = ln + 1
        elif ln > 1 and expected_speed(i, ln - 1) >= here and safe(i, ln - 1):
            target = ln - 1
        if target is None:
            continue
        key = (float(s.x[i]), int(s.ids[i]), int(i))
        lanes[ln].remove(key)
        bisect.insort(lanes[target], key)
        s.lane[i] = target
        s.cooldown[i] = s.t + 5.0


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

_TRACE_EXTRA = ["behavior", "gap_ft", "s_star_ft", "stall_start", "stall_end"]


def _sample_profile(cfg: ScenarioConfig, rng: np.random.Generator) -> DriverProfile:
    fr = np.array([cfg.frac_normal, cfg.frac_speeding, cfg.frac_slow, cfg.frac_tailgater])
    kind = int(rng.choice(4, p=fr / fr.sum()))
    if kind == 1:
        return DriverProfile(Behavior.SPEEDING, float(rng.uniform(*cfg.speeding_speed)))
    if kind == 2:
        return DriverProfile(Behavior.SLOW, float(rng.uniform(*cfg.slow_speed)))
    v0 = float(np.clip(rng.normal(cfg.normal_speed_mean, cfg.normal_speed_std), 50.5, 110.0))
    if kind == 3:
        return DriverProfile(Behavior.TAILGATER, v0, float(rng.uniform(*cfg.tailgater_headway)))
    return DriverProfile(Behavior.NORMAL, v0)


def _try_spawn(s: SimState, lane: int, profile: DriverProfile, vid: int, x0: float) -> bool:
    p = s.idm
    v0 = profile.desired_speed * MPH
    in_lane = np.flatnonzero(s.lane == lane)
    v_entry = v0
    if len(in_lane):
        tail = in_lane[np.argmin(s.x[in_lane])]
        gap = s.x[tail] - x0 - VEHICLE_LENGTH_FT
        if gap < p.s0 + VEHICLE_LENGTH_FT:
            return False
        if gap < 2.0 * float(idm_desired_gap(v0, 0.0, p)):
            v_entry = min(v0, s.v[tail], (gap - p.s0) / p.T)
            if v_entry < 0.5 * min(v0, s.v[tail]):
                return False
    s.append(ids=vid, x=x0, lane=lane, v=v_entry, a=0.0, v0=v0, behavior=int(profile.behavior),
             headway=profile.headway_target or 0.0, stall_start=np.inf, stall_end=np.inf,
             cooldown=s.t + 5.0)
    return True


def _record(s: SimState, t_rec: int, road_ft: float, rows: list) -> None:
    lead, gap = s.leaders()
    on = (s.x >= 0) & (s.x <= road_ft)
    if not on.any():
        return
    has = lead >= 0
    v_lead = np.where(has, s.v[np.maximum(lead, 0)], s.v)
    s_star = idm_desired_gap(s.v, s.v - v_lead, s.idm)
    rows.append(pd.DataFrame({
        "t": t_rec,
        "vehicle_id": s.ids[on],
        "x_mi": s.x[on] / FT_PER_MILE,
        "y_ft": (s.lane[on] - 0.5) * LANE_WIDTH_FT,
        "lane": s.lane[on],
        "v_mph": s.v[on] / MPH,
        "a_mphps": s.a[on] / MPH,
        "behavior": s.behavior[on],
        "gap_ft": gap[on],
        "s_star_ft": s_star[on],
        "stall_start": s.stall_start[on],
        "stall_end": s.stall_end[on],
    }))


def simulate(cfg: ScenarioConfig) -> pd.DataFrame:
    """Run the microsimulation; returns the 1 Hz trace including ground-truth columns.

    Times in the trace (``t``, stall bounds) are seconds since the end of warm-up.
    """
    rng = substream(cfg.seed, "sim")
    dt = cfg.dt
    s = SimState(n_lanes=cfg.lanes, stall_decel=cfg.stall_decel * MPH)
    road_ft = cfg.road_length * FT_PER_MILE
    entry_ft = cfg.entry_zone * FT_PER_MILE
    warm = cfg.warmup_s
    end = warm + cfg.duration * 60.0
    mean_gap = 3600.0 / cfg.demand
    next_arrival = rng.exponential(mean_gap, size=cfg.lanes)
    pending = np.zeros(cfg.lanes, dtype=np.int64)
    stall_len = cfg.stall_minutes * 60.0
    latest = max(warm, end - stall_len)
    stall_times = sorted(rng.uniform(warm, latest, size=cfg.n_stalls).tolist())
    queued: list[DriverProfile | None] = [None] * cfg.lanes
    next_id = 1
    next_record = warm
    rows: list[pd.DataFrame] = []
    n_steps = int(round(end / dt))
    for k in range(n_steps + 1):
        t = s.t
        # arrivals queue up per lane; the head of each queue enters once there is room
        for li in range(cfg.lanes):
            while next_arrival[li] <= t:
                pending[li] += 1
                next_arrival[li] += rng.exponential(mean_gap)
            if pending[li] > cfg.max_pending:
                raise SimulationError(
                    f"inflow deadlock: {pending[li]} vehicles waiting to enter lane {li + 1} "
                    f"at t={t:.1f}s; demand {cfg.demand:g} veh/l/hr is too high")
            if pending[li]:
                if queued[li] is None:
                    queued[li] = _sample_profile(cfg, rng)
                if _try_spawn(s, li + 1, queued[li], next_id, -entry_ft):
                    pending[li] -= 1
                    next_id += 1
                    queued[li] = None
        # stalls hit a random normal vehicle well inside the road
        while stall_times and stall_times[0] <= t:
            ok = np.flatnonzero((s.behavior == Behavior.NORMAL) & (s.x > 0.1 * road_ft)
                                & (s.x < 0.7 * road_ft))
            if not len(ok):
                break
            i = int(ok[rng.integers(len(ok))])
            stall_times.pop(0)
            s.behavior[i] = int(Behavior.STALL)
            s.stall_start[i] = t
            s.stall_end[i] = t + stall_len
        if t >= next_record - 1e-9:
            _record(s, int(round(next_record - warm)), road_ft, rows)
            next_record += 1.0
        if k == n_steps:
            break
        s = step(s, dt)
        gone = s.x > road_ft
        if gone.any():
            s.keep(~gone)
    trace = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(
        columns=["t", "vehicle_id", "x_mi", "y_ft", "lane", "v_mph", "a_mphps"] + _TRACE_EXTRA)
    trace["stall_start"] = trace["stall_start"] - warm
    trace["stall_end"] = trace["stall_end"] - warm
    return trace


def label_anomalies(trace: pd.DataFrame, rules: LabelRules = LabelRules()) -> np.ndarray:
    """Per-row 0/1 labels: a row is abnormal only while its driver's abnormal
    behaviour is actually showing."""
    beh = trace["behavior"].to_numpy()
    v = trace["v_mph"].to_numpy()
    gap = trace["gap_ft"].to_numpy(dtype=np.float64)
    t = trace["t"].to_numpy(dtype=np.float64)
    speeding = (beh == Behavior.SPEEDING) & (v >= rules.speeding_mph)
    free = gap > rules.slow_gap_factor * trace["s_star_ft"].to_numpy()
    slow = (beh == Behavior.SLOW) & (v <= rules.slow_mph) & free
    with np.errstate(divide="ignore", invalid="ignore"):
        headway = np.where(v > 0, gap / (v * MPH), np.inf)
    tail = (beh == Behavior.TAILGATER) & (headway < rules.tailgate_headway_s)
    inside = (t >= trace["stall_start"].to_numpy()) & (t < trace["stall_end"].to_numpy())
    stall = (beh == Behavior.STALL) & inside & (v < rules.stall_mph)
    return (speeding | slow | tail | stall).astype(np.int64)


def generate(cfg: ScenarioConfig, rules: LabelRules = LabelRules()) -> Dataset:
    """Simulate ``cfg`` and return the labelled 1 Hz dataset."""
    trace = simulate(cfg)
    frame = trace[["t", "vehicle_id", "x_mi", "y_ft", "lane", "v_mph", "a_mphps"]].copy()
    frame["label"] = label_anomalies(trace, rules)
    return Dataset(frame, cfg.road_length, cfg.lanes)


def write_scenario(dataset: Dataset, cfg: ScenarioConfig, csv_path: str | Path) -> Path:
    """Write the dataset CSV and its ``.json`` sidecar holding ``cfg``."""
    csv_path = Path(csv_path)
    write_dataset_csv(dataset, csv_path)
    sidecar = csv_path.with_suffix(".json")
    sidecar.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar
