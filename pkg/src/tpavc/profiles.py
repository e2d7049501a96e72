"""Load / PV time series at 3-minute resolution: synthesis, CSV I/O, episode slicing.

Profile CSV schema: a header ``timestamp,<bus>:pl,<bus>:ql,...,<pv_bus>:pv``
followed by one row per 3-minute step with ISO-8601 timestamps. Load columns
come first in bus-id order, then PV columns in bus-id order. ``pl``/``ql`` are
the active/reactive demand and ``pv`` the available PV active power, all p.u.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from tpavc.errors import ConfigError, ProfileError
from tpavc.grid.topology import FeederTopology

STEP_MINUTES = 3
STEPS_PER_DAY = 24 * 60 // STEP_MINUTES
SEASONS = ("spring", "summer", "fall", "winter")


@dataclass(frozen=True)
class SeasonCalendar:
    """Month (1-12) to season index; spring = Feb-Apr, summer = May-Jul, fall = Aug-Oct."""

    months: tuple[tuple[int, ...], ...] = ((2, 3, 4), (5, 6, 7), (8, 9, 10), (11, 12, 1))

    def __post_init__(self) -> None:
        flat = sorted(m for group in self.months for m in group)
        if flat != list(range(1, 13)) or len(self.months) != 4:
            raise ValueError("season calendar must partition the 12 months into 4 seasons")

    def season_index(self, month: int) -> int:
        for k, group in enumerate(self.months):
            if month in group:
                return k
        raise ValueError(f"month {month} out of range")

    def one_hot(self, month: int) -> np.ndarray:
        z = np.zeros(4)
        z[self.season_index(month)] = 1.0
        return z


DEFAULT_CALENDAR = SeasonCalendar()


def season_of(when, calendar: SeasonCalendar = DEFAULT_CALENDAR) -> np.ndarray:
    """One-hot season label of a month number, ``datetime`` or ``(profiles, cursor)`` pair."""
    if isinstance(when, tuple):
        profiles, cursor = when
        when = profiles.timestamp(cursor)
    month = when.month if isinstance(when, datetime) else int(when)
    return calendar.one_hot(month)


@dataclass(eq=False)
class ProfileSet:
    start: datetime
    load_bus_ids: tuple[int, ...]
    pv_bus_ids: tuple[int, ...]
    load_p: np.ndarray  # [T, n_load]
    load_q: np.ndarray  # [T, n_load]
    pv_p: np.ndarray  # [T, n_pv] available active power
    resolution_minutes: int = STEP_MINUTES
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = self.load_p.shape[0]
        if self.load_q.shape[0] != n or self.pv_p.shape[0] != n:
            raise ProfileError("series lengths differ")
        if n % STEPS_PER_DAY:
            raise ProfileError(f"series length {n} is not a whole number of days")
        steps = np.arange(n)
        start_ordinal = self.start.toordinal()
        day = steps // STEPS_PER_DAY
        # month / day-of-year lookup per day, then broadcast to steps
        days = [datetime.fromordinal(start_ordinal + int(d)) for d in range(self.horizon_days)]
        self._day_month = np.array([d.month for d in days])
        self._day_dom = np.array([d.day for d in days])
        self._day_year = np.array([d.year for d in days])
        self._step_day = day

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProfileSet):
            return NotImplemented
        return (
            self.start == other.start
            and self.load_bus_ids == other.load_bus_ids
            and self.pv_bus_ids == other.pv_bus_ids
            and self.resolution_minutes == other.resolution_minutes
            and np.array_equal(self.load_p, other.load_p)
            and np.array_equal(self.load_q, other.load_q)
            and np.array_equal(self.pv_p, other.pv_p)
        )

    @property
    def n_steps(self) -> int:
        return self.load_p.shape[0]

    @property
    def horizon_days(self) -> int:
        return self.n_steps // STEPS_PER_DAY

    def timestamp(self, t: int) -> datetime:
        return self.start + timedelta(minutes=STEP_MINUTES * int(t))

    def month_of(self, t) -> np.ndarray | int:
        return self._day_month[np.asarray(t) // STEPS_PER_DAY]

    def season_index(self, t, calendar: SeasonCalendar = DEFAULT_CALENDAR):
        months = np.atleast_1d(self.month_of(t))
        out = np.array([calendar.season_index(int(m)) for m in months])
        return out if np.ndim(t) else int(out[0])

    def day_month(self, day: int) -> tuple[int, int, int]:
        return int(self._day_year[day]), int(self._day_month[day]), int(self._day_dom[day])

    def check_bounds(self, topology: FeederTopology | None = None) -> None:
        for name, arr in (("load_p", self.load_p), ("load_q", self.load_q), ("pv_p", self.pv_p)):
            if not np.all(np.isfinite(arr)):
                raise ProfileError(f"{name} contains non-finite values")
        if np.any(self.pv_p < 0):
            t, j = np.argwhere(self.pv_p < 0)[0]
            raise ProfileError(f"negative PV output at step {t}, bus {self.pv_bus_ids[j]}")
        if np.any(self.load_p < 0):
            t, j = np.argwhere(self.load_p < 0)[0]
            raise ProfileError(f"negative load at step {t}, bus {self.load_bus_ids[j]}")
        if topology is not None:
            if tuple(topology.load_buses) != self.load_bus_ids or tuple(topology.pv_buses) != self.pv_bus_ids:
                raise ProfileError(
                    f"profile buses (loads {self.load_bus_ids}, pv {self.pv_bus_ids}) do not match "
                    f"topology (loads {topology.load_buses}, pv {topology.pv_buses})"
                )
            over = self.pv_p > topology.s_max[None, :] * (1 + 1e-12)
            if np.any(over):
                t, j = np.argwhere(over)[0]
                raise ProfileError(f"PV output above s_max at step {t}, bus {self.pv_bus_ids[j]}")


# -- synthesis -----------------------------------------------------------------


@dataclass
class SyntheticParams:
    days: int = 365
    start: str = "2014-01-01"
    power_factor: float = 0.95
    noise: float = 0.15  # multiplicative PV noise scale
    pv_peak: float = 0.85  # clear-sky noon output / s_max at the seasonal maximum
    pv_winter_ratio: float = 0.35  # seasonal minimum of the PV envelope relative to its maximum
    daylight_swing_hours: float = 2.0
    load_noise: float = 0.08  # log-space std of the load noise
    load_winter_boost: float = 0.25  # extra demand at the winter peak
    load_summer_boost: float = 0.10
    noise_corr: float = 0.97  # AR(1) coefficient per 3-minute step

    def validate(self) -> None:
        if not 0 < self.power_factor <= 1:
            raise ConfigError(f"power_factor must be in (0, 1], got {self.power_factor}")
        if self.noise < 0 or self.load_noise < 0:
            raise ConfigError("noise levels must be nonnegative")
        if self.days < 1:
            raise ConfigError("days must be >= 1")
        if not 0 < self.pv_peak <= 1:
            raise ConfigError("pv_peak must be in (0, 1]")
        if not 0 <= self.noise_corr < 1:
            raise ConfigError("noise_corr must be in [0, 1)")


SUMMER_PEAK_DOY = 167  # mid-June, centre of May-Jul


def _ar1(rng: np.random.Generator, shape: tuple[int, int], rho: float) -> np.ndarray:
    """Unit-variance AR(1) noise along axis 0."""
    eps = rng.standard_normal(shape)
    out = np.empty(shape)
    out[0] = eps[0]
    scale = math.sqrt(1 - rho * rho)
    for t in range(1, shape[0]):
        out[t] = rho * out[t - 1] + scale * eps[t]
    return out


def _load_shape(hours: np.ndarray) -> np.ndarray:
    """Double-peak residential demand shape, 1.0 at the evening peak."""
    morning = 0.35 * np.exp(-0.5 * ((hours - 8.0) / 1.5) ** 2)
    evening = 0.65 * np.exp(-0.5 * ((hours - 19.5) / 2.2) ** 2)
    evening += 0.65 * np.exp(-0.5 * ((hours + 4.5) / 2.2) ** 2)  # wrap-around tail after midnight
    return 0.35 + morning + evening


def generate_synthetic_year(topology: FeederTopology, params: SyntheticParams | None = None,
                            seed: int = 0) -> ProfileSet:
    params = params or SyntheticParams()
    params.validate()
    rng = np.random.default_rng(seed)
    start = datetime.fromisoformat(params.start)
    T = params.days * STEPS_PER_DAY
    steps = np.arange(T)
    hours = (steps % STEPS_PER_DAY) * STEP_MINUTES / 60.0
    doy = np.array([(start + timedelta(days=int(d))).timetuple().tm_yday
                    for d in range(params.days)])[steps // STEPS_PER_DAY]
    phase = 2 * np.pi * (doy - SUMMER_PEAK_DOY) / 365.0
    seasonal = np.cos(phase)  # +1 mid-June, -1 mid-December

    # PV: half-sine between sunrise and sunset, seasonal envelope, cloud noise
    daylight = 12.0 + params.daylight_swing_hours * seasonal
    sunrise = 12.0 - daylight / 2
    sun = np.clip(np.sin(np.pi * (hours - sunrise) / daylight), 0.0, None)
    sun[(hours < sunrise) | (hours > sunrise + daylight)] = 0.0
    lo = params.pv_winter_ratio
    envelope = lo + (1 - lo) * 0.5 * (1 + seasonal)
    s_max = topology.s_max
    n_pv = len(s_max)
    cloud = _ar1(rng, (T, n_pv), params.noise_corr)
    pv = (s_max[None, :] * params.pv_peak * (envelope * sun)[:, None]
          * np.clip(1.0 + params.noise * cloud, 0.0, None))
    pv = np.minimum(pv, s_max[None, :])

    # Loads: diurnal shape x seasonal factor x lognormal noise
    nominal = np.array([topology.bus_by_id[b].load for b in topology.load_buses])
    winter = np.clip(-seasonal, 0, None)
    summer = np.clip(seasonal, 0, None)
    factor = 1.0 + params.load_winter_boost * winter + params.load_summer_boost * summer
    shape = _load_shape(hours) * factor
    noise = _ar1(rng, (T, len(nominal)), params.noise_corr)
    load_p = nominal[None, :] * shape[:, None] * np.exp(params.load_noise * noise)
    load_q = load_p * math.tan(math.acos(params.power_factor))
    meta = {"seed": seed, "generator": "synthetic", "params": asdict(params), "topology": topology.name}
    return ProfileSet(start, tuple(topology.load_buses), tuple(topology.pv_buses),
                      load_p, load_q, pv, STEP_MINUTES, meta)


# -- CSV -------------------------------------------------------------------------


def _header(ps: ProfileSet) -> list[str]:
    cols = ["timestamp"]
    for b in ps.load_bus_ids:
        cols += [f"{b}:pl", f"{b}:ql"]
    cols += [f"{b}:pv" for b in ps.pv_bus_ids]
    return cols


def save_profiles_csv(ps: ProfileSet, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_load = len(ps.load_bus_ids)
    data = np.empty((ps.n_steps, 2 * n_load + len(ps.pv_bus_ids)))
    data[:, 0:2 * n_load:2] = ps.load_p
    data[:, 1:2 * n_load:2] = ps.load_q
    data[:, 2 * n_load:] = ps.pv_p
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_header(ps))
        for t in range(ps.n_steps):
            w.writerow([ps.timestamp(t).isoformat()] + [repr(float(x)) for x in data[t]])
    if ps.metadata:
        Path(str(path) + ".meta.json").write_text(json.dumps(ps.metadata, indent=2, sort_keys=True))


def load_profiles_csv(path, topology: FeederTopology | None = None) -> ProfileSet:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ProfileError(f"{path}: empty file") from None
        if not header or header[0] != "timestamp":
            raise ProfileError(f"{path}: first column must be 'timestamp'")
        load_ids: list[int] = []
        pv_ids: list[int] = []
        kinds = []
        for col in header[1:]:
            try:
                bus, kind = col.split(":")
                bus = int(bus)
            except ValueError:
                raise ProfileError(f"{path}: malformed column name {col!r}") from None
            if kind not in ("pl", "ql", "pv"):
                raise ProfileError(f"{path}: unknown column kind in {col!r}")
            kinds.append((bus, kind))
            if kind == "pl":
                load_ids.append(bus)
            elif kind == "pv":
                pv_ids.append(bus)
        expected = [f"{b}:{k}" for b in load_ids for k in ("pl", "ql")] + [f"{b}:pv" for b in pv_ids]
        if header[1:] != expected:
            missing = sorted(set(expected) - set(header[1:]))
            raise ProfileError(f"{path}: column layout mismatch; missing or misplaced {missing or header[1:]}")
        rows = []
        stamps = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ProfileError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            try:
                vals = [float(x) for x in row[1:]]
            except ValueError:
                raise ProfileError(f"{path}: row {row_no} has a non-numeric value") from None
            if any(math.isnan(v) or math.isinf(v) for v in vals):
                raise ProfileError(f"{path}: row {row_no} contains NaN/inf")
            stamps.append(row[0])
            rows.append(vals)
    if not rows:
        raise ProfileError(f"{path}: no data rows")
    n = len(rows)
    if n % STEPS_PER_DAY:
        expected_n = (n // STEPS_PER_DAY + 1) * STEPS_PER_DAY
        raise ProfileError(f"{path}: truncated series, expected {expected_n} rows, found {n}")
    start = datetime.fromisoformat(stamps[0])
    step = timedelta(minutes=STEP_MINUTES)
    for i in (1, n - 1):
        if datetime.fromisoformat(stamps[i]) != start + i * step:
            raise ProfileError(f"{path}: row {i + 2} timestamp breaks the {STEP_MINUTES}-minute resolution")
    data = np.array(rows)
    n_load = len(load_ids)
    meta_path = Path(str(path) + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    ps = ProfileSet(start, tuple(load_ids), tuple(pv_ids), data[:, 0:2 * n_load:2].copy(),
                    data[:, 1:2 * n_load:2].copy(), data[:, 2 * n_load:].copy(), STEP_MINUTES, meta)
    ps.check_bounds(topology)
    return ps


# -- episode slicing -----------------------------------------------------------


def _month_blocks(ps: ProfileSet) -> list[list[int]]:
    """Day indices grouped by calendar month, keeping only months fully inside the horizon."""
    blocks: dict[tuple[int, int], list[int]] = {}
    for d in range(ps.horizon_days):
        y, m, _ = ps.day_month(d)
        blocks.setdefault((y, m), []).append(d)
    out = []
    for (y, m), days in blocks.items():
        first = datetime(y, m, 1)
        nxt = datetime(y + (m == 12), m % 12 + 1, 1)
        if len(days) == (nxt - first).days:
            out.append(days)
    return out


def split_days(ps: ProfileSet, val_per_month: int = 1, test_per_month: int = 10) -> dict[str, list[int]]:
    """Deterministic day partition: evenly spaced test days and a mid-gap validation day per month."""
    months = _month_blocks(ps)
    if not months:
        raise ConfigError(f"horizon of {ps.horizon_days} days contains no complete month")
    val, test = [], []
    for days in months:
        n = len(days)
        if n < val_per_month + test_per_month:
            raise ConfigError("month too short for the requested split")
        pos = np.round(np.linspace(1, n - 2, test_per_month)).astype(int)
        chosen = set(pos.tolist())
        free = [i for i in range(n) if i not in chosen]
        mid = [free[len(free) * (k + 1) // (val_per_month + 1)] for k in range(val_per_month)]
        test += [days[i] for i in sorted(chosen)]
        val += [days[i] for i in mid]
    held = set(val) | set(test)
    train = [d for d in range(ps.horizon_days) if d not in held]
    return {"train": train, "val": sorted(val), "test": sorted(test)}


def slice_episodes(ps: ProfileSet, split: str, seed: int = 0, episode_length: int = 240) -> list[int]:
    """Episode start cursors (step indices) for ``split``.

    ``train`` returns every half-day-aligned start inside the training days in a
    seeded random order; ``val``/``test`` return the midnight start of each
    held-out day.
    """
    if split not in ("train", "val", "test"):
        raise ConfigError(f"unknown split {split!r}")
    days = split_days(ps)[split]
    if split != "train":
        return [d * STEPS_PER_DAY for d in days]
    if episode_length > STEPS_PER_DAY:
        raise ConfigError("training episodes must fit inside one day")
    cursors = [d * STEPS_PER_DAY + off for d in days
               for off in range(0, STEPS_PER_DAY - episode_length + 1, STEPS_PER_DAY // 2)]
    if not cursors:
        raise ConfigError("no training days left after the held-out split")
    rng = np.random.default_rng(seed)
    return [int(c) for c in rng.permutation(cursors)]
