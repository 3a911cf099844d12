"""Charging-session ingestion and per-user daily profiles.

Sessions are plug-in events carrying one average power.  They are laid
onto a minute grid (one row per calendar day, 1,440 columns) and averaged
into a representative daily curve per user.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440
MAX_SESSION = timedelta(days=7)
SESSION_HEADER = ["user_id", "start", "end", "avg_power_kw"]
DAY_FILTERS = ("all", "weekdays", "weekends")


class SessionDataError(ValueError):
    """Raised for unreadable or invalid session data."""


@dataclass(frozen=True, order=True)
class ChargingSession:
    user_id: str
    start: datetime
    end: datetime
    avg_power_kw: float

    def __post_init__(self):
        if self.start.tzinfo is None or self.end.tzinfo is None:
            raise SessionDataError("session timestamps must be timezone-aware (UTC)")
        if not self.end > self.start:
            raise SessionDataError(f"session end {self.end} is not after start {self.start}")
        if self.end - self.start > MAX_SESSION:
            raise SessionDataError("session longer than 7 days")
        if not math.isfinite(self.avg_power_kw) or self.avg_power_kw < 0:
            raise SessionDataError(f"invalid power {self.avg_power_kw!r}")

    @property
    def duration_hours(self) -> float:
        return (self.end - self.start).total_seconds() / 3600.0


@dataclass(frozen=True)
class SessionDatasetSummary:
    n_users: int
    n_sessions: int
    date_range: tuple[datetime, datetime] | None
    total_energy_kwh: float
    n_rejected: int = 0
    n_zero_power: int = 0


@dataclass
class EvProfile:
    """Average daily charging curve of one user."""

    user_id: str
    avg_profile_kw: np.ndarray
    frac_charging: np.ndarray
    p_max_kw: float
    n_days: int

    def __post_init__(self):
        self.avg_profile_kw = np.asarray(self.avg_profile_kw, dtype=float)
        self.frac_charging = np.asarray(self.frac_charging, dtype=float)
        if self.avg_profile_kw.shape != (MINUTES_PER_DAY,) or self.frac_charging.shape != (MINUTES_PER_DAY,):
            raise ValueError("profiles must have 1440 samples")
        if self.n_days < 1:
            raise ValueError("n_days must be positive")


# ---------------------------------------------------------------------------
# CSV round trip


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp without timezone: {text!r}")
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def summarize(sessions: Sequence[ChargingSession], n_rejected=0, n_zero_power=0) -> SessionDatasetSummary:
    if not sessions:
        return SessionDatasetSummary(0, 0, None, 0.0, n_rejected, n_zero_power)
    users = {s.user_id for s in sessions}
    first = min(s.start for s in sessions)
    last = max(s.end for s in sessions)
    energy = math.fsum(s.avg_power_kw * s.duration_hours for s in sessions)
    return SessionDatasetSummary(len(users), len(sessions), (first, last), energy, n_rejected, n_zero_power)


def parse_sessions(path, strict: bool = False) -> tuple[list[ChargingSession], SessionDatasetSummary]:
    """Read a sessions CSV.

    Zero-power rows are dropped silently (counted in ``n_zero_power``).
    Other invalid rows abort in strict mode and are counted otherwise.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"sessions file not found: {path}")
    sessions: list[ChargingSession] = []
    rejected = 0
    zero = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SESSION_HEADER:
            raise SessionDataError(f"{path}: header must be {','.join(SESSION_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != 4:
                    raise ValueError(f"expected 4 fields, got {len(row)}")
                power = float(row[3])
                if power == 0.0:
                    zero += 1
                    continue
                sessions.append(
                    ChargingSession(row[0].strip(), parse_timestamp(row[1]), parse_timestamp(row[2]), power)
                )
            except ValueError as exc:
                if strict:
                    raise SessionDataError(f"{path}:{lineno}: {exc}") from exc
                rejected += 1
    if rejected:
        log.warning("%s: rejected %d invalid rows", path, rejected)
    sessions.sort()
    return sessions, summarize(sessions, rejected, zero)


def write_sessions(sessions: Iterable[ChargingSession], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SESSION_HEADER)
        for s in sessions:
            writer.writerow([s.user_id, format_timestamp(s.start), format_timestamp(s.end), repr(float(s.avg_power_kw))])


def group_by_user(sessions: Iterable[ChargingSession]) -> dict[str, list[ChargingSession]]:
    out: dict[str, list[ChargingSession]] = {}
    for s in sessions:
        out.setdefault(s.user_id, []).append(s)
    return out


# ---------------------------------------------------------------------------
# Minute raster


def _minute_floor(ts: datetime) -> datetime:
    return ts.replace(second=0, microsecond=0)


def _minute_ceil(ts: datetime) -> datetime:
    floored = _minute_floor(ts)
    return floored if floored == ts else floored + timedelta(minutes=1)


def _keep_day(d: date, day_filter: str) -> bool:
    if day_filter == "all":
        return True
    weekday = d.weekday() < 5
    return weekday if day_filter == "weekdays" else not weekday


def rasterize_user(sessions: Sequence[ChargingSession], day_filter: str = "all") -> np.ndarray:
    """Lay one user's sessions onto a (n_days, 1440) kW grid.

    Every calendar day from the first session start to the last occupied
    minute is present, including idle days.  Overlapping sessions add up.
    """
    return _rasterize(sessions, day_filter)[0]


def _rasterize(sessions, day_filter):
    if not sessions:
        raise SessionDataError("cannot rasterize an empty session list")
    if day_filter not in DAY_FILTERS:
        raise ValueError(f"day_filter must be one of {DAY_FILTERS}")
    users = {s.user_id for s in sessions}
    if len(users) != 1:
        raise SessionDataError(f"sessions span several users: {sorted(users)}")

    spans = [(_minute_floor(s.start), _minute_ceil(s.end), s.avg_power_kw) for s in sessions]
    origin = datetime.combine(min(a for a, _, _ in spans).date(), datetime.min.time(), tzinfo=timezone.utc)
    last_minute = max(b for _, b, _ in spans) - timedelta(minutes=1)
    n_days = (last_minute.date() - origin.date()).days + 1
    flat = np.zeros(n_days * MINUTES_PER_DAY)
    for a, b, p in spans:
        i0 = int((a - origin).total_seconds()) // 60
        i1 = int((b - origin).total_seconds()) // 60
        flat[i0:i1] += p
    grid = flat.reshape(n_days, MINUTES_PER_DAY)
    days = [origin.date() + timedelta(days=d) for d in range(n_days)]
    keep = np.array([_keep_day(d, day_filter) for d in days], dtype=bool)
    return grid[keep], [d for d, k in zip(days, keep) if k]


def average_profile(raster: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Column mean and fraction of active days per minute."""
    raster = np.asarray(raster, dtype=float)
    if raster.ndim != 2 or raster.shape[0] == 0 or raster.shape[1] != MINUTES_PER_DAY:
        raise ValueError("raster must be a non-empty (n_days, 1440) matrix")
    return raster.mean(axis=0), (raster > 0).mean(axis=0), raster.shape[0]


def max_charging_power(sessions: Sequence[ChargingSession]) -> float:
    """Robust per-user peak power: the 90th percentile of nonzero minute samples.

    The returned value is the smallest sample ``v`` such that at least 90 %
    of samples are ``<= v``; samples strictly above it form the excluded top
    decile.  Depends only on the empirical distribution of samples.
    """
    raster = rasterize_user(sessions, "all")
    samples = raster[raster > 0]
    if samples.size == 0:
        raise SessionDataError("user never charged")
    return robust_peak(samples)


def robust_peak(samples) -> float:
    values = np.sort(np.asarray(samples, dtype=float).ravel())
    n = values.size
    if n == 0:
        raise SessionDataError("user never charged")
    rank = (9 * n + 9) // 10  # ceil(0.9 n) without float rounding
    return float(values[rank - 1])


def build_profile(user_id: str, sessions: Sequence[ChargingSession], day_filter: str = "weekdays") -> EvProfile:
    raster = rasterize_user(sessions, day_filter)
    if raster.shape[0] == 0:
        raise SessionDataError(f"user {user_id}: no days left after {day_filter} filter")
    avg, frac, n_days = average_profile(raster)
    return EvProfile(user_id, avg, frac, max_charging_power(sessions), n_days)


def build_profiles(sessions: Iterable[ChargingSession], day_filter: str = "weekdays") -> dict[str, EvProfile]:
    profiles = {}
    for uid, user_sessions in sorted(group_by_user(sessions).items()):
        try:
            profiles[uid] = build_profile(uid, user_sessions, day_filter)
        except SessionDataError as exc:
            log.warning("skipping user %s: %s", uid, exc)
    return profiles


# ---------------------------------------------------------------------------
# Synthetic sessions


@dataclass(frozen=True)
class Archetype:
    """A behavioural template for synthetic users.

    Start time and duration are normal draws (hours); ``std`` of zero gives
    a fixed schedule.  ``weekend_prob`` defaults to ``charge_prob``.
    """

    name: str
    start_mean_h: float
    start_std_h: float
    duration_mean_h: float
    duration_std_h: float
    power_kw: float
    charge_prob: float
    weekend_prob: float | None = None
    power_jitter_kw: float = 0.0


DEFAULT_ARCHETYPES = {
    "night": Archetype("night", 22.0, 1.0, 6.0, 1.5, 7.0, 0.6),
    "rare_evening": Archetype("rare_evening", 18.5, 1.0, 2.5, 0.8, 7.0, 0.15),
    "frequent_night": Archetype("frequent_night", 1.0, 1.0, 4.0, 1.0, 7.0, 0.85),
    "day_fast": Archetype("day_fast", 10.0, 1.5, 1.5, 0.5, 22.0, 0.5, weekend_prob=0.2),
    "rare_afternoon": Archetype("rare_afternoon", 15.0, 2.0, 3.0, 1.0, 3.6, 0.2),
    "day": Archetype("day", 9.0, 1.0, 7.0, 1.5, 7.0, 0.6, weekend_prob=0.1),
}


@dataclass(frozen=True)
class SynthSpec:
    n_users: int
    days: int
    mix: dict[str, float]
    seed: int
    start_date: date = date(2020, 6, 1)
    archetypes: dict[str, Archetype] = field(default_factory=lambda: dict(DEFAULT_ARCHETYPES))

    def validate(self) -> None:
        if self.n_users < 1 or self.days < 1:
            raise ValueError("n_users and days must be >= 1")
        if not self.mix or any(w < 0 for w in self.mix.values()):
            raise ValueError("archetype mix must be non-empty and non-negative")
        if abs(math.fsum(self.mix.values()) - 1.0) > 1e-9:
            raise ValueError(f"archetype mix sums to {math.fsum(self.mix.values())}, not 1")
        missing = set(self.mix) - set(self.archetypes)
        if missing:
            raise ValueError(f"unknown archetypes in mix: {sorted(missing)}")


def _stream(seed: int, label: str) -> np.random.Generator:
    digest = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def synth_archetypes(spec: SynthSpec) -> dict[str, str]:
    """Archetype tag of every synthetic user, keyed by user id."""
    spec.validate()
    names = sorted(spec.mix)
    probs = np.array([spec.mix[n] for n in names])
    rng = _stream(spec.seed, "archetypes")
    picks = rng.choice(len(names), size=spec.n_users, p=probs / probs.sum())
    width = max(4, len(str(spec.n_users)))
    return {f"u{i:0{width}d}": names[j] for i, j in enumerate(picks)}


def synth_sessions(spec: SynthSpec) -> list[ChargingSession]:
    """Deterministic synthetic session log, one archetype per user."""
    tags = synth_archetypes(spec)
    origin = datetime.combine(spec.start_date, datetime.min.time(), tzinfo=timezone.utc)
    sessions = []
    for uid, name in tags.items():
        arch = spec.archetypes[name]
        rng = _stream(spec.seed, uid)
        power = max(0.5, arch.power_kw + arch.power_jitter_kw * rng.standard_normal())
        for d in range(spec.days):
            day = origin + timedelta(days=d)
            weekend = day.weekday() >= 5
            prob = arch.weekend_prob if (weekend and arch.weekend_prob is not None) else arch.charge_prob
            # draw all three numbers every day so streams stay aligned across prob changes
            u, z_start, z_dur = rng.random(), rng.standard_normal(), rng.standard_normal()
            if u >= prob:
                continue
            start_min = int(round((arch.start_mean_h + arch.start_std_h * z_start) * 60)) % MINUTES_PER_DAY
            dur_min = int(round((arch.duration_mean_h + arch.duration_std_h * z_dur) * 60))
            dur_min = min(max(dur_min, 15), 24 * 60)
            start = day + timedelta(minutes=start_min)
            sessions.append(ChargingSession(uid, start, start + timedelta(minutes=dur_min), round(power, 3)))
    sessions.sort()
    return sessions
