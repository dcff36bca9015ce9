"""Seeded Monte Carlo driver for the clustering receiver and its baselines.

A run walks an SNR grid. At each grid point it draws ``trials`` independent
realizations, each from its own stream ``SeedSequence([seed, point, trial])``,
and runs every configured receiver on the same realization. Error counts
are integers and are summed, so the aggregate does not depend on trial order
or on how trials are spread over workers.

User 1 is always the strongest user. ``snr_db`` is the SNR of the weakest
user; ``power_gaps_db[j]`` is the gap between users j+1 and j+2. For the
grant-free scenario ``snr_db`` is the lowest pool level P1 instead.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import receiver, theory
from .channel import ChannelState, FixedSnr, Rayleigh, db_to_linear, draw_channel, transmit
from .gmm import EmConfig
from .modem import ConfigurationError, InputError, constellation_by_name

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

SCENARIOS = ("SingleUser", "Noma2", "Noma3", "MixedModulation", "GrantFree", "TheoryOnly")
RECEIVERS = ("gmm", "mld_full", "mld_pilot", "grant_free")
PILOT_LAYOUTS = ("shared", "orthogonal")

CSV_COLUMNS = ("scenario", "receiver", "user_index", "snr_db_user1", "snr_db_user2",
               "snr_db_user3", "n_symbols", "pilot_count", "trials", "seed",
               "ser_empirical", "ser_stderr", "ser_theory", "throughput", "wall_ms")

_USERS = {"SingleUser": 1, "Noma2": 2, "Noma3": 3, "MixedModulation": 2, "TheoryOnly": None}
_DEFAULT_RECEIVERS = {
    "SingleUser": ["gmm", "mld_full"],
    "Noma2": ["gmm", "mld_full"],
    "Noma3": ["gmm", "mld_full"],
    "MixedModulation": ["gmm", "mld_full"],
    "GrantFree": ["grant_free", "mld_full"],
    "TheoryOnly": [],
}


@dataclass
class ExperimentConfig:
    scenario: str = "Noma2"
    snr_db: list = field(default_factory=lambda: [6.0, 8.0, 10.0])
    power_gaps_db: list = field(default_factory=lambda: [9.0])
    modulations: list | None = None
    blocklength: int = 500
    pilot_count: int = 2
    pilot_layout: str = "shared"
    trials: int = 200
    seed: int = 0
    epsilon: float = 1.0
    max_iterations: int = 100
    c3: float | None = None
    noise_variance: float = 1.0
    receivers: list | None = None
    # grant-free only
    pool_size: int = 5
    pool_step_db: float = 5.0
    active_users_min: int = 1
    active_users_max: int = 3
    power_control: bool = True
    max_users: int = 8
    margin: float = 0.1
    refine: bool = True
    # bookkeeping
    record_wall_time: bool = False
    workers: int = 1

    def __post_init__(self):
        self.snr_db = [float(s) for s in np.atleast_1d(self.snr_db)]
        self.power_gaps_db = [float(g) for g in np.atleast_1d(self.power_gaps_db)]
        if self.receivers is None:
            self.receivers = list(_DEFAULT_RECEIVERS.get(self.scenario, []))
        else:
            self.receivers = list(self.receivers)
        if self.c3 is None:
            self.c3 = theory.DEFAULT_C3

    @property
    def users(self) -> int:
        if self.scenario == "TheoryOnly":
            return len(self.power_gaps_db) + 1
        if self.scenario == "GrantFree":
            return self.active_users_max
        return _USERS[self.scenario]

    def constellation_names(self) -> list[str]:
        if self.modulations is not None:
            return list(self.modulations)
        if self.scenario == "MixedModulation":
            return ["16QAM", "QPSK"]
        return ["QPSK"] * (1 if self.scenario == "GrantFree" else self.users)

    def user_snrs_db(self, weakest: float) -> list[float]:
        """Per-user SNRs in dB, strongest first."""
        k = self.users
        gaps = self.power_gaps_db[:k - 1]
        out = [weakest]
        for g in reversed(gaps):
            out.insert(0, out[0] + g)
        return out

    def pool_db(self, p1: float) -> list[float]:
        return [p1 + self.pool_step_db * i for i in range(self.pool_size)]

    def validate(self) -> "ExperimentConfig":
        bad = ConfigurationError
        if self.scenario not in SCENARIOS:
            raise bad(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if not self.snr_db:
            raise bad("snr_db must hold at least one value")
        if not all(math.isfinite(s) for s in self.snr_db + self.power_gaps_db):
            raise bad("SNR values and power gaps must be finite")
        if int(self.trials) != self.trials or self.trials < 1:
            raise bad("trials must be an integer >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise bad("seed must fit in 64 unsigned bits")
        if self.epsilon <= 0 or self.max_iterations < 1:
            raise bad("need epsilon > 0 and max_iterations >= 1")
        if not self.c3 > 0:
            raise bad("c3 must be positive")
        if self.noise_variance < 0:
            raise bad("noise_variance must be >= 0")
        if self.pilot_count < 1:
            raise bad("pilot_count must be >= 1")
        if self.blocklength < 2:
            raise bad("blocklength must be >= 2")
        if any(g < 0 for g in self.power_gaps_db):
            raise bad("power gaps must be >= 0 (user 1 is the strongest)")
        if self.pilot_layout not in PILOT_LAYOUTS:
            raise bad(f"pilot_layout must be one of {PILOT_LAYOUTS}")
        if self.workers < 1:
            raise bad("workers must be >= 1")
        unknown = set(self.receivers) - set(RECEIVERS)
        if unknown:
            raise bad(f"unknown receivers {sorted(unknown)}")
        if len(set(self.receivers)) != len(self.receivers):
            raise bad("receivers listed twice")
        if self.scenario != "TheoryOnly" and self.noise_variance == 0 and "grant_free" in self.receivers:
            raise bad("grant-free detection needs a positive noise power")
        k = self.users
        if self.scenario == "GrantFree":
            if set(self.receivers) - {"grant_free", "mld_full"}:
                raise bad("GrantFree supports the grant_free and mld_full receivers")
            if not 1 <= self.active_users_min <= self.active_users_max <= self.pool_size:
                raise bad("need 1 <= active_users_min <= active_users_max <= pool_size")
            if self.max_users < 1 or self.margin < 0:
                raise bad("need max_users >= 1 and margin >= 0")
            if self.blocklength <= self.pilot_count:
                raise bad("blocklength must exceed pilot_count")
        elif self.scenario == "TheoryOnly":
            if k > 2:
                raise bad("TheoryOnly covers one or two users")
            if self.receivers:
                raise bad("TheoryOnly runs no receivers")
        else:
            if "grant_free" in self.receivers:
                raise bad("grant_free belongs to the GrantFree scenario")
            if len(self.power_gaps_db) < k - 1:
                raise bad(f"{self.scenario} needs {k - 1} power gap(s)")
            if self.blocklength <= self.pilot_count * k:
                raise bad("blocklength must exceed pilot_count * users")
            if "mld_pilot" in self.receivers and self.pilot_layout == "shared" and self.pilot_count < k:
                raise bad("shared pilots need pilot_count >= users for LS estimation")
        names = self.constellation_names()
        try:
            cons = [constellation_by_name(n) for n in names]
        except ConfigurationError as e:
            raise bad(str(e)) from None
        if self.scenario not in ("GrantFree", "TheoryOnly") and len(cons) != k:
            raise bad(f"{self.scenario} needs {k} modulations, got {len(cons)}")
        if self.scenario == "TheoryOnly" and any(c.name != "QPSK" for c in cons):
            raise bad("the closed-form predictors cover QPSK only")
        if "mld_full" in self.receivers or "mld_pilot" in self.receivers:
            kk = k if self.scenario != "GrantFree" else self.active_users_max
            for c in cons:
                if kk > receiver.MLD_MAX_USERS.get(c.order, 0):
                    raise bad(f"joint detection of {kk} users with {c.name} is too large")
        return self


def _coerce(name: str, value):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in types:
        raise ConfigurationError(f"unknown config key {name!r}")
    t = types[name]
    if t == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{name} must be an integer")
    elif t == "bool":
        if not isinstance(value, bool):
            raise ConfigurationError(f"{name} must be true or false")
    elif t in ("float", "float | None"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{name} must be a number")
        value = float(value)
    elif t == "str":
        if not isinstance(value, str):
            raise ConfigurationError(f"{name} must be a string")
    elif t in ("list", "list | None"):
        if not isinstance(value, list):
            value = [value]
    return value


def config_from_dict(d: dict) -> ExperimentConfig:
    kwargs = {k: _coerce(k, v) for k, v in d.items()}
    try:
        cfg = ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(str(e)) from None
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    """Read a flat TOML file of ExperimentConfig fields."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: {e}") from None
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise ConfigurationError(f"config must be flat; found tables {nested}")
    return config_from_dict(raw)


@dataclass
class ResultRow:
    scenario: str
    receiver: str
    user_index: int | None
    snr_db_user1: float | None
    snr_db_user2: float | None
    snr_db_user3: float | None
    n_symbols: int
    pilot_count: int
    trials: int
    seed: int
    ser_empirical: float | None
    ser_stderr: float | None
    ser_theory: float | None
    throughput: float | None
    wall_ms: float | None
    extras: dict = field(default_factory=dict, compare=False, repr=False)

    def as_record(self) -> dict:
        d = asdict(self)
        d.pop("extras")
        return d


def _trial_rng(seed: int, point: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), point, trial]))


def _pilot_indices(c, symbols) -> np.ndarray:
    return np.argmin(np.abs(np.asarray(symbols)[:, None] - c.points[None, :]), axis=1)


def _noma_trial(cfg: ExperimentConfig, snrs_db, point: int, trial: int) -> dict:
    rng = _trial_rng(cfg.seed, point, trial)
    k, n = cfg.users, cfg.blocklength
    cons = [constellation_by_name(m) for m in cfg.constellation_names()]
    states = [draw_channel(FixedSnr(float(db_to_linear(s))), rng) for s in snrs_db]
    pilots = [receiver.pilot_sequences(k, cfg.pilot_count, cons[u], cfg.pilot_layout)[u]
              for u in range(k)]
    idx = [rng.integers(0, c.order, n) for c in cons]
    for u in range(k):
        idx[u][pilots[u].positions] = _pilot_indices(cons[u], pilots[u].symbols)
    x = [cons[u].points[idx[u]] for u in range(k)]
    y = transmit(x, states, cfg.noise_variance, rng)
    masks = [receiver.payload_mask(n, p) for p in pilots]
    em = EmConfig(epsilon=cfg.epsilon, max_iterations=cfg.max_iterations)

    out = {}
    for name in cfg.receivers:
        t0 = time.perf_counter()
        if name == "gmm":
            rep = receiver.gmm_sic_detect(y, k, cons, pilots, em)
            det = rep.per_user_symbols
        else:
            if name == "mld_full":
                full = receiver.mld_full_csi(y, states, cons)
            else:
                full, _ = receiver.mld_pilot_csi(y, pilots, cons)
            det = [full[u][masks[u]] for u in range(k)]
        elapsed = time.perf_counter() - t0
        errors = [int(np.sum(det[u] != idx[u][masks[u]])) for u in range(k)]
        counts = [int(masks[u].sum()) for u in range(k)]
        out[name] = {"errors": errors, "counts": counts, "seconds": elapsed}
    return out


def _grant_free_trial(cfg: ExperimentConfig, p1: float, point: int, trial: int) -> dict:
    rng = _trial_rng(cfg.seed, point, trial)
    n, p = cfg.blocklength, cfg.pilot_count
    c = constellation_by_name(cfg.constellation_names()[0])
    pool = cfg.pool_db(p1)
    k = int(rng.integers(cfg.active_users_min, cfg.active_users_max + 1))
    levels = rng.choice(len(pool), size=k, replace=False)
    states = [draw_channel(Rayleigh(float(db_to_linear(pool[j])), cfg.power_control), rng)
              for j in levels]
    order = np.argsort([-s.snr for s in states], kind="stable")
    states = [states[j] for j in order]
    preamble = receiver.Pilots(np.full(p, c.points[0]), np.arange(p))
    idx = rng.integers(0, c.order, (k, n))
    idx[:, :p] = 0
    y = transmit(list(c.points[idx]), states, cfg.noise_variance, rng)
    mask = receiver.payload_mask(n, preamble)
    payload = int(mask.sum())

    out = {}
    for name in cfg.receivers:
        t0 = time.perf_counter()
        if name == "grant_free":
            em = EmConfig(epsilon=cfg.epsilon, max_iterations=cfg.max_iterations)
            rep = receiver.grant_free_detect(y, cfg.noise_variance, c, preamble, em,
                                             max_users=cfg.max_users, margin=cfg.margin,
                                             refine=cfg.refine)
            found = rep.detected_user_count
            # stage j answers for the j-th strongest active user
            correct = sum(int(np.sum(rep.per_user_symbols[u] == idx[u][mask]))
                          for u in range(min(k, found)))
        else:
            full = receiver.mld_full_csi(y, states, c)
            found = k
            correct = sum(int(np.sum(full[u][mask] == idx[u][mask])) for u in range(k))
        out[name] = {"correct": correct, "payload": k * payload, "sent": k * n,
                     "count_ok": int(found == k), "active": k, "found": found,
                     "seconds": time.perf_counter() - t0}
    return out


def _run_point(args):
    cfg, point, x = args
    if cfg.scenario == "GrantFree":
        return [_grant_free_trial(cfg, x, point, t) for t in range(cfg.trials)]
    snrs = cfg.user_snrs_db(x)
    return [_noma_trial(cfg, snrs, point, t) for t in range(cfg.trials)]


def _theory(cfg: ExperimentConfig, snrs_db, phase_free: bool) -> list[float | None]:
    names = cfg.constellation_names()
    if any(m.upper() != "QPSK" for m in names):
        return [None] * len(snrs_db)
    g = [float(db_to_linear(s)) for s in snrs_db]
    n, c3 = cfg.blocklength, cfg.c3
    if len(g) == 1:
        return [theory.ser_single_user(g[0], n, c3=c3, phi=0.0 if phase_free else None)]
    if len(g) == 2:
        return list(theory.ser_noma_two_user(g[0], g[1], n, c3=c3,
                                             phis=(0.0, 0.0) if phase_free else None))
    return [None] * len(g)


def _stderr(p: float, count: int) -> float:
    return math.sqrt(p * (1 - p) / count) if count else 0.0


def _snr_columns(snrs):
    s = list(snrs) + [None] * (3 - len(snrs))
    return s[0], s[1], s[2]


def _rows_for_point(cfg, x, results) -> list[ResultRow]:
    rows = []
    base = dict(scenario=cfg.scenario, n_symbols=cfg.blocklength, pilot_count=cfg.pilot_count,
                trials=cfg.trials, seed=int(cfg.seed))
    if cfg.scenario == "GrantFree":
        for name in cfg.receivers:
            correct = sum(r[name]["correct"] for r in results)
            payload = sum(r[name]["payload"] for r in results)
            sent = sum(r[name]["sent"] for r in results)
            ser = 1 - correct / payload
            wall = sum(r[name]["seconds"] for r in results) * 1e3 if cfg.record_wall_time else None
            rows.append(ResultRow(receiver=name, user_index=None,
                                  snr_db_user1=x, snr_db_user2=None, snr_db_user3=None,
                                  ser_empirical=ser, ser_stderr=_stderr(ser, payload),
                                  ser_theory=None, throughput=correct / sent, wall_ms=wall,
                                  extras={"count_accuracy": float(np.mean(
                                      [r[name]["count_ok"] for r in results]))},
                                  **base))
        return rows
    snrs = cfg.user_snrs_db(x)
    cols = _snr_columns(snrs)
    for name in cfg.receivers:
        theo = _theory(cfg, snrs, phase_free=name != "gmm")
        wall = sum(r[name]["seconds"] for r in results) * 1e3 if cfg.record_wall_time else None
        for u in range(cfg.users):
            errors = sum(r[name]["errors"][u] for r in results)
            count = sum(r[name]["counts"][u] for r in results)
            ser = errors / count
            rows.append(ResultRow(receiver=name, user_index=u + 1,
                                  snr_db_user1=cols[0], snr_db_user2=cols[1], snr_db_user3=cols[2],
                                  ser_empirical=ser, ser_stderr=_stderr(ser, count),
                                  ser_theory=theo[u] if name in ("gmm", "mld_full") else None,
                                  throughput=None, wall_ms=wall,
                                  extras={"errors": errors, "count": count}, **base))
    return rows


def _theory_rows(cfg: ExperimentConfig) -> list[ResultRow]:
    rows = []
    for x in cfg.snr_db:
        snrs = cfg.user_snrs_db(x)
        cols = _snr_columns(snrs)
        for u, v in enumerate(_theory(cfg, snrs, phase_free=False)):
            rows.append(ResultRow(scenario=cfg.scenario, receiver="theory", user_index=u + 1,
                                  snr_db_user1=cols[0], snr_db_user2=cols[1],
                                  snr_db_user3=cols[2], n_symbols=cfg.blocklength,
                                  pilot_count=cfg.pilot_count, trials=cfg.trials,
                                  seed=int(cfg.seed), ser_empirical=None, ser_stderr=None,
                                  ser_theory=v, throughput=None, wall_ms=None))
    return rows


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    cfg.validate()
    if cfg.scenario == "TheoryOnly":
        return _theory_rows(cfg)
    jobs = [(cfg, i, x) for i, x in enumerate(cfg.snr_db)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_point = list(pool.map(_run_point, jobs))
    else:
        per_point = [_run_point(j) for j in jobs]
    rows = []
    for (_, _, x), results in zip(jobs, per_point):
        rows.extend(_rows_for_point(cfg, x, results))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def format_csv(rows) -> str:
    rows = list(rows)
    if not rows:
        raise InputError("no rows to write")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        rec = r.as_record() if isinstance(r, ResultRow) else r
        w.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_csv(rows, destination) -> None:
    """Write rows as CSV to a path or an open text stream."""
    text = format_csv(rows)
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", newline="") as fh:
            fh.write(text)


def emit_json(rows, destination) -> None:
    rows = list(rows)
    if not rows:
        raise InputError("no rows to write")
    with open(destination, "w") as fh:
        json.dump([r.as_record() for r in rows], fh, indent=1)
        fh.write("\n")


_INT_COLUMNS = {"user_index", "n_symbols", "pilot_count", "trials", "seed"}


def read_csv(source) -> list[ResultRow]:
    """Parse a file written by ``emit_csv`` back into rows."""
    text = Path(source).read_text() if not hasattr(source, "read") else source.read()
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise InputError("unexpected CSV header")
    rows = []
    for rec in reader:
        vals = {}
        for k, v in rec.items():
            if v == "":
                vals[k] = None
            elif k in _INT_COLUMNS:
                vals[k] = int(v)
            elif k in ("scenario", "receiver"):
                vals[k] = v
            else:
                vals[k] = float(v)
        rows.append(ResultRow(**vals))
    return rows
