"""Seeded Monte-Carlo experiments.

Every experiment maps a flat ``ExperimentConfig`` to CSV rows with the columns
``experiment,seed,trial,sweep_var,sweep_val,metric,value``. Trial ``t`` draws
from ``np.random.default_rng([seed, t, ...])``, so results do not depend on how
trials are spread over workers. Aggregate rows (means over trials) carry
``trial = -1``.
"""
import csv
import dataclasses
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import get_type_hints

import numpy as np

from .channel import GeometryConfig, SystemConfig, db2pow, gen_channel_realization, rayleigh_realization
from .detector import BmpConfig, GampConfig, bmp_detect
from .frm import SCHEMES, get_constellation, group_expand, random_phases, simulate_rx
from .optimizer import ao_optimize, rao_optimize
from .rates import conditional_rate_ris, conditional_rate_user, sum_rate

log = logging.getLogger(__name__)

COLUMNS = ("experiment", "seed", "trial", "sweep_var", "sweep_val", "metric", "value")
OPTIMIZERS = ("none", "ao", "rao")
EXPERIMENTS = ("convergence", "rate-region", "rate-sweep", "ber-sweep")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """All experiment knobs; every field is also a config-file key."""

    scheme: str = "frm"
    schemes: tuple = ("frm", "orm", "ris-ofdm", "no-ris")
    M: int = 4
    K: int = 8
    N: int = 32
    B: int = 0
    L: int = 1
    P_dbw: float = 0.0
    sigma2_dbw: float = -60.0
    optimizer: str = "rao"
    optimizers: tuple = ("ao", "rao")
    trials: int = 100
    seed: int = 0
    outer_iters: int = 200
    mm_iters: int = 100
    bmp_max_iter: int = 10
    bmp_tol: float = 1e-3
    bmp_stop_rule: str = "relative"
    gamp_iters: int = 30
    gamp_damping: float = 0.7
    constellation: str = "qpsk"
    sweep_var: str = "P"
    sweep_values: tuple = ()
    variants: tuple = ("frm-random", "frm-opt", "orm-opt")
    frames: int = 20
    n_samples: int = 32
    n_noise: int = 32
    channel: str = "geometry"
    ris_x_fraction: float = -1.0
    out: str = ""

    def __post_init__(self):
        if self.B == 0 and self.L >= 1 and self.N % self.L == 0:
            object.__setattr__(self, "B", self.N // self.L)

    @property
    def power(self):
        return float(db2pow(self.P_dbw))

    @property
    def sigma2(self):
        return float(db2pow(self.sigma2_dbw))

    def validate(self):
        if self.L < 1 or self.B < 1 or self.N != self.B * self.L:
            raise ConfigError(f"need N = B*L with B, L >= 1 (got N={self.N}, B={self.B}, L={self.L})")
        if self.K < 2 or self.K % 2:
            raise ConfigError("K must be an even integer >= 2")
        if self.M < 1 or self.trials < 1:
            raise ConfigError("M and trials must be positive")
        for s in (self.scheme, *self.schemes):
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}")
        for o in (self.optimizer, *self.optimizers):
            if o not in OPTIMIZERS:
                raise ConfigError(f"unknown optimizer {o!r}")
        if self.scheme == "no-ris" and self.optimizer != "none":
            raise ConfigError("the no-ris scheme has no phases to optimize")
        if self.channel not in ("geometry", "rayleigh"):
            raise ConfigError(f"unknown channel model {self.channel!r}")
        if self.bmp_stop_rule not in ("relative", "absolute"):
            raise ConfigError(f"unknown stop rule {self.bmp_stop_rule!r}")
        get_constellation(self.constellation)
        return self

    def with_value(self, var, value):
        """Copy with the swept variable set; keeps N = B*L consistent."""
        if var == "P":
            return dataclasses.replace(self, P_dbw=float(value))
        if var == "M":
            return dataclasses.replace(self, M=int(value))
        if var == "N":
            return dataclasses.replace(self, N=int(value), B=int(value) // self.L)
        if var == "B":
            return dataclasses.replace(self, B=int(value), N=int(value) * self.L)
        if var == "K":
            return dataclasses.replace(self, K=int(value))
        raise ConfigError(f"cannot sweep {var!r}")


def _convert(text, kind):
    text = text.strip()
    if kind is tuple:
        return tuple(v.strip() for v in text.split(",") if v.strip())
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def parse_overrides(pairs, base=None):
    """Apply ``key=value`` strings to a config (unknown keys are errors)."""
    base = base or ExperimentConfig()
    hints = get_type_hints(ExperimentConfig)
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        key = key.strip()
        if key not in hints:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            updates[key] = _convert(value, hints[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    if ("N" in updates or "L" in updates) and "B" not in updates:
        updates["B"] = 0
    merged = dataclasses.replace(base, **updates)
    if merged.B == 0:
        merged = dataclasses.replace(merged, B=merged.N // max(merged.L, 1))
    return merged


def load_config(path, overrides=(), base=None):
    """Read a flat ``key = value`` file (``#`` starts a comment)."""
    pairs = []
    if path:
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if line:
                    pairs.append(line)
    return parse_overrides([*pairs, *overrides], base)


def _sweep_values(cfg, experiment):
    values = cfg.sweep_values
    if values:
        return cfg.sweep_var, [float(v) for v in values]
    defaults = {"P": [cfg.P_dbw], "M": [cfg.M], "N": [cfg.N], "B": [cfg.B], "K": [cfg.K]}
    return cfg.sweep_var, defaults.get(cfg.sweep_var, [0.0])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.12g" % v
    return str(v)


def write_rows(rows, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])


def rows_to_csv(rows):
    buf = io.StringIO()
    write_rows(rows, buf)
    return buf.getvalue()


def draw_realization(cfg, rng):
    if cfg.channel == "rayleigh":
        return rayleigh_realization(cfg.M, cfg.K, cfg.N, rng)
    frac = float(rng.uniform()) if cfg.ris_x_fraction < 0 else cfg.ris_x_fraction
    geometry = GeometryConfig.for_elements(cfg.N, ris_x_fraction=frac)
    return gen_channel_realization(geometry, SystemConfig(cfg.M, cfg.K, cfg.N), rng)


def _optimize(method, ch, cfg, theta0, scheme, trace=False):
    if method == "none" or scheme == "no-ris":
        return theta0, None
    fn = ao_optimize if method == "ao" else rao_optimize
    kwargs = {} if method == "ao" else {"track_rate": trace}
    res = fn(ch, cfg.power, cfg.sigma2, outer_iters=cfg.outer_iters, scheme=scheme,
             theta0=theta0, mm_iters=cfg.mm_iters, **kwargs)
    return res.theta, res


def _trial_streams(cfg, trial, sweep_index, sweep_var):
    # channels stay common across a power sweep so the curves are paired
    key = [cfg.seed, trial] if sweep_var == "P" else [cfg.seed, trial, sweep_index]
    return np.random.default_rng(key)


# --------------------------------------------------------------------------
# Per-trial workers (module level so they pickle)
# --------------------------------------------------------------------------

def _trial_convergence(cfg, trial):
    rng = np.random.default_rng([cfg.seed, trial])
    ch = draw_realization(cfg, rng)
    theta0 = random_phases(cfg.N, rng)
    rows = []
    for method in cfg.optimizers:
        _, res = _optimize(method, ch, cfg, theta0, cfg.scheme, trace=True)
        for it, (f, r) in enumerate(zip(res.surrogate, res.sum_rate)):
            rows.append(("convergence", cfg.seed, trial, "iteration", it, f"{method}_surrogate", f))
            rows.append(("convergence", cfg.seed, trial, "iteration", it, f"{method}_sum_rate", r))
    return rows


def _trial_rate_region(cfg, trial):
    rng = np.random.default_rng([cfg.seed, trial])
    ch = draw_realization(cfg, rng)
    theta0 = random_phases(cfg.N, rng)
    rows = []
    for scheme in ("frm", "orm"):
        for mode in ("random", "optimized"):
            method = "none" if mode == "random" else (cfg.optimizer if cfg.optimizer != "none" else "rao")
            theta, _ = _optimize(method, ch, cfg, theta0, scheme)
            sub = np.random.default_rng([cfg.seed, trial, 1 + SCHEMES.index(scheme), mode == "optimized"])
            user = conditional_rate_user(theta, ch, cfg.power, cfg.sigma2, cfg.n_samples, sub,
                                         n_blocks=cfg.B, scheme=scheme)
            ris = conditional_rate_ris(theta, ch, cfg.power, cfg.sigma2, cfg.n_samples, sub,
                                       n_blocks=cfg.B, n_noise=cfg.n_noise,
                                       constellation=cfg.constellation, scheme=scheme)
            total = sum_rate(theta, ch, cfg.power, cfg.sigma2, scheme)
            for name, v in (("ris_rate", ris), ("user_rate", user), ("sum_rate", total)):
                rows.append(("rate-region", cfg.seed, trial, "P", cfg.P_dbw, f"{scheme}_{mode}_{name}", v))
    return rows


def _trial_rate_sweep(cfg, trial):
    var, values = _sweep_values(cfg, "rate-sweep")
    rows = []
    for idx, val in enumerate(values):
        c = cfg.with_value(var, val)
        rng = _trial_streams(cfg, trial, idx, var)
        ch = draw_realization(c, rng)
        theta0 = random_phases(c.N, rng)
        for scheme in c.schemes:
            theta, _ = _optimize(c.optimizer, ch, c, theta0, scheme)
            r = sum_rate(theta, ch, c.power, c.sigma2, scheme)
            rows.append(("rate-sweep", cfg.seed, trial, var, val, f"{scheme}_sum_rate", r))
    return rows


def _bit_errors(const, idx_hat, idx_true):
    return int(np.sum(const.labels[idx_hat] != const.labels[idx_true]))


def _trial_ber_sweep(cfg, trial):
    var, values = _sweep_values(cfg, "ber-sweep")
    const = get_constellation(cfg.constellation)
    rows = []
    for idx, val in enumerate(values):
        c = cfg.with_value(var, val)
        bmp_cfg = BmpConfig(max_iter=c.bmp_max_iter, tol=c.bmp_tol, stop_rule=c.bmp_stop_rule,
                            gamp=GampConfig(iters=c.gamp_iters, damping=c.gamp_damping))
        rng = _trial_streams(cfg, trial, idx, var)
        ch = draw_realization(c, rng)
        theta0 = random_phases(c.N, rng)
        thetas = {}
        for variant in c.variants:
            scheme, mode = variant.split("-", 1)
            if scheme not in ("frm", "orm") or mode not in ("random", "opt"):
                raise ConfigError(f"unknown variant {variant!r}")
            method = "none" if mode == "random" else c.optimizer
            thetas[variant] = _optimize(method, ch, c, theta0, scheme)[0]
        frames = np.random.default_rng([cfg.seed, trial, idx, 7])
        errs = {v: np.zeros(5) for v in c.variants}
        for _ in range(c.frames):
            xi = frames.integers(0, const.order, size=c.K - 1)
            bits = frames.integers(0, 2, size=c.B)
            noise_seed = frames.integers(2 ** 63)
            x = const.scaled(c.power)[xi]
            s = group_expand(bits, c.L)
            for variant in c.variants:
                scheme = variant.split("-", 1)[0]
                theta = thetas[variant]
                y = simulate_rx(x, s, theta, ch, c.sigma2, np.random.default_rng(noise_seed), scheme)
                res = bmp_detect(y, theta, ch, c.sigma2, c.power, c.L, const, bmp_cfg, scheme)
                e = errs[variant]
                e[0] += _bit_errors(const, res.x_index, xi)
                e[1] += np.sum(res.c_bits != bits)
                e[2] += res.iterations
                if scheme == "frm":
                    gx = bmp_detect(y, theta, ch, c.sigma2, c.power, c.L, const, bmp_cfg, scheme, genie_c=bits)
                    gc = bmp_detect(y, theta, ch, c.sigma2, c.power, c.L, const, bmp_cfg, scheme, genie_x=xi)
                    e[3] += _bit_errors(const, gx.x_index, xi)
                    e[4] += np.sum(gc.c_bits != bits)
        nbx = c.frames * (c.K - 1) * const.bits_per_symbol
        nbc = c.frames * c.B
        for variant, e in errs.items():
            metrics = [("ber_x", e[0] / nbx), ("ber_c", e[1] / nbc), ("iterations", e[2] / c.frames)]
            if variant.startswith("frm"):
                metrics += [("lb_ber_x", e[3] / nbx), ("lb_ber_c", e[4] / nbc)]
            for name, v in metrics:
                rows.append(("ber-sweep", cfg.seed, trial, var, val, f"{variant}_{name}", float(v)))
    return rows


_WORKERS = {
    "convergence": _trial_convergence,
    "rate-region": _trial_rate_region,
    "rate-sweep": _trial_rate_sweep,
    "ber-sweep": _trial_ber_sweep,
}


def _worker_count():
    raw = os.environ.get("FRMOFDM_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        log.warning("ignoring FRMOFDM_THREADS=%r", raw)
        return 1


def _run_trials(experiment, cfg):
    fn = _WORKERS[experiment]
    workers = min(_worker_count(), cfg.trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(fn, [cfg] * cfg.trials, range(cfg.trials)))
    else:
        chunks = [fn(cfg, t) for t in range(cfg.trials)]
    return [row for chunk in chunks for row in chunk]


def aggregate(rows):
    """Mean of every (experiment, sweep_var, sweep_val, metric) over trials."""
    groups = {}
    for exp, seed, trial, var, val, metric, value in rows:
        groups.setdefault((exp, seed, var, val, metric), []).append(value)
    return [(exp, seed, -1, var, val, f"mean_{metric}", float(np.mean(v)))
            for (exp, seed, var, val, metric), v in groups.items()]


def _region_corners(means):
    """MAC pentagon corners ``(R_s, R_x)`` for each scheme/mode from the mean rates."""
    if not means:
        return []
    exp, seed, _, var, val = means[0][:5]
    table = {row[5]: row[6] for row in means}
    out = []
    for scheme in ("frm", "orm"):
        for mode in ("random", "optimized"):
            key = f"{scheme}_{mode}"
            try:
                ris = table[f"mean_{key}_ris_rate"]
                user = table[f"mean_{key}_user_rate"]
                total = table[f"mean_{key}_sum_rate"]
            except KeyError:
                continue
            # the Gaussian sum rate caps the pentagon; clip so corners stay ordered
            total = min(total, ris + user)
            corners = [(0.0, user), (max(total - user, 0.0), user),
                       (ris, max(total - ris, 0.0)), (ris, 0.0)]
            for j, (rs, rx) in enumerate(corners):
                out.append((exp, seed, -1, "corner", j, f"{key}_corner_ris", rs))
                out.append((exp, seed, -1, "corner", j, f"{key}_corner_user", rx))
    return out


def run_experiment(experiment, cfg):
    """Rows for one experiment: per-trial rows then aggregate rows."""
    if experiment not in _WORKERS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    cfg.validate()
    if experiment == "convergence" and any(o == "none" for o in cfg.optimizers):
        raise ConfigError("convergence needs optimizers from {ao, rao}")
    if experiment == "rate-region" and cfg.B > 12:
        raise ConfigError(f"B={cfg.B} is too large for the mixture estimator (max 12)")
    rows = _run_trials(experiment, cfg)
    means = aggregate(rows)
    extra = _region_corners(means) if experiment == "rate-region" else []
    return rows + means + extra


def run_convergence(cfg):
    return run_experiment("convergence", cfg)


def run_rate_region(cfg):
    return run_experiment("rate-region", cfg)


def run_rate_sweep(cfg):
    return run_experiment("rate-sweep", cfg)


def run_ber_sweep(cfg):
    return run_experiment("ber-sweep", cfg)
