"""Run configuration, dataset files and the draw cache."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .likelihood import CACHE_VERSION, ContributionDraws, ObservationSeries
from .model import CoupledModel, HaploidModel, MutationRates, ParameterDomain


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str = "haploid"
    theta_a: float = 0.02
    theta_A: float = 0.02
    loci: int = 1
    interactions: bool = False
    theta: list = field(default_factory=lambda: [0.7])
    s: list | None = None
    h: list | None = None
    theta_min: list = field(default_factory=lambda: [-1.0])
    theta_max: list = field(default_factory=lambda: [1.0])
    n: int = 100
    dt: float = 1.0
    x0: list = field(default_factory=lambda: [0.5])
    N: int = 100
    seed: int = 1
    t_min: float = 0.05
    eps: float = 1e-12
    approx_small_t: bool = False
    bridge_small_gap: str = "approx"
    xtol: float = 1e-6
    max_eval: int = 0
    B: int = 50
    bootstrap_unit: str = "samples"

    def validate(self) -> "RunConfig":
        if self.model not in ("haploid", "coupled"):
            raise ConfigError(f"model: expected 'haploid' or 'coupled', got {self.model!r}")
        try:
            self.mutation()
        except ValueError as e:
            raise ConfigError(f"theta_a/theta_A: {e}") from None
        if self.model == "haploid" and self.loci != 1:
            raise ConfigError("loci: the haploid model has one locus")
        if self.loci < 1:
            raise ConfigError("loci: must be at least 1")
        m = self.build_model()
        if self.model == "coupled" and self.s is not None:
            try:
                m.parameters_from(self.s, self.h)
            except ValueError as e:
                raise ConfigError(f"s/h: {e}") from None
        if len(self.theta_min) != m.dim or len(self.theta_max) != m.dim:
            raise ConfigError(f"theta_min/theta_max: need {m.dim} values each")
        try:
            self.domain()
        except ValueError as e:
            raise ConfigError(f"theta_min/theta_max: {e}") from None
        if len(self.x0) != m.n_loci or not all(0.0 < v < 1.0 for v in self.x0):
            raise ConfigError(f"x0: need {m.n_loci} values strictly inside (0, 1)")
        for name in ("n", "N", "B"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be positive")
        for name in ("dt", "t_min", "eps", "xtol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive")
        if self.bridge_small_gap not in ("approx", "strict"):
            raise ConfigError("bridge_small_gap: expected 'approx' or 'strict'")
        if self.bootstrap_unit not in ("samples", "observations"):
            raise ConfigError("bootstrap_unit: expected 'samples' or 'observations'")
        return self

    def mutation(self) -> MutationRates:
        return MutationRates(float(self.theta_a), float(self.theta_A))

    def build_model(self):
        if self.model == "haploid":
            return HaploidModel(self.mutation())
        return CoupledModel(self.loci, self.mutation(), interactions=self.interactions)

    def domain(self) -> ParameterDomain:
        return ParameterDomain(tuple(self.theta_min), tuple(self.theta_max))

    def true_parameter(self) -> np.ndarray:
        m = self.build_model()
        if self.model == "coupled" and self.s is not None:
            return m.parameters_from(self.s, self.h)
        th = np.asarray(self.theta, dtype=float)
        if th.size != m.dim:
            raise ConfigError(f"theta: need {m.dim} values")
        return th

    def draw_options(self) -> dict:
        return {"t_min": self.t_min, "eps": self.eps, "small_gap": self.bridge_small_gap,
                "approx_small_t": self.approx_small_t}

    def echo(self) -> dict:
        return asdict(self)


_LISTS = {"theta", "theta_min", "theta_max", "x0"}


def _parse_value(name: str, text: str, kind):
    text = text.strip()
    try:
        if name in ("s", "h"):
            return json.loads(text)
        if name in _LISTS:
            if text.startswith("["):
                vals = json.loads(text)
            else:
                vals = [float(v) for v in text.split(",") if v.strip()]
            return [float(v) for v in vals]
        if kind is bool or kind == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        return text.strip('"').strip("'")
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None


def load_config(path: str | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Read a flat ``key = value`` file, then apply ``key=value`` overrides and WF_SEED."""
    cfg = RunConfig()
    kinds = {f.name: f.type for f in fields(RunConfig)}
    items = []
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        for lineno, line in enumerate(lines, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            items.append((k.strip(), v, f"{path}:{lineno}"))
    for o in overrides or []:
        if "=" not in o:
            raise ConfigError(f"override {o!r}: expected key=value")
        k, v = o.split("=", 1)
        items.append((k.strip(), v, "command line"))
    if os.environ.get("WF_SEED"):
        items.append(("seed", os.environ["WF_SEED"], "WF_SEED"))
    for k, v, where in items:
        if k not in kinds:
            raise ConfigError(f"{where}: unknown key {k!r}")
        try:
            setattr(cfg, k, _parse_value(k, v, kinds[k]))
        except ConfigError as e:
            raise ConfigError(f"{where}: {e}") from None
    return cfg.validate()


def provenance(cfg: RunConfig, command: str) -> dict:
    return {"tool": "wfmle", "version": __version__, "command": command, "config": cfg.echo()}


def write_series(path: str, series: ObservationSeries, header: dict | None = None) -> None:
    L = series.n_loci
    lines = []
    if header is not None:
        lines.append("# " + json.dumps(header, sort_keys=True))
    lines.append(",".join(["time"] + [f"x{k + 1}" for k in range(L)]))
    for t, row in zip(series.times, series.values):
        lines.append(",".join([repr(float(t))] + [repr(float(v)) for v in row]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_series(path: str) -> ObservationSeries:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise DataError(f"cannot read data {path}: {e}") from None
    rows, header = [], None
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if header is None:
            if parts[0] != "time" or len(parts) < 2:
                raise DataError(f"{path}:{lineno}: expected header 'time,x1[,x2,...]'")
            header = parts
            continue
        if len(parts) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value") from None
        if not all(0.0 < v < 1.0 for v in vals[1:]):
            raise DataError(f"{path}:{lineno}: observation on or outside the boundary {vals[1:]}; "
                            f"states must lie strictly inside (0, 1)")
        rows.append((lineno, vals))
    if header is None or len(rows) < 2:
        raise DataError(f"{path}: need a header and at least two rows")
    arr = np.array([v for _, v in rows])
    if arr[0, 0] != 0.0:
        raise DataError(f"{path}:{rows[0][0]}: first time must be 0")
    for (lineno, _), d in zip(rows[1:], np.diff(arr[:, 0])):
        if d <= 0:
            raise DataError(f"{path}:{lineno}: times must increase strictly")
    return ObservationSeries(arr[:, 0], arr[:, 1:])


def cache_header(cfg: RunConfig, rho: float, L: int) -> dict:
    return {"version": CACHE_VERSION, "seed": cfg.seed, "N": cfg.N, "rho": rho,
            "theta_a": cfg.theta_a, "theta_A": cfg.theta_A, "L": L,
            "t_min": cfg.t_min, "eps": cfg.eps, "bridge_small_gap": cfg.bridge_small_gap,
            "approx_small_t": cfg.approx_small_t}


def save_draws(path: str, header: dict, draws: list[ContributionDraws]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"header": header, "contributions": [d.to_dict() for d in draws]}, fh)


def load_draws(path: str, header: dict, series: ObservationSeries, mutation: MutationRates):
    """Cached draws if the file matches the header and the data, else None."""
    try:
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
    except (OSError, ValueError):
        return None
    if blob.get("header") != header:
        return None
    draws = [ContributionDraws.from_dict(d, mutation) for d in blob["contributions"]]
    if len(draws) != series.n:
        return None
    for d, (x, y, t) in zip(draws, series.increments()):
        if not (np.array_equal(d.x, x) and np.array_equal(d.y, y) and d.t == t):
            return None
    return draws
