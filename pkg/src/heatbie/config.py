"""Run configuration: a flat key-value text format with repeated curve lines.

Example::

    mode = modhelm
    L = 1.5
    n_u = 128 181 256
    n_eval = 500
    R = 0.4
    epsilon = 2.0
    alpha2 = 10
    solution = trig-gauss
    seed = 7
    curve = circle cx=0.0242510699 cy=0.0113895216 r=1.0 panels=32

Lists are whitespace separated.  The first curve is the outer boundary
(counterclockwise); later curves are cavities (clockwise).
"""

from dataclasses import dataclass, field
from typing import Optional

from .exceptions import ConfigError
from .timestep import builtin_tableaus

MODES = ("modhelm", "modhelm-analytic-ext", "heat", "allen-cahn")


@dataclass
class RunConfig:
    mode: str = "modhelm"
    box_half_length: float = 1.5
    n_u_list: list = field(default_factory=lambda: [128])
    n_eval: int = 0                      # 0 -> match n_u
    partition_radius: float = 0.4
    epsilon: float = 2.0
    regularity_list: list = field(default_factory=lambda: [None])  # None=auto
    alpha2_list: list = field(default_factory=lambda: [10.0])
    solution: str = "trig-gauss"
    tableau: str = "IMEXRK34"
    tol_list: list = field(default_factory=lambda: [1e-6])
    reference_tol: Optional[float] = None
    t_start: float = 0.0
    t_end: float = 1.0
    dt_initial: float = 1e-3
    diffusion: float = 1.0
    seed: int = 0
    threads: int = 1
    out_dir: Optional[str] = None
    pad_threshold: float = 5.0
    c_split: Optional[float] = None      # None -> solver default
    gmres_tol: float = 1e-12
    gmres_max_iter: int = 200
    snapshot_times: tuple = ()
    curves: list = field(default_factory=list)

    @property
    def regularity_fixed(self):
        """Single regularity for evolution modes (None = auto)."""
        return self.regularity_list[0]

    def tableau_obj(self):
        tabs = builtin_tableaus()
        if self.tableau not in tabs:
            raise ConfigError(f"unknown tableau {self.tableau!r}; choose from "
                              f"{sorted(tabs)}")
        return tabs[self.tableau]

    def tableau_order(self):
        return self.tableau_obj().order

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.curves:
            raise ConfigError("at least one curve line is required")
        for name, val in (("L", self.box_half_length),
                          ("R", self.partition_radius),
                          ("epsilon", self.epsilon),
                          ("diffusion", self.diffusion),
                          ("dt0", self.dt_initial)):
            if not val > 0.0:
                raise ConfigError(f"{name} must be positive, got {val}")
        if any(n < 2 or n % 2 for n in self.n_u_list):
            raise ConfigError("n_u values must be even and >= 2")
        if any(a <= 0 for a in self.alpha2_list):
            raise ConfigError("alpha2 values must be positive")
        if any(t <= 0 for t in self.tol_list):
            raise ConfigError("tolerances must be positive")
        for k in self.regularity_list:
            if k is not None and not 1 <= int(k) <= 5:
                raise ConfigError(f"regularity must be 1..5 or auto, got {k}")
        if self.mode in ("heat", "allen-cahn") and self.t_end <= self.t_start:
            raise ConfigError("t_end must exceed t0")
        if self.n_eval == 0:
            self.n_eval = self.n_u_list[0]
        if self.mode in FIELD_MODES and self.solution not in ("trig-gauss",
                                                              "cos20r"):
            raise ConfigError(f"unknown manufactured solution "
                              f"{self.solution!r}")
        return self


FIELD_MODES = ("modhelm", "modhelm-analytic-ext")

_KEY_MAP = {
    "mode": ("mode", str),
    "L": ("box_half_length", float),
    "n_eval": ("n_eval", int),
    "R": ("partition_radius", float),
    "epsilon": ("epsilon", float),
    "solution": ("solution", str),
    "tableau": ("tableau", str),
    "t0": ("t_start", float),
    "t_end": ("t_end", float),
    "dt0": ("dt_initial", float),
    "diffusion": ("diffusion", float),
    "seed": ("seed", int),
    "threads": ("threads", int),
    "out": ("out_dir", str),
    "pad_threshold": ("pad_threshold", float),
    "c_split": ("c_split", float),
    "gmres_tol": ("gmres_tol", float),
    "gmres_max_iter": ("gmres_max_iter", int),
    "reference_tol": ("reference_tol", float),
}

_LIST_KEYS = {
    "n_u": ("n_u_list", int),
    "alpha2": ("alpha2_list", float),
    "tol": ("tol_list", float),
    "snapshot_times": ("snapshot_times", float),
}


def _parse_curve(rest):
    parts = rest.split()
    if not parts:
        raise ConfigError("empty curve specification")
    spec = {"kind": parts[0]}
    for item in parts[1:]:
        if item == "cavity":
            continue
        if "=" not in item:
            raise ConfigError(f"malformed curve attribute {item!r}")
        key, val = item.split("=", 1)
        spec[key] = int(val) if key in ("panels", "arms") else float(val)
    if "panels" not in spec:
        raise ConfigError("every curve needs panels=<count>")
    return spec


def parse_config_text(text):
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got "
                              f"{raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "curve":
            cfg.curves.append(_parse_curve(value))
        elif key == "regularity":
            cfg.regularity_list = [None if v in ("auto", "none") else int(v)
                                   for v in value.split()]
        elif key in _LIST_KEYS:
            attr, conv = _LIST_KEYS[key]
            vals = [conv(v) for v in value.split()]
            setattr(cfg, attr, tuple(vals) if attr == "snapshot_times"
                    else vals)
        elif key in _KEY_MAP:
            attr, conv = _KEY_MAP[key]
            try:
                setattr(cfg, attr, conv(value))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: "
                                  f"{value!r}") from exc
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return cfg.validate()


def load_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())
