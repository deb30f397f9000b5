"""Run configuration: a sectioned key=value file, validated before any computation."""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigurationError, InvalidParameter, ResolutionError

# keys excluded from the hash: they change where and how fast, not what is computed
UNHASHED = ("out", "jobs")


def _num(text: str) -> float:
    """Accepts plain numbers, 'inf' and powers written as 2^k."""
    t = text.strip().replace(" ", "")
    if "^" in t:
        base, exp = t.split("^", 1)
        return float(base) ** float(exp)
    return float(t)


def _ints(text: str) -> tuple[int, ...]:
    t = text.strip()
    if not t:
        return ()
    if ".." in t:
        a, b = t.split("..", 1)
        return tuple(range(int(a), int(b) + 1))
    return tuple(int(v) for v in t.replace(",", " ").split())


@dataclass(frozen=True)
class RunConfig:
    # [basis]
    kappa: int = 2
    eta: float = 2.0 ** -6
    # [norms]
    q: float = 4.0
    delta: float = 0.5
    s_range: tuple = (2, 3, 4)
    h_xi: float = 0.25
    xi_cap: float = 2.0 ** 8
    nu: float = 0.125
    family_signs: int = 64
    family_phases: int = 64
    family_knapp: int = 4
    hill_climb: int = 200
    trilinear_family: int = 0            # 0: the whole family
    max_square_triples: int = 0          # 0: every nu-disjoint triple
    trilinear_max_s: int = 0             # 0: trilinear estimate at every s
    census_max_s: int = 0                # 0: census at every s
    tail_factor: float = 2.0
    grid_translates: int = 0             # extra random grid translates for the P sensitivity
    precision: str = "double"
    # [pigeonhole]
    lam: int = 3
    alpha: float = 2.0
    sep_const: float = 4.0
    c: float = 1.0
    mode: str = "desk"
    # [verify]
    verify_samples: int = 20
    # [run]
    seed: int = 0
    jobs: int = 1
    out: str = "out"

    SECTIONS = {
        "basis": ("kappa", "eta"),
        "norms": ("q", "delta", "s_range", "h_xi", "xi_cap", "nu", "family_signs",
                  "family_phases", "family_knapp", "hill_climb", "trilinear_family",
                  "max_square_triples", "trilinear_max_s", "census_max_s", "tail_factor",
                  "grid_translates", "precision"),
        "pigeonhole": ("lambda", "alpha", "sep_const", "c", "mode"),
        "verify": ("verify_samples",),
        "run": ("seed", "jobs", "out"),
    }

    def validate(self) -> "RunConfig":
        if not isinstance(self.kappa, int) or self.kappa < 1:
            raise InvalidParameter(
                f"kappa = {self.kappa}: build_unit_alpert_basis requires kappa >= 1")
        if self.eta < 0:
            raise InvalidParameter(f"eta = {self.eta}: the smoothing parameter must be >= 0")
        if not self.q > 3:
            raise InvalidParameter(f"q = {self.q}: exponents must exceed 3")
        if not 0 < self.delta < 1:
            raise InvalidParameter(f"delta = {self.delta}: must lie in (0, 1)")
        if self.h_xi > 0.25 or self.h_xi <= 0:
            raise ResolutionError(f"h_xi = {self.h_xi}: lattice spacing must lie in (0, 1/4]")
        if any(s < 1 for s in self.s_range):
            raise InvalidParameter("s_range entries must be >= 1 (U has scale 1)")
        for s in self.s_range:
            R = 2.0 ** (s / (1 - self.delta))
            if R > self.xi_cap * (1 + 1e-12):
                raise ResolutionError(f"s = {s}: ball radius 2^(s/(1-delta)) = {R:g} exceeds "
                                      f"xi_cap = {self.xi_cap:g}")
        if self.precision not in ("single", "double"):
            raise InvalidParameter("precision must be 'single' or 'double'")
        if self.mode not in ("desk", "paper-strict"):
            raise InvalidParameter("mode must be 'desk' or 'paper-strict'")
        if self.jobs < 1:
            raise InvalidParameter("jobs must be >= 1")
        if min(self.family_signs, self.family_phases, self.family_knapp, self.hill_climb,
               self.trilinear_family, self.max_square_triples, self.trilinear_max_s,
               self.census_max_s, self.verify_samples, self.grid_translates) < 0:
            raise InvalidParameter("family sizes, limits and sample counts must be >= 0")
        if self.tail_factor < 1:
            raise InvalidParameter("tail_factor must be >= 1")
        return self

    @property
    def S_max(self) -> int:
        return max(self.s_range) if self.s_range else 1

    def hashed(self) -> dict:
        d = asdict(self)
        for k in UNHASHED:
            d.pop(k)
        d["s_range"] = list(d["s_range"])
        return d

    def hash(self) -> str:
        payload = json.dumps(self.hashed(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["s_range"] = list(d["s_range"])
        return d

    def to_text(self) -> str:
        lines = []
        for sec, keys in self.SECTIONS.items():
            lines.append(f"[{sec}]")
            for k in keys:
                v = getattr(self, "lam" if k == "lambda" else k)
                if isinstance(v, tuple):
                    v = ",".join(str(x) for x in v)
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    name = "lam" if key == "lambda" else key
    if name not in _TYPES:
        raise ConfigurationError(f"unknown configuration key {key!r}")
    default = getattr(RunConfig, name)
    if isinstance(default, tuple):
        return name, _ints(raw)
    if isinstance(default, bool):
        return name, raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        v = _num(raw)
        if v != int(v):
            raise ConfigurationError(f"{key} must be an integer, got {raw!r}")
        return name, int(v)
    if isinstance(default, float):
        return name, _num(raw)
    return name, raw.strip()


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from exc
    kw = {}
    for sec in cp.sections():
        if sec not in RunConfig.SECTIONS:
            raise ConfigurationError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in RunConfig.SECTIONS[sec]:
                raise ConfigurationError(f"key {key!r} does not belong in [{sec}]")
            try:
                name, val = _convert(key, raw)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
            kw[name] = val
    return replace(base or RunConfig(), **kw)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"configuration file {p} not found")
    return parse_config(p.read_text())

