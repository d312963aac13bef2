"""Run configuration: strict JSON loading and validation.

Every field is checked before any computation starts.  Errors are
:class:`ConfigError` instances naming the offending field.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .metric import SQRT2
from .scattering import S5_SETTINGS, QuadratureSpec, ScatteringProfile
from ._radial import PROFILE_IDS

SUBCOMMANDS = ("verify", "integrals", "energy", "oracle", "sweep")
DEFAULT_SWEEP = (10 ** -3.5, 10 ** -3.875, 10 ** -4.25, 10 ** -4.625, 10 ** -5.0)


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class VerifySettings:
    samples: int = 1_000_000
    configurations: int = 10_000
    max_n: int = 20


@dataclass(frozen=True)
class OracleSettings:
    points: int = 1 << 16
    randomizations: int = 16
    box_over_ell_tilde: float = 8.0
    mc_sweeps: int = 2_000_000


@dataclass(frozen=True)
class SweepSettings:
    rho_a3: tuple = DEFAULT_SWEEP


@dataclass(frozen=True)
class RunConfig:
    subcommand: str | None = None
    a: float = 1.0
    rho_a3: float | None = None
    N: int | None = None
    L: float | None = None
    ell: float | None = None
    ell_rule: bool = False
    profile: str = "smooth"
    boundary: str = "open"
    sweeps: int | None = None
    burn_in: int | None = None
    step: float | None = None
    chains: int = 1
    thin: int = 1
    seed: int = 0
    s5: str = "standard"
    estimator: str = "auto"
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    verify: VerifySettings = field(default_factory=VerifySettings)
    oracle: OracleSettings = field(default_factory=OracleSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    initial_positions: str | None = None
    out: str = "out"

    # ------------------------------------------------------------ derived

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def length(self) -> float | None:
        if self.L is not None:
            return self.L
        if self.rho_a3 is not None and self.N is not None:
            return (self.N * self.a ** 3 / self.rho_a3) ** (1.0 / 3.0)
        return None

    @property
    def density(self) -> float | None:
        L = self.length
        return None if L is None or self.N is None else self.N / L ** 3

    @property
    def ell_value(self) -> float | None:
        if self.ell is not None:
            return self.ell
        if self.ell_rule and self.rho_a3 is not None:
            return self.a * self.rho_a3 ** (-1.0 / 7.0)
        return None

    def profile_object(self) -> ScatteringProfile:
        return ScatteringProfile(self.a, self.ell_value, self.profile)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sweep"]["rho_a3"] = list(d["sweep"]["rho_a3"])
        return d

    def config_hash(self) -> str:
        """SHA-256 over every field that can change results (not ``out``)."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    # ------------------------------------------------------------ checks

    def validate(self, subcommand: str | None = None) -> "RunConfig":
        sub = subcommand or self.subcommand
        if sub not in SUBCOMMANDS:
            raise ConfigError("subcommand", f"must be one of {SUBCOMMANDS}, got {sub!r}")
        if self.subcommand is not None and subcommand and self.subcommand != subcommand:
            raise ConfigError("subcommand",
                              f"config says {self.subcommand!r}, command line {subcommand!r}")
        _positive("a", self.a, allow_zero=True)
        if self.profile not in PROFILE_IDS:
            raise ConfigError("profile", f"unknown profile {self.profile!r}")
        if self.boundary not in ("open", "periodic"):
            raise ConfigError("boundary", "must be 'open' or 'periodic'")
        if self.s5 not in S5_SETTINGS:
            raise ConfigError("s5", f"must be one of {tuple(S5_SETTINGS)}")
        if self.estimator not in ("auto", "gradient", "laplacian"):
            raise ConfigError("estimator", "must be 'auto', 'gradient' or 'laplacian'")
        if self.estimator == "laplacian" and not self.periodic:
            raise ConfigError("estimator", "the Laplacian form needs a periodic box")
        if self.ell is not None and self.ell_rule:
            raise ConfigError("ell", "give either ell or ell_rule, not both")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        for name in ("chains", "thin"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.rho_a3 is not None:
            _positive("rho_a3", self.rho_a3)
        if self.N is not None and self.N < 0:
            raise ConfigError("N", "must be >= 0")
        if self.L is not None:
            _positive("L", self.L)
        if self.rho_a3 is not None and self.L is not None:
            raise ConfigError("L", "give either rho_a3 or L, not both")
        if sub == "sweep":
            self._validate_sweep()
            return self
        if sub in ("energy", "oracle"):
            self._validate_system(sub)
        elif self.ell is None and not self.ell_rule:
            if sub in ("verify", "integrals"):
                return self  # defaults supplied at run time
        self._validate_ell()
        return self

    def _validate_ell(self):
        if self.ell_rule and self.rho_a3 is None:
            raise ConfigError("ell_rule", "needs rho_a3")
        ell = self.ell_value
        if ell is None:
            raise ConfigError("ell", "missing: give ell or ell_rule")
        _positive("ell", ell)
        L = self.length
        if self.a > 0 and not (self.a < ell and (L is None or ell < L)):
            raise ConfigError("ell", f"need ell in (a, L); got a={self.a}, ell={ell}, L={L}")
        if self.a > 0 and ell < 2 * SQRT2 * self.a:
            raise ConfigError("ell", f"ell={ell:.6g} < 2*sqrt(2)*a: cutoff overlaps the core")
        if self.periodic and L is not None and math.sqrt(1.5) * ell >= L / 2:
            raise ConfigError("L", f"periodic mode needs ell_tilde={math.sqrt(1.5) * ell:.6g}"
                                   f" < L/2={L / 2:.6g}")

    def _validate_system(self, sub):
        if self.N is None:
            raise ConfigError("N", "missing")
        if sub == "oracle":
            if not 3 <= self.N <= 4:
                raise ConfigError("N", "the oracle needs 3 <= N <= 4")
            if self.rho_a3 is not None:
                raise ConfigError("rho_a3", "the oracle box is set by oracle.box_over_ell_tilde")
            if self.ell_rule:
                raise ConfigError("ell_rule", "the oracle needs an explicit ell")
            _positive("oracle.box_over_ell_tilde", self.oracle.box_over_ell_tilde)
            if self.oracle.points < 1 or self.oracle.randomizations < 2:
                raise ConfigError("oracle", "need points >= 1 and randomizations >= 2")
            return
        if self.length is None:
            raise ConfigError("rho_a3", "missing: give rho_a3 or L")
        if self.sweeps is None:
            raise ConfigError("sweeps", "missing")
        self._validate_mc()

    def _validate_mc(self):
        if self.sweeps is None or self.sweeps < 1:
            raise ConfigError("sweeps", "must be >= 1")
        if self.burn_in is not None and not 0 <= self.burn_in < self.sweeps:
            raise ConfigError("burn_in", "need 0 <= burn_in < sweeps")
        if self.step is not None:
            _positive("step", self.step)

    def _validate_sweep(self):
        if self.ell is not None:
            raise ConfigError("ell", "a sweep always uses the ell rule")
        if self.N is None:
            raise ConfigError("N", "missing")
        if self.L is not None or self.rho_a3 is not None:
            raise ConfigError("rho_a3", "a sweep takes its densities from sweep.rho_a3")
        vals = list(self.sweep.rho_a3)
        if len(vals) < 4:
            raise ConfigError("sweep.rho_a3", "need at least four densities")
        self._validate_mc()
        for r in vals:
            _positive("sweep.rho_a3", r)
            point = RunConfig(a=self.a, rho_a3=r, N=self.N, ell_rule=True,
                              boundary=self.boundary, profile=self.profile)
            try:
                point._validate_ell()
            except ConfigError as exc:
                raise ConfigError("sweep.rho_a3", f"rho_a3={r:.6g}: {exc}") from None


def _positive(name, value, allow_zero=False):
    ok = isinstance(value, (int, float)) and math.isfinite(value) and (
        value >= 0 if allow_zero else value > 0)
    if not ok:
        raise ConfigError(name, f"must be {'>= 0' if allow_zero else 'positive'}, got {value!r}")


_NESTED = {"quadrature": QuadratureSpec, "verify": VerifySettings,
           "oracle": OracleSettings, "sweep": SweepSettings}
_TYPES = {"a": float, "rho_a3": float, "L": float, "ell": float, "step": float,
          "N": int, "sweeps": int, "burn_in": int, "chains": int, "thin": int,
          "seed": int, "ell_rule": bool, "subcommand": str, "profile": str,
          "boundary": str, "s5": str, "estimator": str, "out": str,
          "initial_positions": str}


def _coerce(name, value, kind):
    if value is None:
        return None
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(name, "must be true or false")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, "must be an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, "must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(name, "must be a string")
    return value


def _nested(name, cls, value):
    if not isinstance(value, dict):
        raise ConfigError(name, "must be an object")
    known = {f.name: f for f in fields(cls)}
    kw = {}
    for k, v in value.items():
        if k not in known:
            raise ConfigError(f"{name}.{k}", "unknown key")
        default = getattr(cls(), k)
        if isinstance(default, tuple):
            if not isinstance(v, list) or not v:
                raise ConfigError(f"{name}.{k}", "must be a non-empty list")
            kw[k] = tuple(_coerce(f"{name}.{k}", x, float) for x in v)
        elif isinstance(default, bool):
            kw[k] = _coerce(f"{name}.{k}", v, bool)
        elif isinstance(default, int):
            kw[k] = _coerce(f"{name}.{k}", v, int)
        else:
            kw[k] = _coerce(f"{name}.{k}", v, float)
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config", "top level must be a JSON object")
    kw = {}
    for k, v in d.items():
        if k in _NESTED:
            kw[k] = _nested(k, _NESTED[k], v)
        elif k in _TYPES:
            kw[k] = _coerce(k, v, _TYPES[k])
        else:
            raise ConfigError(k, "unknown key")
    return RunConfig(**kw)


def load_config(path, subcommand: str | None = None) -> RunConfig:
    """Read, parse and validate a JSON configuration file."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"malformed JSON: {exc}") from None
    return config_from_dict(raw).validate(subcommand)
