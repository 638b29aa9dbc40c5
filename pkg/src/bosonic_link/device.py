"""Device parameters and the JSON configuration file.

Config layout (one JSON object)::

    {
      "module1": {"label", "frequency" [GHz], "t1" [us], "t2_star" [us],
                  "n_th", "self_kerr" [MHz]},
      "module2": {...}, "bus": {...},
      "couplings": {"chi_transmon_cavity" [MHz, per module],
                    "chi_snail_cavity" [MHz, per module],
                    "g_snail_bus" [MHz, per module],
                    "bus_pure_dephasing_rate" [1/us]},
      "snail1": {"beta", "e_j" [GHz], "e_l" [GHz], "e_c" [MHz]}, "snail2": {...},
      "readout1": {"f_g", "f_e"}, "readout2": {...},
      "pumps": {"g_bs" [MHz], "ramp" [ns], "stark_coeff" [MHz]}     (optional)
    }

``t1``/``t2_star`` may be ``null`` for a lossless mode; ``t2_star: null`` means
no pure dephasing. All frequencies are ordinary (nu = omega / 2 pi).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError

BUNDLED_CONFIGS = ("paper_device", "lossless")

DEFAULT_BUS_DEPHASING_RATE = 1 / 38  # 1/us


@dataclass(frozen=True)
class ModeParams:
    frequency: float
    t1: float = math.inf
    t2_star: float | None = None
    n_th: float = 0.0
    self_kerr: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.t2_star is None:
            object.__setattr__(self, "t2_star", 2 * self.t1)

    def problems(self):
        out = []
        if not self.t1 > 0:
            out.append(("t1", f"must be > 0, got {self.t1}"))
        if not 0 <= self.n_th < 1:
            out.append(("n_th", f"must lie in [0, 1), got {self.n_th}"))
        if not self.t2_star > 0:
            out.append(("t2_star", f"must be > 0, got {self.t2_star}"))
        elif self.t2_star > 2 * self.t1 + 1e-9:
            out.append(("t2_star", f"{self.t2_star} exceeds 2*t1 = {2 * self.t1}"))
        return out

    @property
    def quality_factor(self):
        """2 pi f T1 (dimensionless)."""
        return 2 * math.pi * self.frequency * 1e3 * self.t1


@dataclass(frozen=True)
class CouplingParams:
    chi_transmon_cavity: tuple[float, float] = (0.0, 0.0)
    chi_snail_cavity: tuple[float, float] = (0.0, 0.0)
    g_snail_bus: tuple[float, float] = (0.0, 0.0)
    bus_pure_dephasing_rate: float | None = DEFAULT_BUS_DEPHASING_RATE

    def problems(self):
        out = []
        for name in ("chi_transmon_cavity", "chi_snail_cavity", "g_snail_bus"):
            vals = getattr(self, name)
            if len(vals) != 2:
                out.append((name, f"needs one value per module, got {len(vals)}"))
            for i, v in enumerate(vals):
                if abs(v) >= 1000:
                    out.append((f"{name}[{i}]", f"|{v}| MHz exceeds the 1 GHz sanity bound"))
        rate = self.bus_pure_dephasing_rate
        if rate is not None and rate < 0:
            out.append(("bus_pure_dephasing_rate", f"must be >= 0, got {rate}"))
        return out


@dataclass(frozen=True)
class SnailParams:
    beta: float
    e_j: float
    e_l: float
    e_c: float

    def problems(self):
        out = []
        if not 0 < self.beta < 1:
            out.append(("beta", f"must lie in (0, 1), got {self.beta}"))
        for name in ("e_j", "e_l", "e_c"):
            if not getattr(self, name) > 0:
                out.append((name, f"must be > 0, got {getattr(self, name)}"))
        return out


@dataclass(frozen=True)
class ReadoutParams:
    f_g: float = 1.0
    f_e: float = 1.0

    def problems(self):
        out = []
        for name in ("f_g", "f_e"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                out.append((name, f"must lie in (0, 1], got {v}"))
        if self.f_g + self.f_e <= 1:
            out.append(("f_e", "f_g + f_e must exceed 1 for an invertible confusion matrix"))
        return out


@dataclass(frozen=True)
class PumpDefaults:
    """Default pump settings used to build schedules for this device."""

    g_bs: float = 0.5  # MHz
    ramp: float = 50.0  # ns
    stark_coeff: float = 0.0  # MHz

    def problems(self):
        out = []
        if self.g_bs <= 0:
            out.append(("g_bs", f"must be > 0, got {self.g_bs}"))
        if self.ramp < 0:
            out.append(("ramp", f"must be >= 0, got {self.ramp}"))
        return out


@dataclass(frozen=True)
class DeviceConfig:
    module1: ModeParams
    module2: ModeParams
    bus: ModeParams
    couplings: CouplingParams = field(default_factory=CouplingParams)
    snail1: SnailParams | None = None
    snail2: SnailParams | None = None
    readout1: ReadoutParams = field(default_factory=ReadoutParams)
    readout2: ReadoutParams = field(default_factory=ReadoutParams)
    pumps: PumpDefaults = field(default_factory=PumpDefaults)

    def __post_init__(self):
        problems = []
        for name in ("module1", "module2", "bus", "couplings", "snail1", "snail2",
                     "readout1", "readout2", "pumps"):
            part = getattr(self, name)
            if part is None:
                continue
            problems += [(f"{name}.{p}", msg) for p, msg in part.problems()]
        if problems:
            path, msg = problems[0]
            extra = f" (+{len(problems) - 1} more)" if len(problems) > 1 else ""
            raise ConfigError(msg + extra, path)

    @property
    def modes(self):
        return (self.module1, self.module2, self.bus)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def with_self_kerr(self, kerr):
        """Copy with both cavities' self-Kerr set to ``kerr`` (MHz)."""
        return self.replace(
            module1=dataclasses.replace(self.module1, self_kerr=kerr),
            module2=dataclasses.replace(self.module2, self_kerr=kerr),
        )

    def with_stark(self, coeff):
        return self.replace(pumps=dataclasses.replace(self.pumps, stark_coeff=coeff))

    def to_dict(self):
        return config_to_dict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def pure_dephasing_rate(mode: ModeParams):
    """1/T_phi = 1/T2* - 1/(2 T1) in 1/us, clipped at zero."""
    rate = 1.0 / mode.t2_star - 1.0 / (2.0 * mode.t1)
    return max(rate, 0.0)


def bus_dephasing_rate(config: DeviceConfig):
    """Bus pure-dephasing rate, taking the lumped override when configured."""
    rate = config.couplings.bus_pure_dephasing_rate
    return pure_dephasing_rate(config.bus) if rate is None else rate


# ---- (de)serialization ------------------------------------------------------

_SECTIONS = {
    "module1": ModeParams,
    "module2": ModeParams,
    "bus": ModeParams,
    "couplings": CouplingParams,
    "snail1": SnailParams,
    "snail2": SnailParams,
    "readout1": ReadoutParams,
    "readout2": ReadoutParams,
    "pumps": PumpDefaults,
}
_REQUIRED_SECTIONS = ("module1", "module2", "bus")
_OPTIONAL_NULLS = {"t1", "t2_star", "bus_pure_dephasing_rate"}


def _number(value, path, allow_null=False):
    if value is None and allow_null:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    return float(value)


def _build_section(name, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", name)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)}", name)
    kwargs = {}
    for fname, f in fields.items():
        path = f"{name}.{fname}"
        if fname not in raw:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError("missing field", path)
            continue
        value = raw[fname]
        if fname == "label":
            kwargs[fname] = str(value)
        elif isinstance(f.default, tuple):
            if not isinstance(value, list):
                raise ConfigError("expected a list with one entry per module", path)
            kwargs[fname] = tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(value))
        else:
            num = _number(value, path, allow_null=fname in _OPTIONAL_NULLS)
            if num is None and fname == "t1":
                num = math.inf
            kwargs[fname] = num
    return cls(**kwargs)


def config_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")
    for name in _REQUIRED_SECTIONS:
        if name not in raw:
            raise ConfigError("missing section", name)
    parts = {}
    for name, cls in _SECTIONS.items():
        if name in raw and raw[name] is not None:
            part = _build_section(name, cls, raw[name])
            problems = part.problems()
            if problems:
                path, msg = problems[0]
                raise ConfigError(msg, f"{name}.{path}")
            parts[name] = part
    return DeviceConfig(**parts)


def _plain(value):
    if isinstance(value, float) and math.isinf(value):
        return None
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def config_to_dict(config: DeviceConfig):
    out = {}
    for name in _SECTIONS:
        part = getattr(config, name)
        if part is None:
            continue
        d = {k: _plain(v) for k, v in dataclasses.asdict(part).items()}
        if isinstance(part, ModeParams) and math.isinf(part.t1) and math.isinf(part.t2_star):
            d["t2_star"] = None
        out[name] = d
    return out


def bundled_config_path(name):
    if name not in BUNDLED_CONFIGS:
        raise ConfigError(f"no bundled config named {name!r}; choose from {BUNDLED_CONFIGS}")
    return Path(str(resources.files("bosonic_link") / "data" / f"{name}.json"))


def load_config(path):
    """Read and validate a device config file.

    ``path`` may also be the name of a bundled config (``paper_device``,
    ``lossless``), with or without the ``.json`` suffix.
    """
    p = Path(path)
    if not p.exists() and p.stem in BUNDLED_CONFIGS and p.parent == Path("."):
        p = bundled_config_path(p.stem)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(raw)


def save_config(config: DeviceConfig, path):
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2) + "\n")


def paper_device():
    return load_config(bundled_config_path("paper_device"))


def lossless_device():
    return load_config(bundled_config_path("lossless"))
