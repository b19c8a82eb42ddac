"""Run configuration: a sectioned ``key = value`` file.

Grammar (standard INI as read by :mod:`configparser`; ``#`` and ``;`` start
comments, lists are comma separated)::

    [grid]
    dim = 1                      # 1 or 2
    extents = 64                 # cells per axis
    lengths = 1.0                # domain length per axis

    [system]
    d = 1, 1
    gamma = 0.5, 1.5             # (gamma_1, gamma_2)
    rho = 1, 1
    s = 0.5, 1, 1, 1             # (s11, s12, s21, s22)
    reactions = true

    [scheme]
    tau = 1e-3
    n_steps = 200
    fp_tol = 1e-10               # optional, as are the keys below
    fp_max = 500
    mbar_floor = 0
    newton_fallback = true
    linear_solver = dct          # dct | cg

    [initial.1]                  # one block per species
    profile = gaussian           # constant | gaussian | checkerboard | file
    center = 0.3
    width = 0.08
    amplitude = 1.0
    floor = 0.5

    [output]
    directory = out
    snapshot_stride = 20         # default n_steps / 10
    audits = true
    entropy_slack = 10
    entropy_K =                  # optional cumulative-bound constant

    [run]
    seed = 0

Profile keys: ``constant`` takes ``value``; ``gaussian`` takes ``center``
(one entry per axis), ``width``, ``amplitude``, ``floor``; ``checkerboard``
takes ``amplitude`` and ``floor``; ``file`` takes ``path`` to a fields CSV
and reads the column of this species.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from crossdiff.grid import Grid
from crossdiff.stepper import SchemeConfig
from crossdiff.system import CrossDiffusionSystem, PowerLawParams

PROFILES = ("constant", "gaussian", "checkerboard", "file")


class ConfigError(ValueError):
    """Carries every problem found, not just the first."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


@dataclass(frozen=True)
class GridBlock:
    dim: int = 1
    extents: tuple[int, ...] = (64,)
    lengths: tuple[float, ...] = (1.0,)


@dataclass(frozen=True)
class SystemBlock:
    d: tuple[float, ...] = (1.0, 1.0)
    gamma: tuple[float, ...] = (0.5, 1.5)
    rho: tuple[float, ...] = (1.0, 1.0)
    s: tuple[float, ...] = (0.5, 1.0, 1.0, 1.0)
    reactions: bool = True


@dataclass(frozen=True)
class SchemeBlock:
    tau: float = 1e-3
    n_steps: int = 100
    fp_tol: float = 1e-10
    fp_max: int = 500
    mbar_floor: float = 0.0
    newton_fallback: bool = True
    linear_solver: str = "dct"


@dataclass(frozen=True)
class InitialBlock:
    profile: str = "constant"
    value: float = 1.0
    center: tuple[float, ...] = (0.5,)
    width: float = 0.1
    amplitude: float = 1.0
    floor: float = 0.5
    path: str = ""


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "out"
    snapshot_stride: int | None = None
    audits: bool = True
    entropy_slack: float = 10.0
    entropy_K: float | None = None


@dataclass(frozen=True)
class RunConfig:
    grid: GridBlock = field(default_factory=GridBlock)
    system: SystemBlock = field(default_factory=SystemBlock)
    scheme: SchemeBlock = field(default_factory=SchemeBlock)
    initial: tuple[InitialBlock, InitialBlock] = (InitialBlock(), InitialBlock())
    output: OutputBlock = field(default_factory=OutputBlock)
    seed: int = 0

    @property
    def stride(self) -> int:
        if self.output.snapshot_stride is not None:
            return self.output.snapshot_stride
        return max(1, self.scheme.n_steps // 10)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(
        self,
        steps: int | None = None,
        tau: float | None = None,
        stride: int | None = None,
        seed: int | None = None,
        audits: bool | None = None,
        directory: str | None = None,
    ) -> RunConfig:
        scheme, output, cfg = self.scheme, self.output, self
        if steps is not None:
            scheme = replace(scheme, n_steps=steps)
        if tau is not None:
            scheme = replace(scheme, tau=tau)
        if stride is not None:
            output = replace(output, snapshot_stride=stride)
        if audits is not None:
            output = replace(output, audits=audits)
        if directory is not None:
            output = replace(output, directory=directory)
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        cfg = replace(cfg, scheme=scheme, output=output)
        problems = validate(cfg)
        if problems:
            raise ConfigError(problems)
        return cfg

    # -- builders ----------------------------------------------------------

    def build_grid(self) -> Grid:
        return Grid(self.grid.extents, self.grid.lengths)

    def build_params(self) -> PowerLawParams:
        b = self.system
        return PowerLawParams(d=b.d, gamma=b.gamma, rho=b.rho, s=b.s)

    def build_params_unchecked(self) -> PowerLawParams:
        # skips __post_init__ so that every violation can be collected at once
        params = object.__new__(PowerLawParams)
        for key in ("d", "gamma", "rho", "s"):
            object.__setattr__(params, key, tuple(getattr(self.system, key)))
        return params

    def build_system(self) -> CrossDiffusionSystem:
        return CrossDiffusionSystem.two_species(self.build_params(), reactions=self.system.reactions)

    def build_scheme(self) -> SchemeConfig:
        b = self.scheme
        return SchemeConfig(
            tau=b.tau,
            n_steps=b.n_steps,
            fp_tol=b.fp_tol,
            fp_max=b.fp_max,
            mbar_floor=b.mbar_floor,
            newton_fallback=b.newton_fallback,
            linear_solver=b.linear_solver,
        )

    def build_initial(self, base: Path | None = None) -> np.ndarray:
        grid = self.build_grid()
        return np.stack([
            initial_profile(block, grid, species, base) for species, block in enumerate(self.initial)
        ])


def initial_profile(block: InitialBlock, grid: Grid, species: int, base: Path | None = None):
    if block.profile == "constant":
        return np.full(grid.shape, block.value)
    if block.profile == "gaussian":
        r2 = sum((x - c) ** 2 for x, c in zip(grid.coordinates(), block.center))
        return block.floor + block.amplitude * np.exp(-r2 / (2 * block.width**2))
    if block.profile == "checkerboard":
        parity = sum(np.indices(grid.shape)) % 2
        return block.floor + block.amplitude * parity
    if block.profile == "file":
        path = Path(block.path)
        if base is not None and not path.is_absolute():
            path = base / path
        lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
        data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)  # lines[0] is the header
        if data.shape[0] != grid.size:
            raise ConfigError([f"{path}: {data.shape[0]} rows, grid has {grid.size} cells"])
        return data[:, species].reshape(grid.shape)
    raise ConfigError([f"unknown profile {block.profile!r}"])


# -- parsing -------------------------------------------------------------------

_SECTIONS = {
    "grid": GridBlock,
    "system": SystemBlock,
    "scheme": SchemeBlock,
    "initial.1": InitialBlock,
    "initial.2": InitialBlock,
    "output": OutputBlock,
    "run": None,
}
_REQUIRED = {
    "grid": ("extents",),
    "system": ("d", "gamma", "rho", "s"),
    "scheme": ("tau", "n_steps"),
    "initial.1": ("profile",),
    "initial.2": ("profile",),
}


def _convert(raw: str, kind: str):
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "ints":
        return tuple(int(v) for v in raw.split(","))
    if kind == "floats":
        return tuple(float(v) for v in raw.split(","))
    if kind == "optint":
        return None if raw == "" else int(raw)
    if kind == "optfloat":
        return None if raw == "" else float(raw)
    return raw


_KINDS = {
    "grid": {"dim": "int", "extents": "ints", "lengths": "floats"},
    "system": {"d": "floats", "gamma": "floats", "rho": "floats", "s": "floats", "reactions": "bool"},
    "scheme": {
        "tau": "float", "n_steps": "int", "fp_tol": "float", "fp_max": "int",
        "mbar_floor": "float", "newton_fallback": "bool", "linear_solver": "str",
    },
    "initial": {
        "profile": "str", "value": "float", "center": "floats", "width": "float",
        "amplitude": "float", "floor": "float", "path": "str",
    },
    "output": {
        "directory": "str", "snapshot_stride": "optint", "audits": "bool",
        "entropy_slack": "float", "entropy_K": "optfloat",
    },
    "run": {"seed": "int"},
}


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), interpolation=None, empty_lines_in_values=False
    )
    parser.optionxform = str  # keys are case sensitive (entropy_K)
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError([f"line {exc.lineno}: text before the first [section]"]) from exc
    except configparser.ParsingError as exc:
        raise ConfigError([f"line {lineno}: cannot parse {line.strip()!r}" for lineno, line in exc.errors]) from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError([f"line {exc.lineno}: duplicate section [{exc.section}]"]) from exc
    except configparser.DuplicateOptionError as exc:
        raise ConfigError([f"line {exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]"]) from exc

    problems: list[str] = []
    for name in parser.sections():
        if name not in _SECTIONS:
            problems.append(f"unknown section [{name}]")
    for name, keys in _REQUIRED.items():
        if not parser.has_section(name):
            problems.append(f"missing section [{name}]")
            continue
        for key in keys:
            if not parser.has_option(name, key):
                problems.append(f"[{name}] missing required field {key!r}")

    values: dict[str, dict] = {}
    for name in _SECTIONS:
        kinds = _KINDS["initial" if name.startswith("initial") else name]
        values[name] = {}
        if not parser.has_section(name):
            continue
        for key, raw in parser.items(name):
            if key not in kinds:
                problems.append(f"[{name}] unknown key {key!r}")
                continue
            try:
                values[name][key] = _convert(raw, kinds[key])
            except ValueError as exc:
                problems.append(f"[{name}] {key}: {exc}")
    if problems:
        raise ConfigError(problems)

    grid_vals = dict(values["grid"])
    if "lengths" not in grid_vals and "extents" in grid_vals:
        grid_vals["lengths"] = (1.0,) * len(grid_vals["extents"])
    if "dim" not in grid_vals and "extents" in grid_vals:
        grid_vals["dim"] = len(grid_vals["extents"])
    cfg = RunConfig(
        grid=GridBlock(**grid_vals),
        system=SystemBlock(**values["system"]),
        scheme=SchemeBlock(**values["scheme"]),
        initial=(InitialBlock(**values["initial.1"]), InitialBlock(**values["initial.2"])),
        output=OutputBlock(**values["output"]),
        seed=values["run"].get("seed", 0),
    )
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    problems = []
    g = cfg.grid
    if g.dim not in (1, 2):
        problems.append(f"[grid] dim must be 1 or 2, got {g.dim}")
    if len(g.extents) != g.dim or len(g.lengths) != g.dim:
        problems.append(f"[grid] extents and lengths need {g.dim} entries")
    if any(n < 2 for n in g.extents):
        problems.append("[grid] every extent must be >= 2")
    if any(L <= 0 for L in g.lengths):
        problems.append("[grid] every length must be positive")

    s = cfg.system
    for key, size in (("d", 2), ("gamma", 2), ("rho", 2), ("s", 4)):
        if len(getattr(s, key)) != size:
            problems.append(f"[system] {key} needs {size} entries")
    if not problems:
        problems += [f"[system] {p}" for p in PowerLawParams.violations(cfg.build_params_unchecked())]
        if s.d and min(s.d) <= 0:
            problems.append("[system] d must be positive (uniform lower bound alpha > 0)")

    sc = cfg.scheme
    if not sc.tau > 0:
        problems.append("[scheme] tau must be positive")
    if sc.n_steps < 0:
        problems.append("[scheme] n_steps must be >= 0")
    if sc.fp_tol <= 0:
        problems.append("[scheme] fp_tol must be positive")
    if sc.fp_max < 1:
        problems.append("[scheme] fp_max must be >= 1")
    if sc.mbar_floor < 0:
        problems.append("[scheme] mbar_floor must be >= 0")
    if sc.linear_solver not in ("dct", "cg"):
        problems.append(f"[scheme] linear_solver must be dct or cg, got {sc.linear_solver!r}")
    rho_bar = max(s.rho) if (s.reactions and s.rho) else 0.0
    if not rho_bar * sc.tau < 0.5:
        problems.append(f"[scheme] rho*tau < 1/2 violated (rho={rho_bar}, tau={sc.tau})")

    for i, block in enumerate(cfg.initial, start=1):
        tag = f"[initial.{i}]"
        if block.profile not in PROFILES:
            problems.append(f"{tag} profile must be one of {', '.join(PROFILES)}")
        elif block.profile == "constant" and not block.value > 0:
            problems.append(f"{tag} value must be > 0 (strictly positive initial data)")
        elif block.profile in ("gaussian", "checkerboard"):
            if not block.floor > 0:
                problems.append(f"{tag} floor must be > 0 (strictly positive initial data)")
            if block.amplitude < 0:
                problems.append(f"{tag} amplitude must be >= 0")
            if block.profile == "gaussian":
                if not block.width > 0:
                    problems.append(f"{tag} width must be positive")
                if len(block.center) != g.dim:
                    problems.append(f"{tag} center needs {g.dim} entries")
        elif block.profile == "file" and not block.path:
            problems.append(f"{tag} file profile needs a path")

    o = cfg.output
    if o.snapshot_stride is not None and o.snapshot_stride < 1:
        problems.append("[output] snapshot_stride must be >= 1")
    if o.entropy_slack < 0:
        problems.append("[output] entropy_slack must be >= 0")
    if o.entropy_K is not None and not o.entropy_K > 0:
        problems.append("[output] entropy_K must be positive")
    if not o.directory:
        problems.append("[output] directory must not be empty")
    return problems


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """Resolved config as text; :func:`parse_config` reads it back to an equal object."""
    out = io.StringIO()
    blocks = [
        ("grid", cfg.grid),
        ("system", cfg.system),
        ("scheme", cfg.scheme),
        ("initial.1", cfg.initial[0]),
        ("initial.2", cfg.initial[1]),
        ("output", cfg.output),
    ]
    for name, block in blocks:
        out.write(f"[{name}]\n")
        for key, value in asdict(block).items():
            out.write(f"{key} = {_fmt(value)}\n")
        out.write("\n")
    out.write(f"[run]\nseed = {cfg.seed}\n")
    return out.getvalue()
