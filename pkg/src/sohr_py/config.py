import configparser
import logging
import math
import os
import typing
from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Optional

from annotated_types import Ge, Gt, Le
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from sohr_py.gci import Scheme
from sohr_py.gvm import EXPONENT_GUARD
from sohr_py.hydro import HydroModel
from sohr_py.ibm import STABILITY_LIMIT, ForceLaw

"""
Run configuration of the lab. A plain text file of `key = value` lines under `[section]` headers, one pydantic model
per section. List values are comma separated.
"""

Noise = Annotated[float, Ge(0.05), Le(20.0)]
PositiveFloat = Annotated[float, Gt(0)]

VALIDATION_TAGS = ("gvm", "gci", "parity", "positivity", "identities", "small_zeta", "dispersion", "hydro", "ibm",
                   "figures", "neighbors")


class ConfigError(ValueError):
    """
    Raised for any invalid configuration, maps to exit code 2.
    """


def _check_guard(d_values: List[float], w_abs: float, what: str):
    for d in d_values:
        if w_abs * 2.0 * math.pi / d > EXPONENT_GUARD:
            raise ValueError(f"{what}={w_abs} exceeds the overflow guard |w| 2 pi / d ≤ {EXPONENT_GUARD:.0f} "
                             f"at d={d}")


class Section(BaseModel):
    """
    Common behaviour of the sections: unknown keys are rejected, comma separated strings become lists.
    """
    model_config = ConfigDict(
        populate_by_name=True,
        extra="forbid",
        use_enum_values=False
    )

    @field_validator("*", mode="before")
    @classmethod
    def split_lists(cls, value: Any, info):
        annotation = cls.model_fields[info.field_name].annotation
        is_list = typing.get_origin(annotation) in (list, List) or any(
            typing.get_origin(a) in (list, List) for a in typing.get_args(annotation))
        if is_list and isinstance(value, str):
            return [v.strip() for v in value.split(",") if v.strip() != ""]
        return value


class GeneralConfig(Section):
    out_dir: str = Field("sohr_out",
                         description="Directory receiving every output file")
    seed: int = Field(0,
                      ge=0,
                      description="Master seed of all random streams")
    serial: bool = Field(False,
                         description="Force deterministic serial execution everywhere")
    n_theta: int = Field(512,
                         ge=8,
                         description="Angular grid size of all profile computations")
    cpu_proc: int = Field(default_factory=lambda: os.cpu_count() or 1,
                          ge=1,
                          description="Number of worker processes for table builds")
    batch_size: int = Field(4,
                            ge=1,
                            description="Table nodes per worker command")
    log_level: int = Field(logging.INFO,
                           description="Level of the lab's logger")

    @field_validator("n_theta")
    @classmethod
    def even_grid(cls, value: int) -> int:
        if value % 2 != 0:
            raise ValueError(f"n_theta must be even, got {value}")
        return value


class CoeffsConfig(Section):
    d: List[Noise] = Field(default_factory=lambda: [0.2, 1.0, 5.0],
                           min_length=1,
                           description="Diffusivities, one table each")
    w_max: PositiveFloat = Field(10.0,
                                 description="Half width of the W range")
    n_w: int = Field(64,
                     ge=2,
                     description="Number of W nodes, even")
    zeta: PositiveFloat = Field(1.0,
                                description="Tables hold a_k(zeta W)")
    scheme: Scheme = Field(Scheme.SPECTRAL,
                           description="Discretization of the collision invariant")
    keep_profiles: bool = Field(False,
                                description="Also write Phi_W and X_W of every node")

    @model_validator(mode="after")
    def check_ranges(self):
        if self.n_w % 2 != 0:
            raise ValueError(f"n_w must be even, got {self.n_w}")
        _check_guard(self.d, self.w_max * self.zeta, "w_max")
        return self


class ProfilesConfig(Section):
    d: List[Noise] = Field(default_factory=lambda: [0.2, 1.0, 5.0],
                           description="Diffusivities of the profile matrix")
    w: List[float] = Field(default_factory=lambda: [0.0, 1.0, 5.0, 20.0],
                           description="Angular velocities of the profile matrix")

    @model_validator(mode="after")
    def check_matrix(self):
        if len(self.d) == 0 or len(self.w) == 0:
            raise ValueError("Profile matrix is empty, set at least one d and one w")
        _check_guard(self.d, max(abs(w) for w in self.w), "w")
        return self


class IbmConfig(Section):
    n: int = Field(1000,
                   ge=1,
                   description="Particle count")
    steps: int = Field(100,
                       ge=0,
                       description="Number of time steps after the burn in")
    law: ForceLaw = Field(ForceLaw.S,
                          description="Force law S (align with the flux) or L (rotated by -psi(W))")
    w: List[float] = Field(default_factory=lambda: [0.0],
                           min_length=1,
                           description="Intrinsic angular velocities, assigned to the particles in turn")
    nu: PositiveFloat = Field(1.0,
                              description="Alignment rate")
    diff: float = Field(0.2,
                        ge=0,
                        description="Angular diffusivity D")
    speed: float = Field(1.0,
                         ge=0,
                         description="Self propulsion speed")
    radius: PositiveFloat = Field(1.0,
                                  description="Interaction radius")
    box: PositiveFloat = Field(10.0,
                               description="Side of the periodic box")
    dt: PositiveFloat = Field(0.02,
                              description="Time step")
    burn_in: Optional[float] = Field(None,
                                     ge=0,
                                     description="Burn in time before observing, defaults to 50 / nu")
    dump_every: int = Field(10,
                            ge=0,
                            description="Steps between observable rows, 0 disables")
    hist_bins: int = Field(64,
                           ge=2,
                           description="Angular histogram bins")
    threads: int = Field(0,
                         ge=0,
                         description="Threads for the neighbor flux, 0 runs serially")
    aligned_start: bool = Field(False,
                                description="Start with all headings equal")
    psi_table: Optional[str] = Field(None,
                                     description="Coefficient table CSV providing psi(W) for law L")
    table_w_max: Optional[PositiveFloat] = Field(None,
                                                 description="Build the psi table in process up to this W instead")
    table_n_w: int = Field(64,
                           ge=2,
                           description="W nodes of a table built in process")

    @model_validator(mode="after")
    def check_guards(self):
        if self.dt * self.nu > STABILITY_LIMIT:
            raise ValueError(f"dt * nu = {self.dt * self.nu} exceeds the stability guard {STABILITY_LIMIT}")
        w_abs = max(abs(w) for w in self.w)
        if self.dt * w_abs > STABILITY_LIMIT:
            raise ValueError(f"dt * max|w| = {self.dt * w_abs} exceeds the stability guard {STABILITY_LIMIT}")
        if self.law == ForceLaw.L:
            if self.psi_table is None and self.table_w_max is None:
                raise ValueError("Force law L requires psi_table or table_w_max")
            d = self.diff / self.nu
            if not 0.05 <= d <= 20.0:
                raise ValueError(f"D / nu = {d} outside of [0.05, 20], no psi table available")
            if self.table_w_max is not None:
                if w_abs / self.nu > self.table_w_max:
                    raise ValueError(f"max|w| / nu = {w_abs / self.nu} outside of table_w_max={self.table_w_max}")
                _check_guard([d], self.table_w_max, "table_w_max")
        return self

    @property
    def burn_in_time(self) -> float:
        return 50.0 / self.nu if self.burn_in is None else self.burn_in


class HydroConfig(Section):
    model: HydroModel = Field(HydroModel.SOHR_S,
                              description="soh, sohr_s, sohr_l or reduced")
    nx: int = Field(1024,
                    ge=3,
                    description="Cells along x")
    ny: int = Field(1,
                    ge=1,
                    description="Cells along y, 1 for a 1D run")
    lx: PositiveFloat = Field(2.0 * math.pi,
                              description="Domain length along x")
    ly: PositiveFloat = Field(2.0 * math.pi,
                              description="Domain length along y")
    d: Noise = Field(1.0,
                     description="Diffusivity of the coefficients")
    dt: Optional[PositiveFloat] = Field(None,
                                        description="Time step, chosen from the CFL bound when unset")
    t_end: float = Field(1.0,
                         ge=0,
                         description="Final time")
    zeta: float = Field(1.0,
                        ge=0,
                        description="Scaling of W in the sohr_l and reduced models")
    n_w: int = Field(64,
                     ge=2,
                     description="W bins of the sohr_l model")
    w_max: PositiveFloat = Field(10.0,
                                 description="W range of the sohr_l model")
    w_sigma: PositiveFloat = Field(1.0,
                                   description="Width of the Gaussian W density")
    w_shift: float = Field(0.0,
                           description="Center of the Gaussian W density")
    init: Literal["uniform", "plane_wave"] = Field("plane_wave",
                                                   description="Initial condition")
    amplitude: float = Field(1e-4,
                             ge=0,
                             description="Plane wave amplitude")
    theta_wave: float = Field(0.0,
                              description="Angle between the wave direction (x) and Omega0")
    mode: int = Field(1,
                      ge=1,
                      description="Wave number index of the plane wave")
    y0: float = Field(0.0,
                      description="Uniform Y of sohr_s and reduced runs")
    dump_every: int = Field(0,
                            ge=0,
                            description="Steps between snapshots, 0 writes only the final state")

    @model_validator(mode="after")
    def check_grid(self):
        if self.ny != 1 and self.ny < 3:
            raise ValueError(f"ny must be 1 or ≥ 3, got {self.ny}")
        if self.n_w % 2 != 0:
            raise ValueError(f"n_w must be even, got {self.n_w}")
        if self.model in (HydroModel.SOHR_L, HydroModel.REDUCED):
            _check_guard([self.d], self.w_max * max(self.zeta, 1e-300), "w_max")
        return self


class DispersionConfig(Section):
    d: List[Noise] = Field(default_factory=lambda: [0.2, 1.0],
                           min_length=1,
                           description="Diffusivities to scan")
    w_max: PositiveFloat = Field(10.0,
                                 description="W range of the tables")
    n_w: int = Field(64,
                     ge=2,
                     description="W nodes of the tables")
    sigma: PositiveFloat = Field(1.0,
                                 description="Width of the Gaussian rho0_W")
    shift: float = Field(0.0,
                         description="Center of rho0_W, non zero makes it non even")
    xi: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0],
                            min_length=1,
                            description="Wave numbers")
    theta: List[float] = Field(default_factory=lambda: [k * math.pi / 8.0 for k in range(5)],
                               min_length=1,
                               description="Angles between wave vector and Omega0")

    @model_validator(mode="after")
    def check_guard(self):
        if self.n_w % 2 != 0:
            raise ValueError(f"n_w must be even, got {self.n_w}")
        _check_guard(self.d, self.w_max, "w_max")
        return self


class ValidateConfig(Section):
    tags: List[str] = Field(default_factory=list,
                            description="Subset of checks to run, empty runs all")
    ibm_particles: int = Field(100000,
                               ge=100,
                               description="Particle count of the equilibrium checks")
    hydro_cells: int = Field(1024,
                             ge=16,
                             description="Cells of the plane wave checks")

    @field_validator("tags")
    @classmethod
    def known_tags(cls, value: List[str]) -> List[str]:
        unknown = [t for t in value if t not in VALIDATION_TAGS]
        if unknown:
            raise ValueError(f"Unknown validation tags {unknown}, known: {', '.join(VALIDATION_TAGS)}")
        return value


class RunConfig(BaseModel):
    general: GeneralConfig = Field(default_factory=GeneralConfig,
                                   description="Shared settings")
    coeffs: CoeffsConfig = Field(default_factory=CoeffsConfig,
                                 description="Coefficient tables")
    profiles: ProfilesConfig = Field(default_factory=ProfilesConfig,
                                     description="Equilibrium and collision invariant profiles")
    ibm: IbmConfig = Field(default_factory=IbmConfig,
                           description="Particle simulation")
    hydro: HydroConfig = Field(default_factory=HydroConfig,
                               description="Finite volume runs")
    dispersion: DispersionConfig = Field(default_factory=DispersionConfig,
                                         description="Stability scans")
    validate_: ValidateConfig = Field(default_factory=ValidateConfig,
                                      alias="validate",
                                      description="Acceptance matrix")

    model_config = ConfigDict(
        populate_by_name=True,
        extra="forbid"
    )

    def to_text(self) -> str:
        """
        Serialise to the sectioned key = value format, unset optional values are omitted.
        """
        lines = []
        for section, attr in SECTION_ATTRS.items():
            model = getattr(self, attr)
            lines.append(f"[{section}]")
            for key in type(model).model_fields:
                value = getattr(model, key)
                if value is None:
                    continue
                lines.append(f"{key} = {_format_value(value)}")
            lines.append("")
        return "\n".join(lines)


SECTION_ATTRS = {
    "general": "general",
    "coeffs": "coeffs",
    "profiles": "profiles",
    "ibm": "ibm",
    "hydro": "hydro",
    "dispersion": "dispersion",
    "validate": "validate_",
}


def _format_value(value: Any) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def parse_text(text: str, overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> RunConfig:
    """
    Parse the configuration text and apply overrides, {section: {key: value}}.

    :raises ConfigError: on unknown sections or keys and on any invalid value
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"Malformed configuration: {e}") from e

    raw: Dict[str, Dict[str, Any]] = {}
    for section in parser.sections():
        if section not in SECTION_ATTRS:
            raise ConfigError(f"Unknown configuration section [{section}]")
        raw[section] = dict(parser.items(section))

    for section, values in (overrides or {}).items():
        if section not in SECTION_ATTRS:
            raise ConfigError(f"Unknown configuration section [{section}]")
        raw.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})

    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(path: Optional[str], overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> RunConfig:
    """
    Read a configuration file, no path gives the defaults (plus overrides).
    """
    text = ""
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"Configuration file {path} does not exist")
        with open(path, "r") as f:
            text = f.read()
    return parse_text(text, overrides)
