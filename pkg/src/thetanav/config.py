"""Run configuration and path scripts, with INI-file round-tripping.

A RunConfig fully determines a tracking run: population statistics and
seed, scan clocks, filter constants, compile tolerances, debounce width,
grid geometry, pitch and speed.  One velocity code unit equals one
spatial unit per second, so the time to cross one grid cell is
pitch / speed seconds.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .theta_core import LINEAR, SIGMOID, PopulationSpec, VelocityVector
from .vector_net import (
    DEFAULT_DRIFT_TOLERANCE,
    DEFAULT_MIN_ACTIVE_GROUPS,
    DEFAULT_TAP_TOLERANCE,
    FilterParams,
)

LINEAR_RANGE = 4.0


@dataclass(frozen=True)
class Segment:
    """One scripted leg: a commanded velocity held either for a fixed
    number of scanned ticks or until the first vector-cell pulse."""

    velocity: VelocityVector
    ticks: Optional[int] = None

    @property
    def until_pulse(self) -> bool:
        return self.ticks is None

    def validate(self) -> None:
        if max(abs(self.velocity.vx), abs(self.velocity.vy)) > LINEAR_RANGE:
            raise ValueError(
                f"segment velocity {tuple(self.velocity)} outside the "
                f"linear range [-{LINEAR_RANGE}, {LINEAR_RANGE}]")
        if self.ticks is not None and self.ticks < 0:
            raise ValueError("segment ticks must be >= 0")


@dataclass(frozen=True)
class PathScript:
    """Named sequence of velocity segments, with the intended final grid
    cell when known (used by seed sweeps to score success)."""

    name: str
    segments: tuple[Segment, ...]
    expected_final: Optional[tuple[int, int]] = None

    def validate(self) -> None:
        if not self.segments:
            raise ValueError("a path script needs at least one segment")
        for seg in self.segments:
            seg.validate()


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run, including the seed."""

    population: PopulationSpec = field(default_factory=PopulationSpec)
    scan_clock_hz: float = 10_000_000.0
    calibration_clock_hz: float = 6_000_000.0
    calibration_window_s: float = 0.12
    filters: FilterParams = field(default_factory=FilterParams)
    tap_tolerance: float = DEFAULT_TAP_TOLERANCE
    drift_tolerance: float = DEFAULT_DRIFT_TOLERANCE
    min_active_groups: int = DEFAULT_MIN_ACTIVE_GROUPS
    admission_r2: float = 0.9
    network_units: int = 80
    debounce_width: int = 3
    grid_size: int = 11
    pitch: float = 0.0024
    speed: float = 0.25
    hold_ticks: int = 10
    settle_ticks: int = 32
    budget_factor: float = 10.0
    periodic_reset_ticks: Optional[int] = None
    seed: Optional[int] = None

    def validate(self) -> None:
        self.population.validate()
        self.filters.validate()
        if self.pitch <= 0 or self.speed <= 0:
            raise ValueError("pitch and speed must be positive")
        if self.speed > LINEAR_RANGE:
            raise ValueError(f"speed {self.speed} outside the linear range")
        if self.grid_size < 1 or self.grid_size % 2 == 0:
            raise ValueError("grid_size must be odd and positive")
        if self.debounce_width < 1:
            raise ValueError("debounce_width must be >= 1")
        if min(self.hold_ticks, self.settle_ticks) < 0:
            raise ValueError("hold_ticks and settle_ticks must be >= 0")
        if self.budget_factor <= 0:
            raise ValueError("budget_factor must be positive")

    def resolved_population(self) -> PopulationSpec:
        """Population spec with the run-level seed override applied."""
        if self.seed is None:
            return self.population
        return replace(self.population, seed=self.seed)

    @property
    def cell_seconds(self) -> float:
        """Travel time across one grid cell at the configured speed."""
        return self.pitch / self.speed


def cardinal_velocity(direction: str, speed: float) -> VelocityVector:
    return {
        "E": VelocityVector(speed, 0.0),
        "N": VelocityVector(0.0, speed),
        "W": VelocityVector(-speed, 0.0),
        "S": VelocityVector(0.0, -speed),
    }[direction]


def _steps_script(name: str, directions: Sequence[str], speed: float) -> PathScript:
    segments = tuple(Segment(cardinal_velocity(d, speed)) for d in directions)
    dx = directions.count("E") - directions.count("W")
    dy = directions.count("N") - directions.count("S")
    return PathScript(name=name, segments=segments, expected_final=(dx, dy))


def built_in_scripts(speed: float) -> dict[str, PathScript]:
    """The three shipped demonstration paths.

    The published record fixes only qualitative shapes and the detour
    endpoint [3, -2]; the exact velocity sequences here are best-effort
    reconstructions of those descriptions.
    """
    return {
        # Heading down the arena with side glances along the way.
        "path1_meander": _steps_script(
            "path1_meander", ("S", "E", "S", "W", "S"), speed),
        # Detour around an obstacle, ending at (3, -2).
        "path2_detour": _steps_script(
            "path2_detour", ("E", "E", "S", "E", "S"), speed),
        # A closed loop back to the start.
        "path3_loop": _steps_script(
            "path3_loop", ("E", "N", "W", "S"), speed),
    }


def save_config(config: RunConfig, path) -> None:
    parser = configparser.ConfigParser()
    pop = config.population
    parser["population"] = {
        "n_units": str(pop.n_units),
        "f_idle_mean": repr(pop.f_idle_mean),
        "f_idle_std": repr(pop.f_idle_std),
        "beta_mean": repr(pop.beta_mean),
        "beta_std": repr(pop.beta_std),
        "dac_offset_std": repr(pop.dac_offset_std),
        "response": pop.response,
        "seed": str(pop.seed),
    }
    parser["scan"] = {
        "scan_clock_hz": repr(config.scan_clock_hz),
        "calibration_clock_hz": repr(config.calibration_clock_hz),
        "calibration_window_s": repr(config.calibration_window_s),
    }
    flt = config.filters
    parser["filters"] = {
        "alpha1": repr(flt.alpha1), "alpha2": repr(flt.alpha2),
        "rise1": repr(flt.rise1), "fall1": repr(flt.fall1),
        "rise2": repr(flt.rise2), "fall2": repr(flt.fall2),
    }
    parser["network"] = {
        "tap_tolerance": repr(config.tap_tolerance),
        "drift_tolerance": repr(config.drift_tolerance),
        "min_active_groups": str(config.min_active_groups),
        "admission_r2": repr(config.admission_r2),
        "network_units": str(config.network_units),
    }
    parser["tracking"] = {
        "debounce_width": str(config.debounce_width),
        "grid_size": str(config.grid_size),
        "pitch": repr(config.pitch),
        "speed": repr(config.speed),
        "hold_ticks": str(config.hold_ticks),
        "settle_ticks": str(config.settle_ticks),
        "budget_factor": repr(config.budget_factor),
    }
    if config.periodic_reset_ticks is not None:
        parser["tracking"]["periodic_reset_ticks"] = str(config.periodic_reset_ticks)
    if config.seed is not None:
        parser["run"] = {"seed": str(config.seed)}
    with open(path, "w") as fh:
        parser.write(fh)


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    pop_s = parser["population"]
    population = PopulationSpec(
        n_units=pop_s.getint("n_units"),
        f_idle_mean=pop_s.getfloat("f_idle_mean"),
        f_idle_std=pop_s.getfloat("f_idle_std"),
        beta_mean=pop_s.getfloat("beta_mean"),
        beta_std=pop_s.getfloat("beta_std"),
        dac_offset_std=pop_s.getfloat("dac_offset_std"),
        response=pop_s.get("response", LINEAR),
        seed=pop_s.getint("seed"),
    )
    if population.response not in (LINEAR, SIGMOID):
        raise ValueError(f"bad response mode {population.response!r}")
    scan_s = parser["scan"]
    flt_s = parser["filters"]
    filters = FilterParams(
        alpha1=flt_s.getfloat("alpha1"), alpha2=flt_s.getfloat("alpha2"),
        rise1=flt_s.getfloat("rise1"), fall1=flt_s.getfloat("fall1"),
        rise2=flt_s.getfloat("rise2"), fall2=flt_s.getfloat("fall2"),
    )
    net_s = parser["network"]
    trk_s = parser["tracking"]
    seed = None
    if parser.has_section("run") and parser.has_option("run", "seed"):
        seed = parser.getint("run", "seed")
    config = RunConfig(
        population=population,
        scan_clock_hz=scan_s.getfloat("scan_clock_hz"),
        calibration_clock_hz=scan_s.getfloat("calibration_clock_hz"),
        calibration_window_s=scan_s.getfloat("calibration_window_s"),
        filters=filters,
        tap_tolerance=net_s.getfloat("tap_tolerance"),
        drift_tolerance=net_s.getfloat("drift_tolerance"),
        min_active_groups=net_s.getint("min_active_groups"),
        admission_r2=net_s.getfloat("admission_r2"),
        network_units=net_s.getint("network_units"),
        debounce_width=trk_s.getint("debounce_width"),
        grid_size=trk_s.getint("grid_size"),
        pitch=trk_s.getfloat("pitch"),
        speed=trk_s.getfloat("speed"),
        hold_ticks=trk_s.getint("hold_ticks"),
        settle_ticks=trk_s.getint("settle_ticks"),
        budget_factor=trk_s.getfloat("budget_factor"),
        periodic_reset_ticks=(trk_s.getint("periodic_reset_ticks")
                              if trk_s.get("periodic_reset_ticks", None) else None),
        seed=seed,
    )
    config.validate()
    return config
