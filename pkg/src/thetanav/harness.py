"""Experiment orchestration: tracking runs, field maps, seed sweeps.

A tracking run wires the full pipeline together: sample a population,
calibrate it through the serial scan, admit and pair units, compile the
four cardinal vector-cell networks, then execute a path script.  Each
segment starts from a phase reset, so segments are independent
constant-velocity sessions; a debounced vector-cell pulse migrates the
place-cell bump and re-arms the reset, a velocity change re-arms it
without migrating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .chip_io import (
    ChipState,
    UnitFit,
    calibrate,
    program,
    scan_frames,
    select_units,
    tap0_bypass,
)
from .config import PathScript, RunConfig, Segment, save_config
from .place_grid import (
    CAUSE_PERIODIC,
    PlaceGrid,
    PulseEvent,
    locate,
    reset_controller,
    write_grid_csv,
    write_trail_csv,
)
from .theta_core import VelocityVector, sample_population
from .vector_net import (
    MuxTable,
    TargetLocation,
    VectorNetwork,
    compile_lookup,
    pair_layer1,
)

DIRECTION_ORDER = ("E", "N", "W", "S")
DIRECTION_THETA = {"E": 0.0, "N": math.pi / 2, "W": math.pi, "S": -math.pi / 2}
ALL_TAPS = (1, 1, 1, 1, 1, 1, 1, 1)


class SegmentTimeoutError(RuntimeError):
    """No vector cell fired within the segment's tick budget."""


@dataclass
class TrackRig:
    """Calibrated chip plus the four compiled cardinal networks."""

    config: RunConfig
    chip: ChipState
    fits: list[UnitFit]
    admitted: list[UnitFit]
    pairing: object
    frame_layout: dict[tuple[int, int], int]
    networks: dict[str, VectorNetwork]
    fs: float

    def compile_target(self, target: TargetLocation) -> MuxTable:
        return compile_lookup(
            self.pairing, self.fits, target, self.config.speed,
            tolerance=self.config.tap_tolerance,
            drift_tolerance=self.config.drift_tolerance,
            min_active_groups=self.config.min_active_groups)

    def network_for(self, mux: MuxTable) -> VectorNetwork:
        return VectorNetwork(mux, self.frame_layout, self.config.filters)


def build_rig(config: RunConfig) -> TrackRig:
    """Calibrate, admit, pair, program and compile the cardinal networks.

    The tracking scan enables all eight phase taps on each pair's
    routable member and tap 0 on its partner, so every cardinal lookup
    table can be served from one shared scan frame.
    """
    config.validate()
    population = sample_population(config.resolved_population())
    chip = ChipState(population)
    fits = calibrate(chip, config.calibration_clock_hz,
                     config.calibration_window_s)
    admitted = select_units(fits, config.admission_r2, config.network_units)
    pairing = pair_layer1(admitted, config.network_units)

    chip.hold()
    configs = []
    for p in pairing.pairs:
        configs.append((p.unit_a, p.code_a, ALL_TAPS))
        configs.append((p.unit_b, p.code_b, tap0_bypass()))
    program(chip, configs)
    frame_layout = {pt: i for i, pt in enumerate(chip.enabled_taps())}
    fs = config.scan_clock_hz / chip.enabled_phases

    networks = {}
    for direction in DIRECTION_ORDER:
        mux = compile_lookup(
            pairing, fits,
            TargetLocation(config.pitch, DIRECTION_THETA[direction]),
            config.speed, tolerance=config.tap_tolerance,
            drift_tolerance=config.drift_tolerance,
            min_active_groups=config.min_active_groups)
        networks[direction] = VectorNetwork(mux, frame_layout, config.filters)
    return TrackRig(config=config, chip=chip, fits=fits, admitted=admitted,
                    pairing=pairing, frame_layout=frame_layout,
                    networks=networks, fs=fs)


@dataclass
class TrackResult:
    """Everything a tracking run produced."""

    events: list[PulseEvent] = field(default_factory=list)
    trail: list[tuple[int, str, int, int]] = field(default_factory=list)
    traces: dict[str, np.ndarray] = field(default_factory=dict)
    resets: list[tuple[int, str]] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    final: tuple[int, int] = (0, 0)
    ticks: int = 0
    diagnostics: dict = field(default_factory=dict)

    def check_invariants(self) -> None:
        counts = {d: 0 for d in DIRECTION_ORDER}
        for ev in self.events:
            counts[ev.direction] += 1
        expected = (counts["E"] - counts["W"], counts["N"] - counts["S"])
        if self.final != expected:
            raise AssertionError(
                f"displacement additivity violated: final {self.final}, "
                f"event counts give {expected}")


def _first_confirmed_pulse(outputs: dict[str, np.ndarray], width: int,
                           settle: int) -> tuple[Optional[int], list[str]]:
    """Earliest debounce-confirmed pulse across networks.

    Returns (run start tick, directions whose runs start there).  Output
    during the settle window after a reset release is ignored.  A run
    confirms at its width-th consecutive high sample, so runs starting
    later than the winner never reach confirmation before the reset.
    """
    starts: dict[str, int] = {}
    for direction, bits in outputs.items():
        masked = bits.copy()
        masked[:settle] = 0
        from .place_grid import debounce
        events = debounce(masked, width)
        if events:
            starts[direction] = events[0]
    if not starts:
        return None, []
    first = min(starts.values())
    fired = [d for d in DIRECTION_ORDER if starts.get(d) == first]
    return first, fired


def run_track(config: RunConfig, script: PathScript,
              rig: Optional[TrackRig] = None) -> TrackResult:
    """Execute a path script and integrate vector-cell pulses on the grid.

    Per segment: assert the phase reset, set the commanded velocity,
    release after the hold, and scan.  A confirmed pulse migrates the
    bump, records the event and re-arms the reset; an until-pulse
    segment then ends, a timed segment keeps going until its scanned
    tick count is spent.  Until-pulse segments that exceed ten times (by
    default) the predicted arrival time fail loudly.
    """
    script.validate()
    if rig is None:
        rig = build_rig(config)
    chip = rig.chip
    grid = PlaceGrid(config.grid_size, config.grid_size)
    result = TrackResult()
    result.trail.append((0, "start", 0, 0))
    result.snapshots.append(grid.snapshot())
    traces: dict[str, list[np.ndarray]] = {d: [] for d in DIRECTION_ORDER}
    arrival_ticks = int(math.ceil(config.cell_seconds * rig.fs))
    budget_default = int(math.ceil(config.budget_factor * arrival_ticks))

    tick = 0
    prev_velocity = VelocityVector(0.0, 0.0)
    pulse_pending = False
    for seg_index, seg in enumerate(script.segments):
        line = reset_controller(prev_velocity, seg.velocity, pulse_pending,
                                trail_start=(seg_index == 0),
                                hold_ticks=config.hold_ticks)
        if not line.asserted:
            # Same velocity and no pulse: still re-arm, segments are
            # defined to start from a known phase.
            line.asserted = True
            line.cause = "velocity_change"
            result.warnings.append(
                f"segment {seg_index}: boundary reset without velocity change")
        if (line.cause == "velocity_change" and seg_index > 0
                and prev_velocity.speed > 0 and not pulse_pending):
            result.warnings.append(
                f"segment {seg_index}: sub-cell displacement discarded on "
                f"velocity change")
        result.resets.append((tick, line.cause))
        pulse_pending = False
        prev_velocity = seg.velocity

        remaining = seg.ticks if not seg.until_pulse else budget_default
        scanned_in_segment = 0
        while remaining > 0:
            chunk = remaining
            if config.periodic_reset_ticks is not None:
                chunk = min(chunk, config.periodic_reset_ticks)
            chip.hold()
            tick += config.hold_ticks
            chip.release()
            frames = scan_frames(chip, seg.velocity, chunk,
                                 config.scan_clock_hz)
            outputs = {d: rig.networks[d].run(frames) for d in DIRECTION_ORDER}
            start, fired = _first_confirmed_pulse(
                outputs, config.debounce_width, config.settle_ticks)
            if start is not None:
                consumed = start + config.debounce_width
                for d in DIRECTION_ORDER:
                    traces[d].append(outputs[d][:consumed])
                for d in fired:
                    event = PulseEvent(direction=d, tick=tick + start)
                    grid = _apply_event(grid, event, result)
                tick += consumed
                remaining -= consumed
                scanned_in_segment += consumed
                pulse_pending = True
                if seg.until_pulse:
                    break
                if remaining > 0:
                    result.resets.append((tick, "vector_fire"))
                    pulse_pending = False
                continue
            for d in DIRECTION_ORDER:
                traces[d].append(outputs[d])
            tick += chunk
            remaining -= chunk
            scanned_in_segment += chunk
            if seg.until_pulse and remaining <= 0:
                raise SegmentTimeoutError(
                    f"segment {seg_index}: no pulse within {budget_default} "
                    f"ticks ({config.budget_factor:g}x predicted arrival)")
            if (config.periodic_reset_ticks is not None and remaining > 0):
                result.resets.append((tick, CAUSE_PERIODIC))

    result.final = locate(grid)
    result.ticks = tick
    result.traces = {
        d: (np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint8))
        for d, chunks in traces.items()
    }
    result.diagnostics = {
        "admitted_units": len(rig.admitted),
        "dropped_groups": {d: list(rig.networks[d].mux.dropped)
                           for d in DIRECTION_ORDER},
        "fs": rig.fs,
        "arrival_ticks": arrival_ticks,
    }
    result.check_invariants()
    return result


def _apply_event(grid: PlaceGrid, event: PulseEvent,
                 result: TrackResult) -> PlaceGrid:
    from .place_grid import apply_pulse
    grid = apply_pulse(grid, event)
    result.events.append(event)
    x, y = locate(grid)
    result.trail.append((event.tick, event.direction, x, y))
    result.snapshots.append(grid.snapshot())
    return grid


@dataclass
class FieldMapResult:
    """Per-cell vector-cell responses under one shared input."""

    velocity: VelocityVector
    session_ticks: int
    cells: list[tuple[int, int]]
    first_fire: dict[tuple[int, int], Optional[int]]
    events: dict[tuple[int, int], list[int]]
    outputs: dict[tuple[int, int], np.ndarray]
    grid_size: int

    def occupancy(self, tick: int) -> np.ndarray:
        """Grid snapshot of which designated cells read high at a tick."""
        half = self.grid_size // 2
        occ = np.zeros((self.grid_size, self.grid_size), dtype=np.uint8)
        for (x, y), bits in self.outputs.items():
            if tick < bits.size and bits[tick]:
                occ[half - y, x + half] = 1
        return occ


def field_map(config: RunConfig, velocity: VelocityVector,
              targets: Optional[Sequence[tuple[int, int]]] = None,
              session_ticks: Optional[int] = None,
              rig: Optional[TrackRig] = None) -> FieldMapResult:
    """Recompile one network per designated grid cell and record when
    each fires during a single constant-velocity session from reset.

    Every cell's lookup table is compiled for the configured speed
    toward that cell; all cells then observe the same scanned input.
    """
    config.validate()
    if rig is None:
        rig = build_rig(config)
    half = config.grid_size // 2
    if targets is None:
        targets = [(x, y) for y in range(-half, half + 1)
                   for x in range(-half, half + 1)]
    max_r = max((math.hypot(x, y) for x, y in targets), default=0.0)
    if session_ticks is None:
        session_ticks = int(math.ceil(
            1.5 * max(max_r, 1.0) * config.cell_seconds * rig.fs))

    chip = rig.chip
    chip.hold()
    chip.release()
    frames = scan_frames(chip, velocity, session_ticks, config.scan_clock_hz)

    from .place_grid import debounce
    first_fire: dict[tuple[int, int], Optional[int]] = {}
    events: dict[tuple[int, int], list[int]] = {}
    outputs: dict[tuple[int, int], np.ndarray] = {}
    for cell in targets:
        x, y = cell
        target = TargetLocation(config.pitch * math.hypot(x, y),
                                math.atan2(y, x))
        mux = rig.compile_target(target)
        net = rig.network_for(mux)
        out = net.run(frames)
        out[:config.settle_ticks] = 0
        outputs[cell] = out
        evs = debounce(out, config.debounce_width)
        events[cell] = evs
        first_fire[cell] = evs[0] if evs else None
    return FieldMapResult(velocity=velocity, session_ticks=session_ticks,
                          cells=list(targets), first_fire=first_fire,
                          events=events, outputs=outputs,
                          grid_size=config.grid_size)


@dataclass
class SeedOutcome:
    seed: int
    ok: bool
    final: Optional[tuple[int, int]]
    cause: str
    n_events: int


@dataclass
class SweepResult:
    outcomes: list[SeedOutcome]

    @property
    def success_fraction(self) -> float:
        if not self.outcomes:
            return 0.0
        return sum(1 for o in self.outcomes if o.ok) / len(self.outcomes)


def sweep_seeds(config: RunConfig, script: PathScript,
                n_seeds: int) -> SweepResult:
    """Run the script over n_seeds fresh populations and score how many
    reach the script's expected final cell.  Individual failures are
    recorded per seed, never fatal."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    base = config.seed if config.seed is not None else config.population.seed
    outcomes = []
    for i in range(n_seeds):
        seed = base + i
        seeded = replace(config, seed=seed)
        try:
            result = run_track(seeded, script)
        except Exception as exc:
            outcomes.append(SeedOutcome(seed=seed, ok=False, final=None,
                                        cause=f"{type(exc).__name__}: {exc}",
                                        n_events=0))
            continue
        if script.expected_final is None:
            ok, cause = True, "completed"
        else:
            ok = result.final == script.expected_final
            cause = "reached target" if ok else (
                f"ended at {result.final}, expected {script.expected_final}")
        outcomes.append(SeedOutcome(seed=seed, ok=ok, final=result.final,
                                    cause=cause, n_events=len(result.events)))
    return SweepResult(outcomes=outcomes)


def _serialize_segments(script: PathScript) -> str:
    parts = []
    for seg in script.segments:
        ticks = "pulse" if seg.until_pulse else str(seg.ticks)
        parts.append(f"{seg.velocity.vx!r}:{seg.velocity.vy!r}:{ticks}")
    return ";".join(parts)


def _parse_segments(text: str) -> tuple[Segment, ...]:
    segments = []
    for part in text.split(";"):
        vx, vy, ticks = part.split(":")
        segments.append(Segment(
            velocity=VelocityVector(float(vx), float(vy)),
            ticks=None if ticks == "pulse" else int(ticks)))
    return tuple(segments)


def emit(result: TrackResult, outdir, config: RunConfig,
         script: PathScript) -> list[Path]:
    """Write the run to disk: manifest, trail, traces, grid snapshots.

    The manifest records the full configuration (seed included), the
    script and the package version; re-running from it reproduces the
    result bit for bit.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    manifest = outdir / "manifest.ini"
    save_config(config, manifest)
    with open(manifest, "a") as fh:
        fh.write("\n[script]\n")
        fh.write(f"name = {script.name}\n")
        fh.write(f"segments = {_serialize_segments(script)}\n")
        if script.expected_final is not None:
            fh.write(f"expected_final = {script.expected_final[0]},"
                     f"{script.expected_final[1]}\n")
        fh.write("\n[meta]\n")
        fh.write(f"version = {__version__}\n")
    written.append(manifest)

    trail_path = outdir / "trail.csv"
    write_trail_csv(trail_path, result.trail)
    written.append(trail_path)

    traces_path = outdir / "traces.csv"
    with open(traces_path, "w") as fh:
        fh.write("tick," + ",".join(DIRECTION_ORDER) + "\n")
        n = max((t.size for t in result.traces.values()), default=0)
        for i in range(n):
            row = [str(i)]
            for d in DIRECTION_ORDER:
                t = result.traces[d]
                row.append(str(int(t[i])) if i < t.size else "0")
            fh.write(",".join(row) + "\n")
    written.append(traces_path)

    for i, snap in enumerate(result.snapshots):
        snap_path = outdir / f"grid_{i:03d}.csv"
        write_grid_csv(snap_path, snap)
        written.append(snap_path)

    if result.warnings:
        warn_path = outdir / "warnings.txt"
        warn_path.write_text("\n".join(result.warnings) + "\n")
        written.append(warn_path)
    return written


def load_manifest(path) -> tuple[RunConfig, PathScript]:
    """Read back a manifest written by :func:`emit`."""
    import configparser

    from .config import load_config
    config = load_config(path)
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    sec = parser["script"]
    expected = None
    if "expected_final" in sec:
        x, y = sec["expected_final"].split(",")
        expected = (int(x), int(y))
    script = PathScript(name=sec["name"],
                        segments=_parse_segments(sec["segments"]),
                        expected_final=expected)
    return config, script


def run_from_manifest(path) -> TrackResult:
    config, script = load_manifest(path)
    return run_track(config, script)


def write_field_map_csv(result: FieldMapResult, outdir,
                        stride: int = 64) -> list[Path]:
    """Occupancy matrices every ``stride`` ticks plus first-fire times."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    ff_path = outdir / "first_fire.csv"
    with open(ff_path, "w") as fh:
        fh.write("x,y,first_fire_tick\n")
        for cell in result.cells:
            ff = result.first_fire[cell]
            fh.write(f"{cell[0]},{cell[1]},{'' if ff is None else ff}\n")
    written.append(ff_path)
    for tick in range(0, result.session_ticks, stride):
        occ_path = outdir / f"occupancy_{tick:06d}.csv"
        write_grid_csv(occ_path, result.occupancy(tick))
        written.append(occ_path)
    return written
