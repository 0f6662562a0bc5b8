"""Charge/discharge cycling over any energy/force calculator.

Charging follows the three-step protocol: intercalant atoms are placed
at random collision-free points inside an insertion region, a small
constant bias force drives the fresh atoms inward during a first
relaxation (standing in for the voltage that drives intercalation in a
real cell), then the bias is removed and the system relaxes freely.
Discharging picks the intercalants closest to the region boundary,
pulls them with the opposite bias, deletes them, and relaxes.

Intercalants are identified by their element, so the host must not
contain the intercalant species.  Runs are seeded and bitwise
reproducible; the trace records energy, global and region-resolved
static stress, and the residual force after every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calculators import BiasedCalculator
from .constants import ATOMIC_MASSES
from .structure import Region, Structure


@dataclass
class RelaxResult:
    structure: Structure
    energies: list[float]      # accepted-step energies, start state first
    n_steps: int
    converged: bool
    fmax: float


def relax(s: Structure, calculator, tol: float = 0.05, max_steps: int = 200,
          step_cap: float = 0.2) -> RelaxResult:
    """Damped descent with force-projected adaptive steps.

    A trial step along the forces is accepted only if the energy does
    not increase; rejected steps shrink the trial length.  Terminates at
    max |F| <= tol or when the step budget is exhausted.
    """
    if tol <= 0 or step_cap <= 0:
        raise ValueError("tolerance and step cap must be positive")
    e, f = calculator.energy_and_forces(s)
    if not (np.isfinite(e) and np.all(np.isfinite(f))):
        raise ValueError("calculator produced non-finite energy or forces")
    energies = [float(e)]
    fmax = float(np.max(np.abs(f)))
    alpha = 0.05
    accepted = 0
    while fmax > tol and accepted < max_steps:
        step = alpha * f
        norms = np.linalg.norm(step, axis=1)
        big = norms > step_cap
        if np.any(big):
            step[big] *= (step_cap / norms[big])[:, None]
        trial = s.with_positions(s.positions + step)
        e2, f2 = calculator.energy_and_forces(trial)
        if np.isfinite(e2) and np.all(np.isfinite(f2)) and e2 <= e:
            s, e, f = trial, e2, f2
            fmax = float(np.max(np.abs(f)))
            energies.append(float(e))
            accepted += 1
            alpha = min(alpha * 1.25, 1.0)
        else:
            alpha *= 0.4
            if alpha < 1e-10:
                break
    return RelaxResult(s, energies, accepted, fmax <= tol, fmax)


@dataclass(frozen=True)
class CycleConfig:
    """Protocol parameters for one cycling run."""

    intercalant_z: int
    region: Region
    atoms_per_step: int = 1
    bias: float = 0.1                     # eV/A on fresh intercalants
    bias_direction: tuple[float, float, float] | None = None
    relax_tol: float = 0.05               # eV/A
    relax_max_steps: int = 200
    relax_step_cap: float = 0.2           # A
    x_max: float = 1.0                    # intercalants per host atom
    min_insert_dist: float = 1.5          # A
    seed: int = 0

    def __post_init__(self):
        if self.bias < 0:
            raise ValueError("bias magnitude must be >= 0")
        if self.relax_tol <= 0:
            raise ValueError("relaxation tolerance must be positive")
        if self.x_max <= 0:
            raise ValueError("x_max must be positive")
        if self.atoms_per_step < 1:
            raise ValueError("atoms per step must be >= 1")

    def bias_vector(self, sign: float = 1.0) -> np.ndarray:
        if self.bias_direction is not None:
            d = np.asarray(self.bias_direction, dtype=float)
            d = d / np.linalg.norm(d)
        else:
            # default: drive along the region axis toward its lower face
            d = np.zeros(3)
            d[self.region.axis] = -1.0
        return sign * self.bias * d


def intercalant_mask(s: Structure, cfg: CycleConfig) -> np.ndarray:
    return s.species == cfg.intercalant_z


def content_x(s: Structure, cfg: CycleConfig) -> float:
    n_int = int(np.sum(intercalant_mask(s, cfg)))
    n_host = s.n_atoms - n_int
    if n_host == 0:
        raise ValueError("no host atoms present")
    return n_int / n_host


def _sampling_box(s: Structure, region: Region) -> tuple[np.ndarray, np.ndarray]:
    lo = np.empty(3)
    hi = np.empty(3)
    for axis in range(3):
        if axis == region.axis:
            lo[axis], hi[axis] = region.lo, region.hi
        elif s.periodic[axis]:
            lo[axis], hi[axis] = 0.0, s.cell[axis, axis]
        else:
            lo[axis] = s.positions[:, axis].min() - 2.0
            hi[axis] = s.positions[:, axis].max() + 2.0
    return lo, hi


def place_intercalants(s: Structure, cfg: CycleConfig, rng: np.random.Generator,
                       count: int) -> Structure:
    """Rejection-sample collision-free insertion points inside the region."""
    lo, hi = _sampling_box(s, cfg.region)
    new_pos = []
    for _ in range(count):
        for attempt in range(1000):
            trial = rng.uniform(lo, hi)
            existing = np.vstack([s.positions] + ([new_pos] if new_pos else []))
            d = s.minimum_image(existing - trial)
            if np.min(np.linalg.norm(d, axis=1)) >= cfg.min_insert_dist:
                new_pos.append(trial)
                break
        else:
            raise RuntimeError(
                f"placement failed after 1000 attempts; region too crowded "
                f"(min distance {cfg.min_insert_dist} A)"
            )
    velocities = s.velocities
    if velocities is not None:
        velocities = np.vstack([velocities, np.zeros((count, 3))])
    new_mass = ATOMIC_MASSES.get(cfg.intercalant_z, 1.0)
    return Structure(
        cell=s.cell, periodic=s.periodic,
        positions=np.vstack([s.positions, new_pos]),
        species=np.concatenate([s.species, [cfg.intercalant_z] * count]),
        masses=np.concatenate([s.masses, [new_mass] * count]),
        velocities=velocities,
        total_charge=s.total_charge,
    )


def charge_step(s: Structure, calculator, cfg: CycleConfig,
                rng: np.random.Generator | None = None) -> Structure:
    """Insert, drive inward under bias, then relax freely."""
    rng = rng or np.random.default_rng(cfg.seed)
    n0 = s.n_atoms
    s = place_intercalants(s, cfg, rng, cfg.atoms_per_step)
    fresh = np.arange(n0, s.n_atoms)
    if cfg.bias > 0:
        biased = BiasedCalculator(calculator, fresh, cfg.bias_vector(+1.0))
        s = relax(s, biased, cfg.relax_tol, cfg.relax_max_steps, cfg.relax_step_cap).structure
    return relax(s, calculator, cfg.relax_tol, cfg.relax_max_steps,
                 cfg.relax_step_cap).structure


def _boundary_distance(x: np.ndarray, region: Region) -> np.ndarray:
    return np.minimum(np.abs(x - region.lo), np.abs(region.hi - x))


def discharge_step(s: Structure, calculator, cfg: CycleConfig) -> Structure:
    """Extract the intercalants nearest the region boundary and relax.

    Selection order is ascending distance to the boundary planes, ties
    broken by atom index.
    """
    mask = intercalant_mask(s, cfg)
    candidates = np.nonzero(mask)[0]
    if len(candidates) < cfg.atoms_per_step:
        raise ValueError("not enough intercalants to discharge")
    dist = _boundary_distance(s.positions[candidates, cfg.region.axis], cfg.region)
    order = np.lexsort((candidates, dist))
    chosen = candidates[order[: cfg.atoms_per_step]]

    if cfg.bias > 0:
        biased = BiasedCalculator(calculator, chosen, cfg.bias_vector(-1.0))
        s = relax(s, biased, cfg.relax_tol, cfg.relax_max_steps, cfg.relax_step_cap).structure

    keep = np.ones(s.n_atoms, dtype=bool)
    keep[chosen] = False
    s = Structure(cell=s.cell, periodic=s.periodic,
                  positions=s.positions[keep], species=s.species[keep],
                  masses=s.masses[keep],
                  velocities=None if s.velocities is None else s.velocities[keep],
                  total_charge=s.total_charge)
    return relax(s, calculator, cfg.relax_tol, cfg.relax_max_steps,
                 cfg.relax_step_cap).structure


def region_stress(s: Structure, calculator, region: Region) -> np.ndarray:
    """Static stress of a region: its atoms' virials over its volume (eV/A^3)."""
    mask = region.mask(s)
    if not mask.any():
        raise ValueError("region contains no atoms")
    w = calculator.atom_virials(s)[mask].sum(axis=0)
    return w / region.volume(s)


@dataclass
class TraceRecord:
    step: int
    mode: str
    x: float
    e_total: float
    stress: np.ndarray          # global static, eV/A^3
    region_stress: np.ndarray   # insertion region, eV/A^3
    fmax: float


@dataclass
class CyclingTrace:
    records: list[TraceRecord] = field(default_factory=list)
    frames: list[Structure] = field(default_factory=list)
    stop_reason: str | None = None


def run_cycle(s: Structure, calculator, cfg: CycleConfig,
              schedule: list[str], keep_frames: bool = True) -> CyclingTrace:
    """Execute a charge/discharge schedule and record a trace per step.

    ``schedule`` entries are "charge" or "discharge"; each moves
    ``cfg.atoms_per_step`` intercalants.  Stops early with a recorded
    reason once the target content x_max is reached.
    """
    if not schedule:
        raise ValueError("schedule must not be empty")
    if not s.periodic.all():
        raise ValueError("cycling requires a fully periodic host cell")
    bad = [m for m in schedule if m not in ("charge", "discharge")]
    if bad:
        raise ValueError(f"unknown schedule entries {bad!r}")

    rng = np.random.default_rng(cfg.seed)
    trace = CyclingTrace()
    for k, mode in enumerate(schedule):
        if mode == "charge":
            if content_x(s, cfg) >= cfg.x_max:
                trace.stop_reason = f"x_max {cfg.x_max} reached before step {k}"
                break
            s = charge_step(s, calculator, cfg, rng)
        else:
            s = discharge_step(s, calculator, cfg)
        e, f = calculator.energy_and_forces(s)
        w_all = calculator.atom_virials(s)
        trace.records.append(TraceRecord(
            step=k, mode=mode, x=content_x(s, cfg), e_total=float(e),
            stress=w_all.sum(axis=0) / s.volume,
            region_stress=region_stress(s, calculator, cfg.region),
            fmax=float(np.max(np.abs(f))),
        ))
        if keep_frames:
            trace.frames.append(s)
    return trace


def trace_csv(trace: CyclingTrace) -> str:
    comps = [f"{a}{b}" for a in "xyz" for b in "xyz"]
    header = (["step", "mode", "x", "e_total_ev"]
              + [f"s{c}" for c in comps] + [f"r{c}" for c in comps] + ["fmax"])
    lines = [",".join(header)]
    for r in trace.records:
        row = [str(r.step), r.mode, f"{r.x:.17g}", f"{r.e_total:.17g}"]
        row += [f"{v:.17g}" for v in r.stress.ravel()]
        row += [f"{v:.17g}" for v in r.region_stress.ravel()]
        row.append(f"{r.fmax:.17g}")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
