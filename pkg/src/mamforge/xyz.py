"""Extended-XYZ reading and writing.

Frame layout: first line is the atom count, second line carries
whitespace-separated ``key=value`` pairs (values may be double-quoted),
then one line per atom.  Recognised keys:

* ``Lattice="ax ay az bx by bz cx cy cz"`` -- row-major lattice vectors
* ``Properties=species:S:1:pos:R:3[:vel:R:3][:forces:R:3][:charge:R:1]``
* ``pbc="T T F"``
* ``energy=<eV>`` and ``total_charge=<e>`` (optional)

Reference forces and per-atom charges ride along in :class:`Frame`;
they are training data, not part of the structure itself.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .constants import symbol_to_z, z_to_symbol
from .structure import Structure


class XyzError(ValueError):
    """Malformed extended-XYZ content."""


@dataclass
class Frame:
    structure: Structure
    energy: float | None = None
    forces: np.ndarray | None = None
    charges: np.ndarray | None = None


_KV_RE = re.compile(r'(\S+?)=(?:"([^"]*)"|(\S+))')

# property name -> (columns, dtype flag)
_KNOWN_PROPS = {"species": (1, "S"), "pos": (3, "R"), "vel": (3, "R"),
                "forces": (3, "R"), "charge": (1, "R")}


def _parse_comment(line: str) -> dict[str, str]:
    out = {}
    for m in _KV_RE.finditer(line):
        key = m.group(1)
        out[key] = m.group(2) if m.group(2) is not None else m.group(3)
    return out


def _parse_properties(spec: str) -> list[tuple[str, int]]:
    tokens = spec.split(":")
    if len(tokens) % 3 != 0 or not tokens:
        raise XyzError(f"malformed Properties spec {spec!r}")
    layout = []
    for name, kind, ncol in zip(tokens[0::3], tokens[1::3], tokens[2::3]):
        if name not in _KNOWN_PROPS:
            raise XyzError(f"unsupported property {name!r}")
        want_ncol, want_kind = _KNOWN_PROPS[name]
        if int(ncol) != want_ncol or kind != want_kind:
            raise XyzError(f"property {name!r} must be {want_kind}:{want_ncol}")
        layout.append((name, want_ncol))
    if not layout or layout[0][0] != "species" or layout[1][0] != "pos":
        raise XyzError("Properties must start with species:S:1:pos:R:3")
    return layout


def parse_frame(text: str) -> Frame:
    """Parse a single extended-XYZ frame."""
    frames = parse_frames(text)
    if len(frames) != 1:
        raise XyzError(f"expected one frame, found {len(frames)}")
    return frames[0]


def parse_structure(text: str) -> Structure:
    return parse_frame(text).structure


def parse_frames(text: str) -> list[Frame]:
    """Parse a (possibly multi-frame) extended-XYZ document."""
    lines = text.splitlines()
    frames = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            n = int(lines[i].strip())
        except ValueError:
            raise XyzError(f"line {i + 1}: expected atom count") from None
        if n < 1:
            raise XyzError(f"line {i + 1}: atom count must be >= 1")
        if len(lines) < i + 2 + n:
            raise XyzError("truncated frame: atom count exceeds remaining lines")
        frames.append(_parse_one(n, lines[i + 1], lines[i + 2 : i + 2 + n]))
        i += 2 + n
    if not frames:
        raise XyzError("no frames found")
    return frames


def _parse_one(n: int, comment: str, atom_lines: list[str]) -> Frame:
    keys = _parse_comment(comment)

    pbc = np.array([False, False, False])
    if "pbc" in keys:
        toks = keys["pbc"].split()
        if len(toks) != 3 or any(t not in ("T", "F") for t in toks):
            raise XyzError(f"malformed pbc value {keys['pbc']!r}")
        pbc = np.array([t == "T" for t in toks])

    if "Lattice" in keys:
        vals = keys["Lattice"].split()
        if len(vals) != 9:
            raise XyzError("Lattice must contain 9 numbers")
        cell = np.array([float(v) for v in vals]).reshape(3, 3)
    else:
        if pbc.any():
            raise XyzError("periodic frame lacks a Lattice key")
        cell = np.zeros((3, 3))

    layout = _parse_properties(keys.get("Properties", "species:S:1:pos:R:3"))
    ncols = sum(c for _, c in layout)

    species = np.zeros(n, dtype=int)
    data = {name: np.zeros((n, c)) for name, c in layout if name != "species"}
    for a, line in enumerate(atom_lines):
        toks = line.split()
        if len(toks) != ncols:
            raise XyzError(f"atom line {a + 1}: expected {ncols} columns, got {len(toks)}")
        col = 0
        for name, c in layout:
            if name == "species":
                species[a] = symbol_to_z(toks[col])
            else:
                data[name][a] = [float(t) for t in toks[col : col + c]]
            col += c

    structure = Structure(
        cell=cell,
        periodic=pbc,
        positions=data["pos"],
        species=species,
        velocities=data.get("vel"),
        total_charge=float(keys.get("total_charge", 0.0)),
    )
    energy = float(keys["energy"]) if "energy" in keys else None
    charges = data["charge"][:, 0] if "charge" in data else None
    return Frame(structure, energy=energy, forces=data.get("forces"), charges=charges)


def _fmt(x: float) -> str:
    return f"{x:.11e}"


def write_frame(structure: Structure, energy: float | None = None,
                forces: np.ndarray | None = None,
                charges: np.ndarray | None = None) -> str:
    """Serialize one frame; 12 significant digits on every float."""
    s = structure
    prop = "species:S:1:pos:R:3"
    if s.velocities is not None:
        prop += ":vel:R:3"
    if forces is not None:
        prop += ":forces:R:3"
    if charges is not None:
        prop += ":charge:R:1"

    keys = []
    if s.periodic.any() or np.any(s.cell != 0.0):
        keys.append('Lattice="' + " ".join(_fmt(v) for v in s.cell.ravel()) + '"')
    keys.append(f"Properties={prop}")
    keys.append('pbc="' + " ".join("T" if p else "F" for p in s.periodic) + '"')
    if energy is not None:
        keys.append(f"energy={_fmt(energy)}")
    if s.total_charge != 0.0:
        keys.append(f"total_charge={_fmt(s.total_charge)}")

    lines = [str(s.n_atoms), " ".join(keys)]
    for a in range(s.n_atoms):
        cols = [f"{z_to_symbol(s.species[a]):<2s}"]
        cols += [_fmt(v) for v in s.positions[a]]
        if s.velocities is not None:
            cols += [_fmt(v) for v in s.velocities[a]]
        if forces is not None:
            cols += [_fmt(v) for v in forces[a]]
        if charges is not None:
            cols.append(_fmt(charges[a]))
        lines.append(" ".join(cols))
    return "\n".join(lines) + "\n"


def write_frames(frames: list[Frame]) -> str:
    return "".join(
        write_frame(f.structure, energy=f.energy, forces=f.forces, charges=f.charges)
        for f in frames
    )
