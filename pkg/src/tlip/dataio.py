"""Extended-XYZ persistence and dataset pooling.

Extended XYZ is the single interchange format for generated and ingested
data. Floats are written with 17 significant digits so that a write/read
cycle reproduces float64 values bitwise.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Cell, Configuration

__all__ = [
    "ExtxyzError",
    "write_extxyz",
    "read_extxyz",
    "DatasetManifest",
    "ManifestEntry",
    "build_pool",
    "load_pool",
    "file_sha256",
]

_FLOAT = "%.17g"


class ExtxyzError(ValueError):
    """Malformed extended-XYZ content; message carries the line number."""


def _format_comment(config: Configuration) -> str:
    lattice = " ".join(_FLOAT % x for x in config.cell.lattice_vectors.reshape(-1))
    props = "species:S:1:pos:R:3"
    if config.ref_forces is not None:
        props += ":forces:R:3"
    fields = [f'Lattice="{lattice}"', f"Properties={props}"]
    if config.ref_energy is not None:
        fields.append(f"energy={_FLOAT % config.ref_energy}")
    if config.temperature is not None:
        fields.append(f"temperature_K={_FLOAT % config.temperature}")
    pbc = " ".join("T" if p else "F" for p in config.cell.periodic_flags)
    fields.append(f'pbc="{pbc}"')
    return " ".join(fields)


def write_extxyz(configs: Sequence[Configuration], path) -> None:
    with open(path, "w") as fh:
        for config in configs:
            fh.write(f"{config.n_atoms}\n")
            fh.write(_format_comment(config) + "\n")
            for k in range(config.n_atoms):
                row = [config.species[k]]
                row += [_FLOAT % x for x in config.positions[k]]
                if config.ref_forces is not None:
                    row += [_FLOAT % x for x in config.ref_forces[k]]
                fh.write(" ".join(row) + "\n")


_KEY_RE = re.compile(r'(\w+)=(?:"([^"]*)"|(\S+))')


def _parse_comment(comment: str, lineno: int) -> Dict[str, str]:
    out = {}
    for match in _KEY_RE.finditer(comment):
        out[match.group(1)] = match.group(2) if match.group(2) is not None \
            else match.group(3)
    if "Lattice" not in out:
        raise ExtxyzError(f"line {lineno}: missing Lattice key")
    return out


def _parse_properties(spec: str, lineno: int) -> List[Tuple[str, str, int]]:
    parts = spec.split(":")
    if len(parts) % 3:
        raise ExtxyzError(f"line {lineno}: malformed Properties string {spec!r}")
    cols = []
    for k in range(0, len(parts), 3):
        cols.append((parts[k], parts[k + 1], int(parts[k + 2])))
    return cols


def read_extxyz(path, noise_sigma: float = 0.0,
                seed: Optional[int] = None) -> List[Configuration]:
    """Parse an extended-XYZ file into configurations.

    noise_sigma > 0 adds seeded Gaussian positional noise (in A) after
    parsing; ingested datasets use 1e-5 A (i.e. 1e-6 nm) to avoid exact
    180-degree angles.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    configs = []
    idx = 0
    frame = 0
    while idx < len(lines):
        if not lines[idx].strip():
            idx += 1
            continue
        header_line = idx + 1
        try:
            n_atoms = int(lines[idx].strip())
        except ValueError:
            raise ExtxyzError(f"line {header_line}: expected atom count, "
                              f"got {lines[idx]!r}") from None
        if idx + 1 >= len(lines) or idx + 2 + n_atoms > len(lines):
            raise ExtxyzError(f"frame {frame} starting at line {header_line} "
                              "is truncated")
        keys = _parse_comment(lines[idx + 1], header_line + 1)
        try:
            lattice = np.array([float(x) for x in keys["Lattice"].split()])
            if lattice.size != 9:
                raise ValueError
        except ValueError:
            raise ExtxyzError(f"line {header_line + 1}: bad Lattice") from None
        pbc = (True, True, True)
        if "pbc" in keys:
            flags = keys["pbc"].replace(",", " ").split()
            if len(flags) == 3:
                pbc = tuple(f.upper().startswith("T") for f in flags)
        cols = _parse_properties(keys.get("Properties", "species:S:1:pos:R:3"),
                                 header_line + 1)
        species: List[str] = []
        data: Dict[str, List[List[float]]] = {name: [] for name, _, _ in cols
                                              if name != "species"}
        for a in range(n_atoms):
            lineno = header_line + 2 + a
            parts = lines[idx + 2 + a].split()
            want = sum(width for _, _, width in cols)
            if len(parts) < want:
                raise ExtxyzError(f"line {lineno}: expected {want} columns, "
                                  f"got {len(parts)}")
            at = 0
            for name, kind, width in cols:
                chunk = parts[at:at + width]
                at += width
                if kind == "S":
                    species.append(chunk[0])
                else:
                    try:
                        values = [float(x) for x in chunk]
                    except ValueError:
                        raise ExtxyzError(f"line {lineno}: non-numeric value "
                                          f"in column {name}") from None
                    if not all(np.isfinite(values)):
                        raise ExtxyzError(f"line {lineno}: non-finite value "
                                          f"in column {name}")
                    data[name].append(values)
        energy = float(keys["energy"]) if "energy" in keys else None
        temperature = float(keys["temperature_K"]) if "temperature_K" in keys else None
        forces = np.array(data["forces"]) if "forces" in data else None
        try:
            config = Configuration(
                cell=Cell(lattice.reshape(3, 3), pbc),
                species=tuple(species),
                positions=np.array(data["pos"]),
                ref_energy=energy,
                ref_forces=forces,
                temperature=temperature,
            )
        except Exception as exc:
            raise ExtxyzError(f"frame {frame} at line {header_line}: {exc}") from exc
        configs.append(config)
        idx += 2 + n_atoms
        frame += 1
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        configs = [
            Configuration(cell=c.cell, species=c.species,
                          positions=c.positions
                          + rng.normal(0.0, noise_sigma, c.positions.shape),
                          ref_energy=c.ref_energy, ref_forces=c.ref_forces,
                          temperature=c.temperature)
            for c in configs
        ]
    return configs


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    frame: int
    element: str
    n_atoms: int
    temperature: Optional[float]
    kind: str               # structure kind tag; "bulk" when unknown
    provenance: str         # "sw" or "external"
    sha256: str             # hash of the containing file

    def to_dict(self):
        return {
            "path": self.path, "frame": self.frame, "element": self.element,
            "n_atoms": self.n_atoms, "temperature": self.temperature,
            "kind": self.kind, "provenance": self.provenance,
            "sha256": self.sha256,
        }


@dataclass
class DatasetManifest:
    """Ordered, hashed index over the frames of one or more extxyz files."""

    entries: List[ManifestEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for entry in self.entries:
            digest.update(json.dumps(entry.to_dict(), sort_keys=True).encode())
        return digest.hexdigest()

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"format": "tlip-manifest-1",
                       "entries": [e.to_dict() for e in self.entries]},
                      fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path) as fh:
            raw = json.load(fh)
        if raw.get("format") != "tlip-manifest-1":
            raise ValueError(f"{path}: not a tlip manifest")
        return cls([ManifestEntry(**e) for e in raw["entries"]])

    def load_configurations(self, noise_sigma: float = 0.0,
                            seed: Optional[int] = None,
                            verify: bool = True) -> List[Configuration]:
        """Materialize the pool, optionally re-verifying file hashes."""
        by_file: Dict[str, List[ManifestEntry]] = {}
        for entry in self.entries:
            by_file.setdefault(entry.path, []).append(entry)
        cache = {}
        for path in by_file:
            if verify and file_sha256(path) != by_file[path][0].sha256:
                raise ValueError(f"{path}: content hash mismatch; file changed "
                                 "since the manifest was built")
            cache[path] = read_extxyz(path, noise_sigma=noise_sigma, seed=seed)
        out = []
        for entry in self.entries:
            out.append(cache[entry.path][entry.frame])
        return out


def build_pool(paths: Sequence[str],
               element: Optional[str] = None,
               temperature_range: Optional[Tuple[float, float]] = None,
               kinds: Optional[Sequence[str]] = None,
               kind_map: Optional[Dict[str, str]] = None,
               provenance: str = "sw") -> DatasetManifest:
    """Scan extxyz files into a filtered, deterministic manifest.

    Ordering is by (input path order, frame index). `kind_map` assigns a
    structure-kind tag per file path for datasets that do not carry one.
    """
    entries = []
    for path in paths:
        digest = file_sha256(path)
        configs = read_extxyz(path)
        for frame, config in enumerate(configs):
            symbols = set(config.species)
            if len(symbols) != 1:
                raise ValueError(f"{path} frame {frame}: mixed-element frame")
            (symbol,) = symbols
            kind = (kind_map or {}).get(str(path), "bulk")
            if element is not None and symbol != element:
                continue
            if temperature_range is not None:
                if config.temperature is None:
                    continue
                lo, hi = temperature_range
                if not (lo <= config.temperature <= hi):
                    continue
            if kinds is not None and kind not in kinds:
                continue
            entries.append(ManifestEntry(
                path=str(path), frame=frame, element=symbol,
                n_atoms=config.n_atoms, temperature=config.temperature,
                kind=kind, provenance=provenance, sha256=digest))
    if not entries:
        raise ValueError("pool is empty after filtering")
    return DatasetManifest(entries)


def load_pool(manifest: DatasetManifest, **kwargs) -> List[Configuration]:
    return manifest.load_configurations(**kwargs)
