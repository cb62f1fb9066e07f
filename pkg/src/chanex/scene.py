"""Procedural scattering scenes and single-bounce multipath ray tracing.

A scene is a box populated with point scatterers, one base-station anchor,
one reflecting-surface anchor and a set of terminals.  Rays between two
points resolve to one line-of-sight path plus one single-bounce path per
scatterer.  The millimeter-wave band sees a filtered subset of the sub-6 GHz
paths: scatterers flagged as blockers drop out entirely, and the
line-of-sight path disappears when a scatterer sits inside a corridor
around the direct segment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path as FsPath

import numpy as np

from .errors import ConfigurationError, DomainError
from .rng import stream

SPEED_OF_LIGHT = 299_792_458.0

Point = tuple[float, float, float]

SCENE_SCHEMA = "chanex.scene/v1"


class Band(Enum):
    SUB6 = "sub6"
    MMWAVE = "mmwave"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by two opposite corners."""

    lo: Point
    hi: Point

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ConfigurationError("box has zero or negative extent", fields=["bounds"])

    @property
    def extent(self) -> Point:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def diagonal(self) -> float:
        return math.dist(self.lo, self.hi)

    def contains(self, p) -> bool:
        return all(l <= x <= h for x, l, h in zip(p, self.lo, self.hi))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return rng.uniform(lo, hi, size=(n, 3))

    def clip(self, p: np.ndarray) -> np.ndarray:
        return np.clip(p, np.asarray(self.lo), np.asarray(self.hi))


@dataclass(frozen=True)
class Scatterer:
    position: Point
    reflection_gain_sub6: complex
    reflection_gain_mmwave: complex
    blocks_mmwave: bool

    def __post_init__(self):
        if abs(self.reflection_gain_mmwave) > abs(self.reflection_gain_sub6) + 1e-15:
            raise ConfigurationError("mmWave reflection gain exceeds sub-6 gain")


@dataclass(frozen=True)
class Terminal:
    id: int
    position: Point
    group_id: int | None = None


@dataclass(frozen=True)
class SceneParams:
    num_scatterers: int
    num_terminals: int
    bounds: Box
    mmwave_block_prob: float = 0.3
    blockage_radius: float = 0.5
    mmwave_gain_range: tuple[float, float] = (0.1, 0.5)
    # Optional spatial clustering of terminals; None means uniform placement.
    terminal_clusters: tuple[Point, ...] | None = None
    cluster_spread: float = 0.5


@dataclass(frozen=True)
class Scene:
    seed: int
    bounds: Box
    scatterers: tuple[Scatterer, ...]
    bs_position: Point
    ris_position: Point
    terminals: tuple[Terminal, ...]


@dataclass(frozen=True)
class Path:
    """One resolved propagation path; scatterer is None for line of sight."""

    complex_gain: complex
    delay: float
    aod_az: float
    aod_el: float
    aoa_az: float
    aoa_el: float
    scatterer: int | None = None


@dataclass(frozen=True)
class PathSet:
    paths: tuple[Path, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.paths)

    def scatterer_ids(self) -> set[int | None]:
        return {p.scatterer for p in self.paths}

    def gains(self) -> np.ndarray:
        return np.array([p.complex_gain for p in self.paths], dtype=np.complex128)

    def delays(self) -> np.ndarray:
        return np.array([p.delay for p in self.paths], dtype=np.float64)


def generate_scene(seed: int, params: SceneParams) -> Scene:
    """Build a scene deterministically from (seed, params)."""
    if params.num_scatterers < 1:
        raise ConfigurationError("need at least one scatterer", fields=["num_scatterers"])
    if params.num_terminals < 1:
        raise ConfigurationError("need at least one terminal", fields=["num_terminals"])
    if not 0.0 <= params.mmwave_block_prob <= 1.0:
        raise ConfigurationError("mmwave_block_prob outside [0, 1]", fields=["mmwave_block_prob"])
    lo, hi = params.mmwave_gain_range
    if not 0.0 < lo <= hi <= 1.0:
        raise ConfigurationError("mmwave_gain_range must satisfy 0 < lo <= hi <= 1",
                                 fields=["mmwave_gain_range"])
    bounds = params.bounds  # Box validates itself

    n = params.num_scatterers
    positions = bounds.sample(stream(seed, "scatterer-pos"), n)
    g = stream(seed, "scatterer-gain")
    magnitudes = g.uniform(0.3, 0.9, size=n)
    phases = g.uniform(-math.pi, math.pi, size=n)
    blocks = stream(seed, "scatterer-block").random(n) < params.mmwave_block_prob
    scales = stream(seed, "mmwave-scale").uniform(lo, hi, size=n)

    scatterers = []
    for i in range(n):
        gain = magnitudes[i] * complex(math.cos(phases[i]), math.sin(phases[i]))
        scatterers.append(Scatterer(
            position=tuple(float(x) for x in positions[i]),
            reflection_gain_sub6=gain,
            reflection_gain_mmwave=gain * float(scales[i]),
            blocks_mmwave=bool(blocks[i]),
        ))

    bs = tuple(float(x) for x in bounds.sample(stream(seed, "bs-pos"), 1)[0])
    ris = tuple(float(x) for x in bounds.sample(stream(seed, "ris-pos"), 1)[0])

    m = params.num_terminals
    if params.terminal_clusters:
        centers = np.asarray(params.terminal_clusters, dtype=float)
        offsets = stream(seed, "terminal-pos").normal(0.0, params.cluster_spread, size=(m, 3))
        pts = bounds.clip(centers[np.arange(m) % len(centers)] + offsets)
    else:
        pts = bounds.sample(stream(seed, "terminal-pos"), m)
    terminals = tuple(Terminal(id=i, position=tuple(float(x) for x in pts[i])) for i in range(m))

    return Scene(seed=int(seed), bounds=bounds, scatterers=tuple(scatterers),
                 bs_position=bs, ris_position=ris, terminals=terminals)


def _direction_angles(origin: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    v = target - origin
    d = float(np.linalg.norm(v))
    az = math.atan2(v[1], v[0])
    el = math.asin(max(-1.0, min(1.0, v[2] / d)))
    return az, el


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Distance from point p to the segment a-b."""
    ab = b - a
    t = float(np.dot(p - a, ab) / np.dot(ab, ab))
    t = max(0.0, min(1.0, t))
    return float(np.linalg.norm(p - (a + t * ab)))


def trace_paths(scene: Scene, tx, rx, band: Band,
                blockage_radius: float | None = None) -> PathSet:
    """Resolve the multipath set between tx and rx for one band.

    Returns one line-of-sight path (unless blocked at mmWave) plus one
    single-bounce path per surviving scatterer.  Amplitudes follow an
    inverse total-path-length law; bounce paths additionally carry the
    scatterer's band-specific complex reflection gain.  Delays are exact
    geometric path length over the speed of light; angle of departure is
    taken at tx and angle of arrival at rx.
    """
    txa = np.asarray(tx, dtype=float)
    rxa = np.asarray(rx, dtype=float)
    if float(np.linalg.norm(rxa - txa)) < 1e-12:
        raise DomainError("tx and rx coincide")
    radius = 0.5 if blockage_radius is None else blockage_radius

    paths = []
    d_los = float(np.linalg.norm(rxa - txa))
    los_blocked = False
    if band is Band.MMWAVE:
        for s in scene.scatterers:
            if _segment_distance(np.asarray(s.position), txa, rxa) < radius:
                los_blocked = True
                break
    if not los_blocked:
        aod = _direction_angles(txa, rxa)
        aoa = _direction_angles(rxa, txa)
        paths.append(Path(complex_gain=1.0 / d_los, delay=d_los / SPEED_OF_LIGHT,
                          aod_az=aod[0], aod_el=aod[1], aoa_az=aoa[0], aoa_el=aoa[1],
                          scatterer=None))

    for idx, s in enumerate(scene.scatterers):
        if band is Band.MMWAVE and s.blocks_mmwave:
            continue
        sp = np.asarray(s.position)
        d1 = float(np.linalg.norm(sp - txa))
        d2 = float(np.linalg.norm(rxa - sp))
        if d1 < 1e-12 or d2 < 1e-12:
            continue
        gain = s.reflection_gain_mmwave if band is Band.MMWAVE else s.reflection_gain_sub6
        aod = _direction_angles(txa, sp)
        aoa = _direction_angles(rxa, sp)
        paths.append(Path(complex_gain=gain / (d1 + d2), delay=(d1 + d2) / SPEED_OF_LIGHT,
                          aod_az=aod[0], aod_el=aod[1], aoa_az=aoa[0], aoa_el=aoa[1],
                          scatterer=idx))

    paths.sort(key=lambda p: (p.delay, -1 if p.scatterer is None else p.scatterer))
    return PathSet(paths=tuple(paths))


def with_group_ids(scene: Scene, groups: dict[int, int]) -> Scene:
    """Copy of the scene with group ids attached to its terminals."""
    terminals = tuple(replace(t, group_id=groups.get(t.id)) for t in scene.terminals)
    return replace(scene, terminals=terminals)


# -- serialization (scene schema v1) ---------------------------------------

def _c2l(z: complex) -> list[float]:
    return [z.real, z.imag]


def scene_to_doc(scene: Scene) -> dict:
    return {
        "schema": SCENE_SCHEMA,
        "seed": scene.seed,
        "bounds": {"lo": list(scene.bounds.lo), "hi": list(scene.bounds.hi)},
        "bs_position": list(scene.bs_position),
        "ris_position": list(scene.ris_position),
        "scatterers": [
            {
                "position": list(s.position),
                "reflection_gain_sub6": _c2l(s.reflection_gain_sub6),
                "reflection_gain_mmwave": _c2l(s.reflection_gain_mmwave),
                "blocks_mmwave": s.blocks_mmwave,
            }
            for s in scene.scatterers
        ],
        "terminals": [
            {"id": t.id, "position": list(t.position), "group_id": t.group_id}
            for t in scene.terminals
        ],
    }


def scene_from_doc(doc: dict) -> Scene:
    if doc.get("schema") != SCENE_SCHEMA:
        raise ConfigurationError(f"unsupported scene schema: {doc.get('schema')!r}",
                                 fields=["schema"])
    bounds = Box(lo=tuple(doc["bounds"]["lo"]), hi=tuple(doc["bounds"]["hi"]))
    scatterers = tuple(
        Scatterer(
            position=tuple(s["position"]),
            reflection_gain_sub6=complex(*s["reflection_gain_sub6"]),
            reflection_gain_mmwave=complex(*s["reflection_gain_mmwave"]),
            blocks_mmwave=bool(s["blocks_mmwave"]),
        )
        for s in doc["scatterers"]
    )
    terminals = tuple(
        Terminal(id=t["id"], position=tuple(t["position"]), group_id=t.get("group_id"))
        for t in doc["terminals"]
    )
    return Scene(seed=doc["seed"], bounds=bounds, scatterers=scatterers,
                 bs_position=tuple(doc["bs_position"]), ris_position=tuple(doc["ris_position"]),
                 terminals=terminals)


def save_scene(scene: Scene, path) -> None:
    FsPath(path).write_text(json.dumps(scene_to_doc(scene), indent=1) + "\n")


def load_scene(path) -> Scene:
    return scene_from_doc(json.loads(FsPath(path).read_text()))
