"""Reproducible stratified train/val/test split plans.

Five independent pseudo-random splits are derived from one master seed.
Strata are (label, length bucket) pairs by default, or (label, composer).
Strata with at least five members are apportioned 60/20/20 to within one
piece of exact proportionality; smaller strata are pooled and allocated at
random in proportion-preserving counts so the whole-corpus 60/20/20 target
still holds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .ingest import CorpusManifest
from .metrics import length_bucket

SUBSETS = ("train", "val", "test")
PROPORTIONS = (0.6, 0.2, 0.2)
STRATEGIES = ("length_level", "composer_level")
MIN_STRATUM = 5


@dataclass
class SplitPlan:
    fold_id: int
    strategy: str
    seed: int
    assignment: dict[str, str] = field(default_factory=dict)

    def subset(self, name: str) -> list[str]:
        if name not in SUBSETS:
            raise ConfigError(f"unknown subset {name!r}")
        return sorted(pid for pid, s in self.assignment.items() if s == name)

    def to_dict(self) -> dict:
        return {
            "fold_id": self.fold_id,
            "strategy": self.strategy,
            "seed": self.seed,
            "assignment": dict(sorted(self.assignment.items())),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_dict(cls, obj: dict) -> "SplitPlan":
        return cls(
            fold_id=int(obj["fold_id"]),
            strategy=obj["strategy"],
            seed=int(obj["seed"]),
            assignment=dict(obj["assignment"]),
        )

    @classmethod
    def load(cls, path: str | Path) -> "SplitPlan":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _apportion(n: int, proportions=PROPORTIONS) -> list[int]:
    """Largest-remainder counts: each entry is floor(p*n) or ceil(p*n)."""
    floors = [int(np.floor(p * n)) for p in proportions]
    remainders = [p * n - f for p, f in zip(proportions, floors)]
    short = n - sum(floors)
    order = sorted(range(len(proportions)), key=lambda i: (-remainders[i], i))
    for i in order[:short]:
        floors[i] += 1
    return floors


def stratum_key(entry, strategy: str):
    if strategy == "length_level":
        return (entry.label, length_bucket(entry.n_notes))
    if strategy == "composer_level":
        return (entry.label, entry.composer)
    raise ConfigError(f"unknown stratification strategy {strategy!r}")


def _split_one_fold(
    manifest: CorpusManifest, strategy: str, rng: np.random.Generator
) -> dict[str, str]:
    strata: dict = {}
    for entry in manifest.entries:
        strata.setdefault(stratum_key(entry, strategy), []).append(entry.piece_id)

    n_total = len(manifest.entries)
    global_target = _apportion(n_total)
    counts = [0, 0, 0]
    assignment: dict[str, str] = {}
    assigned_total = 0
    small_pool: list[str] = []

    for key in sorted(strata, key=str):
        members = sorted(strata[key])
        if len(members) < MIN_STRATUM:
            small_pool.extend(members)
            continue
        n = len(members)
        floors = [int(np.floor(p * n)) for p in PROPORTIONS]
        extra = n - sum(floors)
        # hand leftover units to whichever subsets lag their running
        # corpus-level target most, so per-stratum rounding never drifts
        deficits = [
            PROPORTIONS[i] * (assigned_total + n) - (counts[i] + floors[i])
            for i in range(3)
        ]
        order = sorted(range(3), key=lambda i: (-deficits[i], i))
        for i in order[:extra]:
            floors[i] += 1
        shuffled = list(members)
        rng.shuffle(shuffled)
        pos = 0
        for i, subset in enumerate(SUBSETS):
            for pid in shuffled[pos : pos + floors[i]]:
                assignment[pid] = subset
            counts[i] += floors[i]
            pos += floors[i]
        assigned_total += n

    # small strata: random membership, proportion-preserving counts
    if small_pool:
        remaining = [max(0, global_target[i] - counts[i]) for i in range(3)]
        while sum(remaining) > len(small_pool):
            i = max(range(3), key=lambda j: (remaining[j], -j))
            remaining[i] -= 1
        while sum(remaining) < len(small_pool):
            deficits = [
                PROPORTIONS[i] * n_total - (counts[i] + remaining[i])
                for i in range(3)
            ]
            i = max(range(3), key=lambda j: (deficits[j], -j))
            remaining[i] += 1
        pool = sorted(small_pool)
        rng.shuffle(pool)
        pos = 0
        for i, subset in enumerate(SUBSETS):
            for pid in pool[pos : pos + remaining[i]]:
                assignment[pid] = subset
            pos += remaining[i]

    return assignment


def make_splits(
    manifest: CorpusManifest,
    strategy: str = "length_level",
    seed: int = 0,
    n_folds: int = 5,
) -> list[SplitPlan]:
    """Build n_folds independent split plans from one master seed."""
    if not manifest.entries:
        raise ConfigError("cannot split an empty manifest")
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown stratification strategy {strategy!r}")
    plans = []
    for fold in range(n_folds):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(fold,))
        )
        assignment = _split_one_fold(manifest, strategy, rng)
        plans.append(
            SplitPlan(fold_id=fold, strategy=strategy, seed=seed, assignment=assignment)
        )
    return plans
