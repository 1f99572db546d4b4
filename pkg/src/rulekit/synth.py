"""Seed-fixed synthetic knowledge graphs for experiments and benchmarks.

Three generators:

* :func:`planted_rule_kg` plants one perfect composition so a single
  chain rule (plus its inversion) fully determines the held-out edges.
* :func:`planted_structure_kg` plants compositional, inverse, abductive
  and equivalence structure at once; each augmentation stage unlocks a
  distinct slice of the held-out queries, which is what the directional
  augmentation experiments measure.
* :func:`planted_rotate_kg` realizes a commuting-rotation grid, a graph
  that a rotation embedding can represent exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kg import KnowledgeGraph, RawTriple
from .rotate import RotateParams


@dataclass
class SynthSplits:
    train: list[RawTriple]
    valid: list[RawTriple]
    test: list[RawTriple]
    rule_lines: list[str] = field(default_factory=list)


def _rng(seed, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, tag))))


def planted_rule_kg(
    n_chains: int = 30, n_test: int = 8, n_valid: int = 4, seed: int = 0
) -> SynthSplits:
    """Chains a_i -leg1-> b_i -leg2-> c_i with a shortcut edge a_i -> c_i.

    All leg edges stay in train; a deterministic sample of shortcut edges
    is held out, so the rule ``shortcut <- leg1 leg2`` predicts every
    held-out tail through train paths.
    """
    rng = _rng(seed, 1)
    train, valid, test = [], [], []
    held = rng.permutation(n_chains)[: n_test + n_valid]
    test_ids = set(int(i) for i in held[:n_test])
    valid_ids = set(int(i) for i in held[n_test:])
    for i in range(n_chains):
        train.append((f"a{i}", "leg1", f"b{i}"))
        train.append((f"b{i}", "leg2", f"c{i}"))
        shortcut = (f"a{i}", "shortcut", f"c{i}")
        if i in test_ids:
            test.append(shortcut)
        elif i in valid_ids:
            valid.append(shortcut)
        else:
            train.append(shortcut)
    return SynthSplits(train, valid, test, ["shortcut <- leg1 leg2"])


def planted_structure_kg(
    seed: int = 0,
    n_triangles: int = 40,
    n_pairs: int = 45,
    n_twin_entities: int = 30,
    n_noise: int = 60,
    held_per_leg: int = 8,
    test_per_leg: int = 6,
    held_twin_each: int = 10,
    test_twin_each: int = 7,
) -> SynthSplits:
    """150-entity graph with planted compositional, inverse and abductive structure.

    Triangles a_i -first_leg-> b_i -second_leg-> c_i with shortcut
    a_i -> c_i carry the compositional signal; exactly one edge per
    selected triangle is held out, so the two remaining edges always
    ground the rotated and inverted rules for it. Twin relations assert
    the same entity pairs under two names, rewarding walk mining. Noise
    edges give filtering something to discard. The only original rule is
    the composition, so abduction, inversion and mining each unlock their
    own slice of the held-out queries.
    """
    rng = _rng(seed, 2)
    train: list[RawTriple] = []
    valid: list[RawTriple] = []
    test: list[RawTriple] = []

    order = rng.permutation(n_triangles)
    held = {}
    for leg_idx, leg in enumerate(("first_leg", "second_leg", "shortcut")):
        chunk = order[leg_idx * held_per_leg : (leg_idx + 1) * held_per_leg]
        for j, tri in enumerate(chunk):
            held[int(tri)] = (leg, "test" if j < test_per_leg else "valid")

    for i in range(n_triangles):
        edges = {
            "first_leg": (f"a{i}", "first_leg", f"b{i}"),
            "second_leg": (f"b{i}", "second_leg", f"c{i}"),
            "shortcut": (f"a{i}", "shortcut", f"c{i}"),
        }
        held_leg, dest = held.get(i, (None, None))
        for leg, edge in edges.items():
            if leg == held_leg:
                (test if dest == "test" else valid).append(edge)
            else:
                train.append(edge)

    # Twin pairs: same (x, y) under twin_a and twin_b.
    all_pairs = [
        (x, y) for x in range(n_twin_entities) for y in range(n_twin_entities) if x != y
    ]
    pick = rng.permutation(len(all_pairs))[:n_pairs]
    pairs = [all_pairs[int(i)] for i in pick]
    assign = rng.permutation(n_pairs)
    hold_a = set(int(i) for i in assign[:held_twin_each])
    hold_b = set(int(i) for i in assign[held_twin_each : 2 * held_twin_each])
    for j, (x, y) in enumerate(pairs):
        edge_a = (f"d{x}", "twin_a", f"d{y}")
        edge_b = (f"d{x}", "twin_b", f"d{y}")
        for edge, is_held, rank in ((edge_a, j in hold_a, 0), (edge_b, j in hold_b, 1)):
            if is_held:
                pos = sorted(hold_a if rank == 0 else hold_b).index(j)
                (test if pos < test_twin_each else valid).append(edge)
            else:
                train.append(edge)

    entities = (
        [f"a{i}" for i in range(n_triangles)]
        + [f"b{i}" for i in range(n_triangles)]
        + [f"c{i}" for i in range(n_triangles)]
        + [f"d{i}" for i in range(n_twin_entities)]
    )
    # A clutter ring over the twin entities guarantees every declared
    # entity occurs in the graph even when the pair sample misses it.
    seen = set()
    for i in range(n_twin_entities):
        x, y = 3 * n_triangles + i, 3 * n_triangles + (i + 1) % n_twin_entities
        seen.add((x, y))
        train.append((entities[x], "clutter", entities[y]))
    n_random_noise = max(0, n_noise - n_twin_entities)
    for x, y in zip(
        rng.integers(len(entities), size=4 * n_random_noise),
        rng.integers(len(entities), size=4 * n_random_noise),
    ):
        if len(seen) >= n_noise:
            break
        if x == y or (int(x), int(y)) in seen:
            continue
        seen.add((int(x), int(y)))
        train.append((entities[int(x)], "clutter", entities[int(y)]))

    return SynthSplits(train, valid, test, ["shortcut <- first_leg second_leg"])


@dataclass
class PlantedRotate:
    splits: SynthSplits
    axis_phases: dict[str, np.ndarray]
    entity_phase: dict[str, np.ndarray]
    moduli: np.ndarray
    gamma: float = 12.0

    def true_params(self, kg: KnowledgeGraph) -> RotateParams:
        """Materialize the generating embeddings against a built graph's ids."""
        k = len(self.moduli)
        entity_re = np.zeros((kg.n_entities, k))
        entity_im = np.zeros((kg.n_entities, k))
        for name, phase in self.entity_phase.items():
            eid = kg.entity_id(name)
            entity_re[eid] = self.moduli * np.cos(phase)
            entity_im[eid] = self.moduli * np.sin(phase)
        rel_phase = np.zeros((kg.n_relations, k))
        for name, phase in self.axis_phases.items():
            rel_phase[kg.relation_id(name)] = phase
            rel_phase[kg.relation_id("!" + name)] = -phase
        return RotateParams(entity_re, entity_im, rel_phase, gamma=self.gamma)


def planted_rotate_kg(
    seed: int = 0,
    dim: int = 8,
    grid: tuple[int, int, int] = (5, 2, 2),
    train_fraction: float = 0.75,
    valid_fraction: float = 0.1,
) -> PlantedRotate:
    """Entities on a rotation grid: moving along axis j applies rotation j.

    Entity (x, y, z) has phases base + x*theta_x + y*theta_y + z*theta_z
    over shared coordinate moduli, so every grid edge satisfies its
    relation's rotation exactly and the generating embeddings rank the
    true neighbor first for every query. The split is resampled until
    every entity keeps at least one train edge.
    """
    rng = _rng(seed, 3)
    axes = ("axis_x", "axis_y", "axis_z")
    phases = {axis: rng.uniform(-np.pi, np.pi, dim) for axis in axes}
    base = rng.uniform(-np.pi, np.pi, dim)
    moduli = rng.uniform(0.5, 1.5, dim)

    def name(x, y, z):
        return f"g{x}_{y}_{z}"

    entity_phase = {}
    edges = []
    nx, ny, nz = grid
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                entity_phase[name(x, y, z)] = (
                    base + x * phases["axis_x"] + y * phases["axis_y"] + z * phases["axis_z"]
                )
                if x + 1 < nx:
                    edges.append((name(x, y, z), "axis_x", name(x + 1, y, z)))
                if y + 1 < ny:
                    edges.append((name(x, y, z), "axis_y", name(x, y + 1, z)))
                if z + 1 < nz:
                    edges.append((name(x, y, z), "axis_z", name(x, y, z + 1)))

    n_train = int(round(train_fraction * len(edges)))
    n_valid = int(round(valid_fraction * len(edges)))
    for _attempt in range(100):
        order = rng.permutation(len(edges))
        train = [edges[int(i)] for i in order[:n_train]]
        touched = set()
        for h, _, t in train:
            touched.add(h)
            touched.add(t)
        if len(touched) == len(entity_phase):
            break
    valid = [edges[int(i)] for i in order[n_train : n_train + n_valid]]
    test = [edges[int(i)] for i in order[n_train + n_valid :]]
    splits = SynthSplits(train, valid, test)
    return PlantedRotate(splits, phases, entity_phase, moduli)


def random_kg(
    rng: np.random.Generator,
    max_entities: int = 30,
    max_relations: int = 5,
    max_edges: int = 60,
    test_fraction: float = 0.0,
) -> SynthSplits:
    """Uniform random triples, for oracle-equivalence property tests."""
    n_e = int(rng.integers(3, max_entities + 1))
    n_r = int(rng.integers(1, max_relations + 1))
    n_edges = int(rng.integers(1, max_edges + 1))
    triples = [
        (f"e{rng.integers(n_e)}", f"r{rng.integers(n_r)}", f"e{rng.integers(n_e)}")
        for _ in range(n_edges)
    ]
    n_test = int(round(test_fraction * len(triples)))
    if n_test:
        return SynthSplits(triples[n_test:], [], triples[:n_test])
    return SynthSplits(triples, [], [])
