"""Seeded scenario generators.

Every undirected link of a topology becomes two directed links with
independently drawn cost parameters. Link capacities (queue) or slopes
(linear) are drawn uniformly in ``spread * link_mean``; CPUs likewise.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import networkx as nx
import numpy as np

from .cost import CostModel, LINEAR, QUEUE
from .errors import ValidationError
from .model import Application, Instance, NetworkGraph

KINDS = ("connected-er", "balanced-tree", "fog", "abilene", "lhc", "geant", "small-world")
FIXED = ("fog", "abilene", "lhc", "geant")
AXES = ("rate-scale", "L0-ratio")


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    nodes: int | None = None
    edges: int | None = None  # undirected link count
    apps: int = 5
    sources: int = 3
    link_kind: str = "queue"
    link_mean: float = 10.0
    comp_kind: str = "queue"
    comp_mean: float = 12.0
    chain_len: int = 2
    packet_sizes: tuple = (10.0, 5.0, 0.0)
    rate_range: tuple = (0.5, 1.5)
    spread: tuple = (0.5, 1.5)
    rate_scale: float = 1.0
    comp_weight: float = 1.0
    seed: int = 0
    max_attempts: int = 200
    name: str = ""

    def validate(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown topology kind {self.kind!r}")
        if self.kind not in FIXED and (self.nodes is None or self.nodes < 2):
            raise ValidationError(f"{self.kind} needs a node count >= 2")
        if len(self.packet_sizes) != self.chain_len + 1:
            raise ValidationError("packet_sizes needs chain_len + 1 entries")
        for k in (self.link_kind, self.comp_kind):
            if k not in ("queue", "linear"):
                raise ValidationError(f"unknown cost kind {k!r}")
        if self.apps < 1 or self.sources < 1:
            raise ValidationError("need at least one application and one source")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        for key in ("packet_sizes", "rate_range", "spread"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


# Table rows (undirected link counts); SW-30 is the desk-scale small-world.
PRESETS = {
    "connected-er": ScenarioConfig("connected-er", 20, 40, 5, 3, "queue", 10, "queue", 12),
    "balanced-tree": ScenarioConfig("balanced-tree", 15, 14, 5, 3, "queue", 20, "queue", 15),
    "fog": ScenarioConfig("fog", 19, 30, 5, 3, "queue", 20, "queue", 17),
    "abilene": ScenarioConfig("abilene", 11, 14, 3, 3, "queue", 15, "queue", 10),
    "lhc": ScenarioConfig("lhc", 16, 31, 8, 3, "queue", 15, "queue", 15),
    "geant": ScenarioConfig("geant", 22, 33, 10, 5, "queue", 20, "queue", 20),
    "sw-queue": ScenarioConfig("small-world", 100, 320, 30, 8, "queue", 20, "queue", 20),
    "sw-linear": ScenarioConfig("small-world", 100, 320, 30, 8, "linear", 20, "linear", 20),
    "sw-30": ScenarioConfig("small-world", 30, 96, 9, 8, "queue", 20, "queue", 20),
}


def preset(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], name=overrides.pop("name", name), **overrides)


def load_topology(name: str) -> dict:
    with resources.files(__package__).joinpath("data").joinpath(f"{name}.json").open() as fh:
        return json.load(fh)


def _small_world(n: int, m: int, rng) -> nx.Graph:
    g = nx.cycle_graph(n)
    if m >= 2 * n and n > 4:
        g.add_edges_from((i, (i + 2) % n) for i in range(n))
    if m > n * (n - 1) // 2:
        raise ValidationError(f"{m} links do not fit on {n} nodes")
    while g.number_of_edges() < m:
        u, v = (int(x) for x in rng.choice(n, 2, replace=False))
        g.add_edge(u, v)
    while g.number_of_edges() > m:
        g.remove_edge(*list(g.edges())[-1])
    return g


def _topology(cfg: ScenarioConfig, rng) -> nx.Graph:
    if cfg.kind in FIXED:
        doc = load_topology(cfg.kind)
        g = nx.Graph()
        g.add_nodes_from(range(doc["nodes"]))
        g.add_edges_from(map(tuple, doc["edges"]))
        return g
    n = cfg.nodes
    if cfg.kind == "balanced-tree":
        depth = int(round(np.log2(n + 1))) - 1
        if 2 ** (depth + 1) - 1 != n:
            raise ValidationError("a complete binary tree needs 2^h - 1 nodes")
        return nx.balanced_tree(2, depth)
    m = cfg.edges if cfg.edges is not None else 2 * n
    if cfg.kind == "small-world":
        return _small_world(n, m, rng)
    for _ in range(cfg.max_attempts):
        g = nx.gnm_random_graph(n, m, seed=int(rng.integers(2**31)))
        if nx.is_connected(g):
            return g
    raise ValidationError(f"no connected G({n}, {m}) after {cfg.max_attempts} draws")


def generate(cfg: ScenarioConfig) -> Instance:
    """Deterministic instance for ``cfg``; the seed fixes everything."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    topo = _topology(cfg, rng)
    n = topo.number_of_nodes()
    und = sorted(tuple(sorted(e)) for e in topo.edges())
    edges = [e for u, v in und for e in ((u, v), (v, u))]
    graph = NetworkGraph(n, edges)
    lo, hi = cfg.spread
    link_kind = np.full(len(edges), QUEUE if cfg.link_kind == "queue" else LINEAR)
    node_kind = np.full(n, QUEUE if cfg.comp_kind == "queue" else LINEAR)
    link_param = cfg.link_mean * rng.uniform(lo, hi, len(edges))
    node_param = cfg.comp_mean * rng.uniform(lo, hi, n)
    costs = CostModel(link_kind, link_param, node_kind, node_param)
    apps = []
    R = min(cfg.sources, n)
    for a in range(cfg.apps):
        dest = int(rng.integers(n))
        srcs = np.sort(rng.choice(n, R, replace=False))
        rate = np.zeros(n)
        rate[srcs] = rng.uniform(*cfg.rate_range, R) * cfg.rate_scale
        apps.append(Application(a, cfg.chain_len, dest, np.array(cfg.packet_sizes, float), rate,
                                np.full((n, cfg.chain_len), float(cfg.comp_weight))))
    name = cfg.name or f"{cfg.kind}-s{cfg.seed}"
    return Instance(graph, apps, costs, name=name)


def sweep(cfg: ScenarioConfig, axis: str, values) -> list[Instance]:
    """Instances that share everything except one swept axis.

    ``rate-scale`` multiplies every input rate. ``L0-ratio`` sets the
    data packet size to ``value * L[1]`` with the other sizes unchanged.
    """
    if axis not in AXES:
        raise ValidationError(f"unknown sweep axis {axis!r}; choose from {AXES}")
    out = []
    for v in values:
        if axis == "rate-scale":
            c = replace(cfg, rate_scale=cfg.rate_scale * float(v))
        else:
            if cfg.chain_len < 1:
                raise ValidationError("L0-ratio needs chain_len >= 1")
            L = list(cfg.packet_sizes)
            L[0] = float(v) * L[1]
            c = replace(cfg, packet_sizes=tuple(L))
        inst = generate(c)
        inst.name = f"{inst.name}-{axis}-{v:g}"
        out.append(inst)
    return out
