"""NEAT evolution of hyperparameter-generating genomes.

Each genome encodes a small feedforward network. Fed a constant input
vector it emits sigmoid outputs h in (0,1)^d which decode linearly (or in
log-space) into learner hyperparameters. Evolution follows the classic
recipe: innovation-numbered structural genes, compatibility speciation
with fitness sharing, elitism, and stagnation-based species removal.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .seeding import derive_rng, derive_seed

WEIGHT_CLIP = 8.0


# ---------------------------------------------------------------------------
# genome structures


@dataclass
class NodeGene:
    id: int
    kind: str  # "input" | "hidden" | "output"


@dataclass
class ConnGene:
    in_node: int
    out_node: int
    weight: float
    enabled: bool
    innovation: int


@dataclass
class Genome:
    nodes: list
    connections: list
    fitness: float = None
    key: int = -1

    def copy(self) -> "Genome":
        return Genome(
            nodes=[replace(n) for n in self.nodes],
            connections=[replace(c) for c in self.connections],
            fitness=self.fitness,
            key=self.key,
        )

    def node_ids(self):
        return {n.id for n in self.nodes}

    def nodes_of_kind(self, kind):
        return sorted((n.id for n in self.nodes if n.kind == kind))

    def structure(self):
        """Hashable structural signature (topology + enabled flags)."""
        return (
            tuple(sorted((n.id, n.kind) for n in self.nodes)),
            tuple(sorted((c.innovation, c.in_node, c.out_node, c.enabled)
                         for c in self.connections)),
        )


class GenomeError(ValueError):
    pass


def validate_genome(g: Genome) -> None:
    ids = [n.id for n in g.nodes]
    if len(set(ids)) != len(ids):
        raise GenomeError("duplicate node ids")
    id_set = set(ids)
    innovations = [c.innovation for c in g.connections]
    if len(set(innovations)) != len(innovations):
        raise GenomeError("duplicate innovation numbers")
    for c in g.connections:
        if c.in_node not in id_set or c.out_node not in id_set:
            raise GenomeError(f"connection {c.innovation} references a missing node")
    _topological_order(g, enabled_only=False)  # raises on cycles


def _topological_order(g: Genome, enabled_only: bool = True):
    """Kahn topological sort; deterministic (ids ascending). Raises on cycles."""
    ids = sorted(n.id for n in g.nodes)
    incoming = {i: 0 for i in ids}
    out_edges = {i: [] for i in ids}
    for c in g.connections:
        if enabled_only and not c.enabled:
            continue
        incoming[c.out_node] += 1
        out_edges[c.in_node].append(c.out_node)
    ready = sorted(i for i in ids if incoming[i] == 0)
    order = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        next_ready = []
        for dst in out_edges[node]:
            incoming[dst] -= 1
            if incoming[dst] == 0:
                next_ready.append(dst)
        if next_ready:
            ready = sorted(ready + next_ready)
    if len(order) != len(ids):
        raise GenomeError("cycle detected in genome")
    return order


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-max(-60.0, min(60.0, x))))


def activate_genome(g: Genome, z) -> np.ndarray:
    """Feedforward evaluation on input z; sigmoid at every non-input node.

    Outputs are reported for output nodes in ascending id order and are
    strictly inside (0,1).
    """
    z = np.asarray(z, dtype=np.float64)
    input_ids = g.nodes_of_kind("input")
    output_ids = g.nodes_of_kind("output")
    if len(z) != len(input_ids):
        raise ValueError(f"expected {len(input_ids)} inputs, got {len(z)}")
    order = _topological_order(g, enabled_only=True)
    incoming = {}
    for c in g.connections:
        if c.enabled:
            incoming.setdefault(c.out_node, []).append(c)
    values = {}
    for nid, zv in zip(input_ids, z):
        values[nid] = float(zv)
    for nid in order:
        if nid in values:
            continue
        total = sum(values[c.in_node] * c.weight for c in incoming.get(nid, ()))
        values[nid] = _sigmoid(total)
    return np.array([values[nid] for nid in output_ids])


# ---------------------------------------------------------------------------
# hyperparameter decoding


@dataclass(frozen=True)
class HyperparamRange:
    name: str
    lower: float
    upper: float
    scale: str = "linear"
    integer: bool = False

    def __post_init__(self):
        if self.scale not in ("linear", "log"):
            raise ValueError(f"unknown scale {self.scale!r}")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if self.scale == "log" and self.lower <= 0:
            raise ValueError(f"{self.name}: log scale requires lower > 0")


@dataclass(frozen=True)
class HyperparameterSpec:
    entries: tuple

    def __len__(self):
        return len(self.entries)

    @property
    def names(self):
        return [e.name for e in self.entries]


def decode_hyperparameters(h, spec: HyperparameterSpec) -> dict:
    """Map normalized outputs h in [0,1]^d to concrete hyperparameters.

    Linear: lam = l + h*(u - l). Log: same interpolation on log(l)..log(u),
    then exponentiate. Integer entries round half-up and clamp to [l, u].
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (len(spec),):
        raise ValueError(f"expected {len(spec)} outputs, got shape {h.shape}")
    if np.any(h < 0.0) or np.any(h > 1.0):
        raise ValueError("h must lie in [0,1]")
    decoded = {}
    for hi, entry in zip(h, spec.entries):
        if entry.scale == "log":
            value = math.exp(
                math.log(entry.lower)
                + hi * (math.log(entry.upper) - math.log(entry.lower))
            )
        else:
            value = entry.lower + hi * (entry.upper - entry.lower)
        if entry.integer:
            value = int(min(max(math.floor(value + 0.5), entry.lower), entry.upper))
        decoded[entry.name] = value
    return decoded


GBDT_RANGES = HyperparameterSpec(entries=(
    HyperparamRange("n_estimators", 50, 500, integer=True),
    HyperparamRange("max_depth", 3, 12, integer=True),
    HyperparamRange("num_leaves", 8, 128, integer=True),
    HyperparamRange("learning_rate", 1e-3, 0.3, scale="log"),
    HyperparamRange("feature_fraction", 0.5, 1.0),
    HyperparamRange("bagging_fraction", 0.5, 1.0),
    HyperparamRange("lambda_l1", 1e-8, 10.0, scale="log"),
    HyperparamRange("lambda_l2", 1e-8, 10.0, scale="log"),
    HyperparamRange("min_child_samples", 2, 30, integer=True),
    HyperparamRange("cat_smooth", 1.0, 100.0),
))

MLP_RANGES = HyperparameterSpec(entries=(
    HyperparamRange("hidden_size", 16, 256, integer=True),
    HyperparamRange("dropout", 0.0, 0.5),
    HyperparamRange("learning_rate", 1e-4, 1e-2, scale="log"),
    HyperparamRange("weight_decay", 1e-6, 1e-2, scale="log"),
    HyperparamRange("label_smoothing", 0.0, 0.2),
    HyperparamRange("mixup_alpha", 0.0, 0.4),
))


# ---------------------------------------------------------------------------
# evolution machinery


class InnovationTracker:
    """Per-run registry of structural gene identity.

    The same (in, out) pair always receives the same innovation number
    within a run; splitting the same connection always yields the same new
    node id. This keeps crossover alignment meaningful across genomes.
    """

    def __init__(self, next_node_id: int = 0):
        self._conn = {}
        self._split = {}
        self._next_innovation = 0
        self._next_node = next_node_id

    def conn_innovation(self, in_node: int, out_node: int) -> int:
        key = (in_node, out_node)
        if key not in self._conn:
            self._conn[key] = self._next_innovation
            self._next_innovation += 1
        return self._conn[key]

    def node_for_split(self, innovation: int) -> int:
        if innovation not in self._split:
            self._split[innovation] = self._next_node
            self._next_node += 1
        return self._split[innovation]

    def reserve_nodes(self, count: int) -> None:
        self._next_node = max(self._next_node, count)


@dataclass
class NeatConfig:
    population_size: int = 20
    generations: int = 10
    input_vector: tuple = (1.0, 1.0, 1.0, 1.0)
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.4
    compatibility_threshold: float = 3.0
    weight_mutate_rate: float = 0.8
    weight_sigma: float = 0.5
    weight_replace_rate: float = 0.1
    add_node_rate: float = 0.1
    add_connection_rate: float = 0.15
    elitism: int = 2
    stagnation_limit: int = 15
    seed: int = 0

    def validate(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        for name in ("weight_mutate_rate", "weight_replace_rate",
                     "add_node_rate", "add_connection_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must lie in [0,1]")
        if self.weight_sigma <= 0:
            raise ValueError("weight_sigma must be positive")
        if self.elitism < 0 or self.elitism > self.population_size:
            raise ValueError("elitism must lie in [0, population_size]")
        if len(self.input_vector) < 1:
            raise ValueError("input_vector must be non-empty")


def initial_genome(n_inputs, n_outputs, rng, tracker: InnovationTracker, key=-1) -> Genome:
    """Minimal fully connected input->output genome, N(0,1) weights."""
    nodes = [NodeGene(i, "input") for i in range(n_inputs)]
    nodes += [NodeGene(n_inputs + j, "output") for j in range(n_outputs)]
    tracker.reserve_nodes(n_inputs + n_outputs)
    connections = []
    for i in range(n_inputs):
        for j in range(n_outputs):
            out = n_inputs + j
            connections.append(ConnGene(
                in_node=i, out_node=out,
                weight=float(rng.normal(0.0, 1.0)),
                enabled=True,
                innovation=tracker.conn_innovation(i, out),
            ))
    return Genome(nodes=nodes, connections=connections, key=key)


def _reaches(connections, start: int, goal: int) -> bool:
    """True if `goal` is reachable from `start` over all connections."""
    out_edges = {}
    for c in connections:
        out_edges.setdefault(c.in_node, []).append(c.out_node)
    stack, seen = [start], set()
    while stack:
        node = stack.pop()
        if node == goal:
            return True
        if node in seen:
            continue
        seen.add(node)
        stack.extend(out_edges.get(node, ()))
    return False


def mutate(genome: Genome, cfg: NeatConfig, rng, tracker: InnovationTracker) -> Genome:
    """Return a mutated copy: weight perturbations, add-node, add-connection.

    Structural mutations that would break acyclicity are skipped. Cycle
    checks run over the full connection set (enabled and disabled), so a
    later re-enable can never create a cycle.
    """
    g = genome.copy()
    g.fitness = None
    for conn in g.connections:
        if rng.random() < cfg.weight_mutate_rate:
            if rng.random() < cfg.weight_replace_rate:
                conn.weight = float(rng.normal(0.0, 1.0))
            else:
                conn.weight += float(rng.normal(0.0, cfg.weight_sigma))
            conn.weight = float(np.clip(conn.weight, -WEIGHT_CLIP, WEIGHT_CLIP))

    if cfg.add_node_rate > 0 and rng.random() < cfg.add_node_rate:
        enabled = [c for c in g.connections if c.enabled]
        if enabled:
            conn = enabled[int(rng.integers(len(enabled)))]
            new_id = tracker.node_for_split(conn.innovation)
            if new_id not in g.node_ids():
                old_weight = conn.weight
                conn.enabled = False
                g.nodes.append(NodeGene(new_id, "hidden"))
                g.connections.append(ConnGene(
                    conn.in_node, new_id, 1.0, True,
                    tracker.conn_innovation(conn.in_node, new_id)))
                g.connections.append(ConnGene(
                    new_id, conn.out_node, old_weight, True,
                    tracker.conn_innovation(new_id, conn.out_node)))

    if cfg.add_connection_rate > 0 and rng.random() < cfg.add_connection_rate:
        existing = {(c.in_node, c.out_node) for c in g.connections}
        sources = g.nodes_of_kind("input") + g.nodes_of_kind("hidden")
        targets = g.nodes_of_kind("hidden") + g.nodes_of_kind("output")
        candidates = []
        for a in sources:
            for b in targets:
                if a == b or (a, b) in existing:
                    continue
                if _reaches(g.connections, b, a):
                    continue  # would close a cycle
                candidates.append((a, b))
        if candidates:
            candidates.sort()
            a, b = candidates[int(rng.integers(len(candidates)))]
            g.connections.append(ConnGene(
                a, b, float(rng.normal(0.0, 1.0)), True,
                tracker.conn_innovation(a, b)))
    return g


def compatibility_distance(a: Genome, b: Genome, c1=1.0, c2=1.0, c3=0.4) -> float:
    """delta = c1*E/N + c2*D/N + c3*Wbar (standard excess/disjoint split)."""
    conns_a = {c.innovation: c for c in a.connections}
    conns_b = {c.innovation: c for c in b.connections}
    if not conns_a and not conns_b:
        return 0.0
    max_a = max(conns_a, default=-1)
    max_b = max(conns_b, default=-1)
    matching = conns_a.keys() & conns_b.keys()
    if matching:
        w_bar = sum(abs(conns_a[k].weight - conns_b[k].weight) for k in matching)
        w_bar /= len(matching)
    else:
        w_bar = 0.0
    excess = disjoint = 0
    for k in conns_a.keys() - matching:
        if k > max_b:
            excess += 1
        else:
            disjoint += 1
    for k in conns_b.keys() - matching:
        if k > max_a:
            excess += 1
        else:
            disjoint += 1
    n = max(len(conns_a), len(conns_b))
    if n < 20:
        n = 1
    return c1 * excess / n + c2 * disjoint / n + c3 * w_bar


def crossover(fitter: Genome, other: Genome, rng) -> Genome:
    """Offspring inherits structure from the fitter parent.

    Matching genes pick their weight from either parent uniformly; a gene
    disabled in either parent stays disabled with probability 0.75. Ties
    in fitness break toward the first argument.
    """
    if fitter.fitness is None or other.fitness is None:
        raise ValueError("both parents need evaluated fitness")
    if other.fitness > fitter.fitness:
        fitter, other = other, fitter
    other_conns = {c.innovation: c for c in other.connections}
    child_nodes = [replace(n) for n in fitter.nodes]
    child_conns = []
    for conn in fitter.connections:
        match = other_conns.get(conn.innovation)
        weight = conn.weight
        if match is not None and rng.random() < 0.5:
            weight = match.weight
        enabled = True
        if (not conn.enabled) or (match is not None and not match.enabled):
            enabled = rng.random() >= 0.75
        child_conns.append(ConnGene(
            conn.in_node, conn.out_node, weight, enabled, conn.innovation))
    return Genome(nodes=child_nodes, connections=child_conns)


# ---------------------------------------------------------------------------
# evolve loop


@dataclass
class GenerationStats:
    generation: int
    best_fitness: float
    mean_fitness: float
    species_count: int


@dataclass
class FitnessReport:
    generations: list = field(default_factory=list)
    best_genomes: list = field(default_factory=list)

    def best_trajectory(self):
        return [g.best_fitness for g in self.generations]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("generation,best_fitness,mean_fitness,species_count\n")
            for g in self.generations:
                fh.write(f"{g.generation},{g.best_fitness!r},"
                         f"{g.mean_fitness!r},{g.species_count}\n")


@dataclass
class _Species:
    sid: int
    representative: Genome
    members: list = field(default_factory=list)
    best_fitness: float = -math.inf
    last_improved: int = 0


def _safe_fitness(task):
    objective, genome, eval_seed = task
    try:
        fit = float(objective(genome, eval_seed))
    except Exception:
        return 0.0
    return fit if math.isfinite(fit) else 0.0


def _evaluate_population(population, objective, root_seed, generation, jobs):
    pending = [g for g in population if g.fitness is None]
    tasks = [
        (objective, g, derive_seed(root_seed, "eval", generation, g.key))
        for g in pending
    ]
    if jobs > 1 and len(tasks) > 1:
        try:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_safe_fitness, tasks))
        except Exception:
            results = [_safe_fitness(t) for t in tasks]
    else:
        results = [_safe_fitness(t) for t in tasks]
    for genome, fit in zip(pending, results):
        genome.fitness = fit


def _largest_remainder(shares, total: int):
    shares = np.asarray(shares, dtype=np.float64)
    if shares.sum() <= 0:
        shares = np.ones(len(shares))
    quotas = total * shares / shares.sum()
    counts = np.floor(quotas).astype(np.int64)
    remainders = quotas - counts
    leftover = total - counts.sum()
    for i in sorted(range(len(shares)), key=lambda i: (-remainders[i], i))[:leftover]:
        counts[i] += 1
    return counts


def evolve(objective, spec: HyperparameterSpec, cfg: NeatConfig, jobs: int = 1):
    """Run G generations of evaluate -> speciate -> reproduce.

    objective(genome, eval_seed) -> fitness; exceptions and non-finite
    returns score 0.0. Returns (best genome ever evaluated, FitnessReport).
    All randomness flows from cfg.seed, so runs are bit-reproducible;
    per-evaluation seeds derive from (seed, generation, genome key).
    """
    cfg.validate()
    rng = derive_rng(cfg.seed, "neat")
    tracker = InnovationTracker()
    n_in = len(cfg.input_vector)
    n_out = len(spec)
    population = [
        initial_genome(n_in, n_out, rng, tracker, key=i)
        for i in range(cfg.population_size)
    ]
    next_key = cfg.population_size
    species_list = []
    next_sid = 0
    best_ever = None
    report = FitnessReport()

    for gen in range(cfg.generations):
        _evaluate_population(population, objective, cfg.seed, gen, jobs)
        gen_best = max(population, key=lambda g: (g.fitness, -g.key))
        if best_ever is None or gen_best.fitness > best_ever.fitness:
            best_ever = gen_best.copy()

        # speciate against previous representatives, then refresh them
        for sp in species_list:
            sp.members = []
        for genome in population:
            for sp in species_list:
                if compatibility_distance(
                    genome, sp.representative, cfg.c1, cfg.c2, cfg.c3
                ) < cfg.compatibility_threshold:
                    sp.members.append(genome)
                    break
            else:
                species_list.append(
                    _Species(sid=next_sid, representative=genome.copy(),
                             members=[genome]))
                next_sid += 1
        species_list = [sp for sp in species_list if sp.members]
        for sp in species_list:
            sp.representative = sp.members[0].copy()
            best = max(m.fitness for m in sp.members)
            if best > sp.best_fitness:
                sp.best_fitness = best
                sp.last_improved = gen

        report.generations.append(GenerationStats(
            generation=gen,
            best_fitness=float(gen_best.fitness),
            mean_fitness=float(np.mean([g.fitness for g in population])),
            species_count=len(species_list),
        ))
        report.best_genomes.append(gen_best.copy())

        if gen == cfg.generations - 1:
            break

        # drop stagnant species, never the one holding the current best
        survivors = [
            sp for sp in species_list
            if gen - sp.last_improved <= cfg.stagnation_limit
            or any(m is gen_best for m in sp.members)
        ]
        if survivors:
            species_list = survivors

        elites = sorted(population, key=lambda g: (-g.fitness, g.key))[: cfg.elitism]
        n_offspring = cfg.population_size - len(elites)

        min_fit = min(g.fitness for g in population)
        shares = []
        for sp in species_list:
            adj = sum((m.fitness - min_fit) / len(sp.members) for m in sp.members)
            shares.append(adj)
        quotas = _largest_remainder(shares, n_offspring)

        offspring = []
        for sp, quota in zip(species_list, quotas):
            ranked = sorted(sp.members, key=lambda g: (-g.fitness, g.key))
            pool = ranked[: max(1, math.ceil(len(ranked) / 2))]
            for _ in range(int(quota)):
                if len(pool) == 1:
                    child = mutate(pool[0], cfg, rng, tracker)
                else:
                    i = int(rng.integers(len(pool)))
                    j = int(rng.integers(len(pool)))
                    if i == j:
                        child = mutate(pool[i], cfg, rng, tracker)
                    else:
                        child = mutate(
                            crossover(pool[i], pool[j], rng), cfg, rng, tracker)
                child.key = next_key
                next_key += 1
                offspring.append(child)
        population = [e.copy() for e in elites] + offspring

    return best_ever.copy(), report


__all__ = [
    "NodeGene", "ConnGene", "Genome", "GenomeError", "validate_genome",
    "activate_genome", "HyperparamRange", "HyperparameterSpec",
    "decode_hyperparameters", "GBDT_RANGES", "MLP_RANGES",
    "InnovationTracker", "NeatConfig", "initial_genome", "mutate",
    "compatibility_distance", "crossover", "evolve",
    "FitnessReport", "GenerationStats",
]
