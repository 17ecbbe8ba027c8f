"""Block importance: entropy profiles, stage detection, rankings, plans.

The residual stream of an L-layer trace is sampled at 2L+1 boundaries
F[0..2L]: the embedding output, then per layer the post-attention and
post-MLP states. Blocks are indexed 1..L at every granularity and map onto
boundary pairs

    full layer l  : F[2l-2] -> F[2l]
    attention   l : F[2l-2] -> F[2l-1]
    MLP         l : F[2l-1] -> F[2l]

so a layer's entropy increase telescopes exactly into its attention part
plus its MLP part.

Two importance criteria:

* entropy increase — delta H of the block, ranked ascending; blocks adding
  the least entropy are pruned first. Stage 1 (the prefix up to the entropy
  minimum of the layer curve) is protected.
* cosine distance — 1 - mean per-token cosine between block input and
  output rows, ranked ascending (most-similar blocks pruned first), the
  convention of the cosine-similarity pruning baselines. No stage
  protection unless an explicit start index is given.

CSV columns: block_index, position, h_nats, delta_h_nats, score, rank,
pruned. block_index 0 is the embedding boundary row. Plans serialize to
JSON: {granularity, criterion, estimator, s_start, k, ranked[], prune_set[]}.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import CapacityError, ContractError, StructureError
from .estimators import (
    Bucket,
    EstimatorConfig,
    Knn,
    Renyi,
    bucket_entropy,
    knn_entropy,
    renyi_entropy,
)
from .model import BlockMask
from .trace import ActivationTrace, SamplePolicy, expected_labels, subsample


class Granularity(Enum):
    FULL_LAYER = "layer"
    ATTENTION = "attention"
    MLP = "mlp"


class Criterion(Enum):
    ENTROPY_INCREASE = "entropy"
    COSINE_DISTANCE = "cosine"


def block_boundaries(granularity: Granularity, block: int) -> tuple[int, int]:
    """(input, output) snapshot indices of 1-based `block`."""
    if block < 1:
        raise ContractError(f"block index is 1-based, got {block}")
    if granularity is Granularity.FULL_LAYER:
        return 2 * block - 2, 2 * block
    if granularity is Granularity.ATTENTION:
        return 2 * block - 2, 2 * block - 1
    return 2 * block - 1, 2 * block


@dataclass
class EntropyProfile:
    estimator: EstimatorConfig
    granularity: Granularity
    h_values: np.ndarray            # (2L+1,) nats, snapshot order
    delta_h: np.ndarray             # (L,) nats, blocks 1..L
    block_count: int

    @property
    def layer_curve(self) -> np.ndarray:
        """Residual entropy entering layer 1 and after each layer."""
        return self.h_values[::2]

    def stage_start(self) -> int:
        return stage_start(self.layer_curve)

    def boundaries(self, block: int) -> tuple[int, int]:
        return block_boundaries(self.granularity, block)


def stage_start(h_curve: Sequence[float]) -> int:
    """First block of the entropy-increasing stage.

    `h_curve` holds the residual-stream entropy at block boundaries, entry 0
    being the input of block 1. Returns the 1-based index of the block
    immediately after the global minimum, ties broken toward the earliest
    minimum. Blocks before it are protected from pruning.
    """
    curve = np.asarray(h_curve, dtype=np.float64)
    if curve.ndim != 1 or curve.size == 0:
        raise ContractError("h_curve must be a non-empty 1-D sequence")
    return int(np.argmin(curve)) + 1


def _entropy_of(sample: np.ndarray, config: EstimatorConfig) -> float:
    kind = config.kind
    if isinstance(kind, Bucket):
        return bucket_entropy(sample, kind.bins).nats
    if isinstance(kind, Knn):
        return knn_entropy(sample, kind.k).nats
    if isinstance(kind, Renyi):
        return renyi_entropy(sample, kind.alpha, kind.bins).nats
    raise ContractError(f"unknown estimator kind {kind!r}")


def build_profile(trace: ActivationTrace, config: EstimatorConfig,
                  granularity: Granularity, threads: int = 1) -> EntropyProfile:
    """Entropy at every snapshot boundary plus per-block increases.

    Each snapshot's entropy is computed exactly once and shared between the
    adjacent blocks; subsampling is applied to the whole trace first so all
    boundaries see the same token rows.
    """
    L = trace.layer_count
    want = expected_labels(L)
    got = [label for label, _ in trace.snapshots]
    if got != want:
        missing = [w for w in want if w not in got]
        raise StructureError(
            f"trace snapshot sequence incomplete: missing {missing or got}"
        )
    working = subsample(trace, config.sample_policy)

    def entropy_at(index: int) -> float:
        label, sample = working.snapshots[index]
        try:
            return _entropy_of(sample, config)
        except ContractError as exc:
            raise ContractError(
                f"estimator failed at snapshot (layer {label.layer_index}, "
                f"{label.position.name}): {exc}"
            ) from exc

    indices = range(len(working.snapshots))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            h = list(pool.map(entropy_at, indices))
    else:
        h = [entropy_at(i) for i in indices]
    h_values = np.array(h, dtype=np.float64)
    delta = np.empty(L, dtype=np.float64)
    for block in range(1, L + 1):
        i, o = block_boundaries(granularity, block)
        delta[block - 1] = h_values[o] - h_values[i]
    return EntropyProfile(
        estimator=config,
        granularity=granularity,
        h_values=h_values,
        delta_h=delta,
        block_count=L,
    )


@dataclass(frozen=True)
class ImportanceScore:
    block_index: int
    score: float
    criterion: Criterion
    excluded_tokens: int = 0


def cosine_importance(trace: ActivationTrace,
                      granularity: Granularity) -> list[ImportanceScore]:
    """1 - mean per-token cosine similarity between block input and output.

    Zero-norm token rows cannot define an angle: they are excluded from the
    mean and counted on the score. A snapshot pair with no usable token at
    all is a degenerate input.
    """
    L = trace.layer_count
    samples = [s.astype(np.float64) for _, s in trace.snapshots]
    scores = []
    for block in range(1, L + 1):
        i, o = block_boundaries(granularity, block)
        x, y = samples[i], samples[o]
        nx = np.linalg.norm(x, axis=1)
        ny = np.linalg.norm(y, axis=1)
        valid = (nx > 0) & (ny > 0)
        excluded = int((~valid).sum())
        if not valid.any():
            raise StructureError(
                f"block {block}: all token rows have zero norm "
                "(degenerate input)"
            )
        cos = (x[valid] * y[valid]).sum(axis=1) / (nx[valid] * ny[valid])
        scores.append(ImportanceScore(
            block_index=block,
            score=float(np.mean(1.0 - cos)),
            criterion=Criterion.COSINE_DISTANCE,
            excluded_tokens=excluded,
        ))
    return scores


@dataclass
class PruningPlan:
    granularity: Granularity
    criterion: Criterion
    s_start: int
    k: int
    ranked: list[ImportanceScore]       # eligible blocks, ascending score
    prune_set: tuple[int, ...]          # first k of the ranking
    estimator: EstimatorConfig | None = None

    def prefix_mask(self, layers: int, k: int | None = None) -> BlockMask:
        """BlockMask skipping the first k ranked blocks (default: plan k)."""
        k = self.k if k is None else k
        if k > len(self.ranked):
            raise CapacityError(
                f"k={k} exceeds the {len(self.ranked)} ranked blocks",
                eligible=len(self.ranked),
            )
        skip_att = [False] * layers
        skip_mlp = [False] * layers
        for entry in self.ranked[:k]:
            layer = entry.block_index - 1
            if layer >= layers:
                raise StructureError(
                    f"plan block {entry.block_index} exceeds model depth {layers}"
                )
            if self.granularity in (Granularity.FULL_LAYER, Granularity.ATTENTION):
                skip_att[layer] = True
            if self.granularity in (Granularity.FULL_LAYER, Granularity.MLP):
                skip_mlp[layer] = True
        return BlockMask(tuple(skip_att), tuple(skip_mlp))

    def to_json(self) -> str:
        doc = {
            "granularity": self.granularity.value,
            "criterion": self.criterion.value,
            "estimator": _estimator_doc(self.estimator),
            "s_start": self.s_start,
            "k": self.k,
            "ranked": [
                {"block_index": e.block_index, "score": e.score}
                for e in self.ranked
            ],
            "prune_set": list(self.prune_set),
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "PruningPlan":
        doc = json.loads(text)
        criterion = Criterion(doc["criterion"])
        ranked = [
            ImportanceScore(e["block_index"], e["score"], criterion)
            for e in doc["ranked"]
        ]
        return PruningPlan(
            granularity=Granularity(doc["granularity"]),
            criterion=criterion,
            s_start=int(doc["s_start"]),
            k=int(doc["k"]),
            ranked=ranked,
            prune_set=tuple(doc["prune_set"]),
            estimator=_estimator_from_doc(doc.get("estimator")),
        )


def _estimator_doc(config: EstimatorConfig | None):
    if config is None:
        return None
    kind = config.kind
    doc = {"sample_max_tokens": config.sample_policy.max_tokens,
           "sample_seed": config.sample_policy.seed}
    if isinstance(kind, Bucket):
        doc.update(kind="bucket", bins=kind.bins)
    elif isinstance(kind, Knn):
        doc.update(kind="knn", k=kind.k)
    else:
        doc.update(kind="renyi", alpha=kind.alpha, bins=kind.bins)
    return doc


def _estimator_from_doc(doc) -> EstimatorConfig | None:
    if doc is None:
        return None
    policy = SamplePolicy(doc["sample_max_tokens"], doc["sample_seed"])
    if doc["kind"] == "bucket":
        return EstimatorConfig(Bucket(doc["bins"]), policy)
    if doc["kind"] == "knn":
        return EstimatorConfig(Knn(doc["k"]), policy)
    return EstimatorConfig(Renyi(doc["alpha"], doc["bins"]), policy)


def make_plan(source: EntropyProfile | Sequence[ImportanceScore], k: int,
              s_start_override: int | None = None) -> PruningPlan:
    """Rank eligible blocks ascending by score and prune the first k.

    Eligible blocks are those with index >= S_start. For an entropy profile
    S_start comes from the profile's layer curve; for cosine scores there is
    no stage rule and every block is eligible unless an override is given.
    Ties break toward the lower block index so plans are reproducible.
    """
    if k < 0:
        raise ContractError(f"k must be >= 0, got {k}")
    if isinstance(source, EntropyProfile):
        criterion = Criterion.ENTROPY_INCREASE
        s_start = source.stage_start() if s_start_override is None else s_start_override
        entries = [
            ImportanceScore(block, float(source.delta_h[block - 1]), criterion)
            for block in range(1, source.block_count + 1)
        ]
        granularity = source.granularity
        estimator = source.estimator
    else:
        entries = list(source)
        if not entries:
            raise ContractError("no importance scores given")
        criterion = entries[0].criterion
        granularity = None
        estimator = None
        s_start = 1 if s_start_override is None else s_start_override
    s_start = max(1, s_start)
    eligible = [e for e in entries if e.block_index >= s_start]
    if k > len(eligible):
        raise CapacityError(
            f"k={k} exceeds the {len(eligible)} blocks eligible at "
            f"S_start={s_start}",
            eligible=len(eligible),
        )
    ranked = sorted(eligible, key=lambda e: (e.score, e.block_index))
    return PruningPlan(
        granularity=granularity or Granularity.FULL_LAYER,
        criterion=criterion,
        s_start=s_start,
        k=k,
        ranked=ranked,
        prune_set=tuple(e.block_index for e in ranked[:k]),
        estimator=estimator,
    )


def make_cosine_plan(trace: ActivationTrace, granularity: Granularity, k: int,
                     s_start_override: int | None = None) -> PruningPlan:
    plan = make_plan(cosine_importance(trace, granularity), k, s_start_override)
    plan.granularity = granularity
    return plan


def _spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation with average ranks on ties."""
    def ranks(v: np.ndarray) -> np.ndarray:
        order = np.argsort(v, kind="stable")
        r = np.empty(v.size, dtype=np.float64)
        r[order] = np.arange(1, v.size + 1)
        for value in np.unique(v):
            tie = v == value
            if tie.sum() > 1:
                r[tie] = r[tie].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx ** 2).sum() * (ry ** 2).sum())
    if denom == 0:
        raise ContractError("rank correlation undefined: constant ranking")
    return float((rx * ry).sum() / denom)


def rank_correlation(plan_a: PruningPlan, plan_b: PruningPlan) -> float:
    """Spearman correlation of the two plans' scores over the blocks they
    both rank."""
    if plan_a.granularity != plan_b.granularity:
        raise ContractError("plans have different granularities")
    blocks_a = {e.block_index: e.score for e in plan_a.ranked}
    blocks_b = {e.block_index: e.score for e in plan_b.ranked}
    shared = sorted(set(blocks_a) & set(blocks_b))
    if len(shared) < 2:
        raise ContractError(
            f"plans share only {len(shared)} eligible blocks; need >= 2"
        )
    x = np.array([blocks_a[b] for b in shared])
    y = np.array([blocks_b[b] for b in shared])
    return _spearman(x, y)


@dataclass
class SweepRow:
    config: EstimatorConfig
    profile: EntropyProfile | None
    plan: PruningPlan | None
    error: str | None = None


@dataclass
class SweepResult:
    rows: list[SweepRow]
    correlation: np.ndarray     # NaN where either side errored

    def table(self) -> list[dict]:
        out = []
        for row in self.rows:
            label = row.config.label()
            if row.plan is None:
                out.append({"config": label, "error": row.error})
                continue
            for rank, entry in enumerate(row.plan.ranked, start=1):
                out.append({
                    "config": label,
                    "block_index": entry.block_index,
                    "score": entry.score,
                    "rank": rank,
                })
        return out


def sweep(trace: ActivationTrace, grid: Sequence[EstimatorConfig],
          granularity: Granularity, k: int = 0, threads: int = 1,
          s_start_override: int | None = None) -> SweepResult:
    """One profile and plan per grid entry plus their pairwise rank
    correlations. Per-entry failures are recorded, not fatal."""
    rows: list[SweepRow] = []
    for config in grid:
        try:
            profile = build_profile(trace, config, granularity, threads=threads)
            plan = make_plan(profile, k, s_start_override)
            rows.append(SweepRow(config, profile, plan))
        except Exception as exc:  # noqa: BLE001 - collected per spec
            rows.append(SweepRow(config, None, None, error=str(exc)))
    n = len(rows)
    corr = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(n):
            if rows[i].plan is None or rows[j].plan is None:
                continue
            if i == j:
                corr[i, j] = 1.0
            elif not np.isnan(corr[j, i]):
                corr[i, j] = corr[j, i]
            else:
                corr[i, j] = rank_correlation(rows[i].plan, rows[j].plan)
    return SweepResult(rows=rows, correlation=corr)


# -- tabular serialization ----------------------------------------------------

_POSITION_NAME = {
    Granularity.FULL_LAYER: "layer",
    Granularity.ATTENTION: "attention",
    Granularity.MLP: "mlp",
}

CSV_COLUMNS = ["block_index", "position", "h_nats", "delta_h_nats",
               "score", "rank", "pruned"]


def profile_csv(profile: EntropyProfile, plan: PruningPlan | None = None) -> str:
    """Render a profile (and optionally its plan) as CSV.

    Starts with a '# config:' comment recording the estimator verbatim. The
    block_index 0 row is the embedding boundary; h_nats of a block row is
    the entropy at the block's output boundary.
    """
    buf = io.StringIO()
    buf.write(
        f"# config: estimator={profile.estimator.label()} "
        f"max_tokens={profile.estimator.sample_policy.max_tokens} "
        f"sample_seed={profile.estimator.sample_policy.seed} "
        f"granularity={profile.granularity.value} "
        f"s_start={profile.stage_start()}\n"
    )
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerow([0, "embedding", repr(float(profile.h_values[0])),
                     "", "", "", ""])
    rank_of = {}
    pruned = set()
    if plan is not None:
        rank_of = {e.block_index: r for r, e in enumerate(plan.ranked, start=1)}
        pruned = set(plan.prune_set)
    for block in range(1, profile.block_count + 1):
        _, out_idx = profile.boundaries(block)
        delta = float(profile.delta_h[block - 1])
        writer.writerow([
            block,
            _POSITION_NAME[profile.granularity],
            repr(float(profile.h_values[out_idx])),
            repr(delta),
            repr(delta),
            rank_of.get(block, ""),
            str(block in pruned).lower() if block in rank_of else "",
        ])
    return buf.getvalue()


def read_profile_csv(text: str) -> tuple[dict, list[dict]]:
    """Parse a profile CSV back into (config header fields, block rows)."""
    header: dict = {}
    lines = []
    for line in text.splitlines():
        if line.startswith("# config:"):
            for item in line[len("# config:"):].strip().split():
                key, _, value = item.partition("=")
                header[key] = value
        elif line.strip():
            lines.append(line)
    rows = list(csv.DictReader(lines))
    blocks = []
    for row in rows:
        if row["block_index"] == "0":
            continue
        blocks.append({
            "block_index": int(row["block_index"]),
            "position": row["position"],
            "h_nats": float(row["h_nats"]),
            "delta_h_nats": float(row["delta_h_nats"]),
        })
    if not blocks:
        raise ContractError("profile CSV contains no block rows")
    return header, blocks


def correlation_csv(result: SweepResult) -> str:
    labels = [row.config.label() for row in result.rows]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["config"] + labels)
    for label, row in zip(labels, result.correlation):
        writer.writerow([label] + [repr(float(v)) for v in row])
    return buf.getvalue()
