"""Link-prediction pretraining: negative sampling, staged freezing, stats.

One step samples a graph from the mixture, draws a batch of positive
triples, builds queries in both directions (the reverse one through the
inverse relation), corrupts tails for negatives, and takes an Adam step on
the binary cross-entropy objective.  Frozen parameter groups ride along
untouched; each stage re-freezes per its config and restarts the optimizer.
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericError, Tensor, backward, clamp, gather, log as tlog, reshape, sigmoid, tmean
from .checkpoint import save_checkpoint
from .graph import DataError, InductiveSplit, KnowledgeGraph
from .model import GraphContext, Model, score_queries
from .optim import Adam
from .ranking import evaluate_graph, map_name_triples
from .text import TextProvider

log = logging.getLogger(__name__)

EPS = 1e-12


@dataclass(frozen=True)
class StageConfig:
    epochs: int
    lr: float = 5e-4
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        if self.epochs < 0:
            raise DataError("stage epochs must be non-negative")
        if self.lr <= 0:
            raise DataError("stage learning rate must be positive")


@dataclass
class TrainConfig:
    stages: list[StageConfig]
    negatives: int = 32
    batch_size: int = 64
    seed: int = 0
    dim: int = 64
    qcmp_rel_layers: int = 6
    qcmp_ent_layers: int = 6
    gcmp_rel_layers: int = 3
    gcmp_ent_layers: int = 3
    n_query_tokens: int = 1
    decoder_mode: str = "attention"
    use_dtaf: bool = True
    use_edge_scores: bool = True
    include_self_loops: bool = True
    steps_per_epoch: int | None = None
    val_every: int = 10
    eval_on: str = "valid"
    stop_at_mrr: float | None = None
    mixture: list[tuple[str, float]] = field(default_factory=list)

    KEYS = ("stages", "negatives", "batch_size", "seed", "dim",
            "qcmp_rel_layers", "qcmp_ent_layers", "gcmp_rel_layers",
            "gcmp_ent_layers", "n_query_tokens", "decoder_mode", "use_dtaf",
            "use_edge_scores", "include_self_loops", "steps_per_epoch",
            "val_every", "eval_on", "stop_at_mrr", "mixture")

    def __post_init__(self):
        if not self.stages:
            raise DataError("at least one training stage is required")
        if self.negatives < 1:
            raise DataError("negatives-per-positive must be >= 1")
        if self.batch_size < 1:
            raise DataError("batch size must be >= 1")
        if self.eval_on not in ("valid", "train"):
            raise DataError(f"unknown eval target {self.eval_on!r}")
        for stage in self.stages:
            for name in stage.frozen:
                if name not in Model.GROUP_NAMES:
                    raise DataError(f"unknown parameter group {name!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        unknown = set(raw) - set(cls.KEYS)
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        if "stages" not in raw:
            raise DataError("config is missing 'stages'")
        stage_keys = {"epochs", "lr", "frozen"}
        stages = []
        for i, s in enumerate(raw["stages"]):
            bad = set(s) - stage_keys
            if bad:
                raise DataError(f"stage {i} has unknown keys: {sorted(bad)}")
            if "epochs" not in s:
                raise DataError(f"stage {i} is missing 'epochs'")
            stages.append(StageConfig(epochs=int(s["epochs"]),
                                      lr=float(s.get("lr", 5e-4)),
                                      frozen=tuple(s.get("frozen", ()))))
        rest = {k: v for k, v in raw.items() if k != "stages"}
        if "mixture" in rest:
            rest["mixture"] = [(str(d), float(w)) for d, w in rest["mixture"]]
        return cls(stages=stages, **rest)

    @classmethod
    def from_json(cls, path: str) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)


@dataclass
class TrainStats:
    rows: list[dict] = field(default_factory=list)
    stage_seconds: list[float] = field(default_factory=list)

    def record(self, epoch: int, stage: int, loss: float,
               val_mrr: float | None) -> None:
        if not np.isfinite(loss) or loss < 0:
            raise NumericError(f"epoch {epoch}: loss {loss} is not a valid value")
        self.rows.append({"epoch": epoch, "stage": stage, "loss": loss,
                          "val_mrr": val_mrr})

    def losses(self) -> list[float]:
        return [row["loss"] for row in self.rows]

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,stage,loss,val_mrr\n")
            for row in self.rows:
                val = "" if row["val_mrr"] is None else f"{row['val_mrr']:.9f}"
                fh.write(f"{row['epoch']},{row['stage']},{row['loss']:.9f},{val}\n")


def bce_loss(p_pos: float, p_negs) -> float:
    """Scalar reference loss over already-computed probabilities."""
    p_pos = min(max(float(p_pos), EPS), 1.0 - EPS)
    total = -np.log(p_pos)
    p_negs = list(p_negs)
    if p_negs:
        clamped = [min(max(float(p), EPS), 1.0 - EPS) for p in p_negs]
        total -= sum(np.log(1.0 - p) for p in clamped) / len(clamped)
    return float(total)


def sample_negatives(kg: KnowledgeGraph, positive: tuple[int, int, int],
                     n: int, rng) -> np.ndarray:
    """Corrupted tails for one positive, filtered against known truths.

    `rng` is a seed or a numpy Generator.  Sampling is with replacement;
    when every entity is a known true tail the filter is dropped with a
    warning rather than failing.
    """
    if kg.num_entities < 2:
        raise DataError("negative sampling needs at least two entities")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    h, r, t = positive
    true_tails = {tt for hh, rr, tt in kg.triples if hh == h and rr == r}
    true_tails.add(t)
    allowed = np.setdiff1d(np.arange(kg.num_entities), sorted(true_tails))
    if allowed.size == 0:
        log.warning("all entities are true tails for (%d,%d); negatives unfiltered", h, r)
        allowed = np.setdiff1d(np.arange(kg.num_entities), [t])
    return allowed[rng.integers(0, allowed.size, size=n)]


class _TrainGraph:
    """One mixture member: context plus precomputed sampling tables."""

    def __init__(self, split: InductiveSplit, provider: TextProvider,
                 include_self_loops: bool):
        self.split = split
        self.ctx = GraphContext(split.train_graph, provider, include_self_loops)
        kg = self.ctx.kg
        if split.train_triples:
            self.positives, dropped = map_name_triples(kg, split.train_triples)
            if dropped:
                log.warning("%d train positives fall outside the graph", dropped)
            if not self.positives:
                raise DataError("no train positives map onto the graph")
        else:
            self.positives = [kg.triples[i] for i in range(len(kg.triples) // 2)]
        # Positives held out of the message graph must still count as known
        # truths for negative filtering and validation.
        self.true_tails: dict[tuple[int, int], set[int]] = {
            key: set(vals) for key, vals in self.ctx.known_tails.items()}
        for h, r, t in self.positives:
            inv = kg.inverse_of[r]
            self.true_tails.setdefault((h, r), set()).add(t)
            self.true_tails.setdefault((t, inv), set()).add(h)

    def negatives_for(self, query: tuple[int, int], gold: int, n: int,
                      rng: np.random.Generator) -> np.ndarray:
        taken = self.true_tails.get(query)
        universe = np.arange(self.ctx.num_entities)
        allowed = np.setdiff1d(universe, sorted(taken)) if taken else universe
        if allowed.size == 0:
            log.warning("all entities are true tails for %s; negatives unfiltered", query)
            allowed = np.setdiff1d(universe, [gold])
        return allowed[rng.integers(0, allowed.size, size=n)]


def batch_bce(logits: Tensor, golds: np.ndarray, negs: np.ndarray) -> Tensor:
    """Mean BCE over a (Q, E) logit matrix.

    `golds` is (Q,), `negs` is (Q, n); both index candidate columns.
    """
    q, e = logits.shape
    n = negs.shape[1]
    flat = reshape(logits, (q * e,))
    offsets = np.arange(q, dtype=np.int64) * e
    p_pos = clamp(sigmoid(gather(flat, offsets + golds)), EPS, 1.0 - EPS)
    p_neg = clamp(sigmoid(gather(flat, (offsets[:, None] + negs).ravel())),
                  EPS, 1.0 - EPS)
    neg_term = tmean(reshape(tlog(Tensor(1.0) - p_neg), (q, n)), axis=1)
    return tmean(-tlog(p_pos) - neg_term)


@dataclass
class TrainOutcome:
    model: Model
    stats: TrainStats
    best_val_mrr: float | None
    checkpoints: list[str]


def train(config: TrainConfig, provider: TextProvider,
          splits: list[tuple[InductiveSplit, float]] | None = None,
          out_dir: str | None = None) -> TrainOutcome:
    """Run the staged schedule; returns the trained model and its trace."""
    from .graph import load_split
    if splits is None:
        if not config.mixture:
            raise DataError("config lists no graphs to train on")
        splits = [(load_split(d), w) for d, w in config.mixture]
    if not splits:
        raise DataError("no training graphs")
    weights = np.asarray([w for _, w in splits], dtype=np.float64)
    if (weights <= 0).any():
        raise DataError("mixture weights must be positive")
    weights = weights / weights.sum()

    members = [_TrainGraph(split, provider, config.include_self_loops)
               for split, _ in splits]
    rng = np.random.default_rng(config.seed)
    model = Model(rng, dim=config.dim, text_dim=provider.dim,
                  qcmp_rel_layers=config.qcmp_rel_layers,
                  qcmp_ent_layers=config.qcmp_ent_layers,
                  gcmp_rel_layers=config.gcmp_rel_layers,
                  gcmp_ent_layers=config.gcmp_ent_layers,
                  n_query_tokens=config.n_query_tokens,
                  decoder_mode=config.decoder_mode,
                  use_dtaf=config.use_dtaf,
                  use_edge_scores=config.use_edge_scores)

    total_pos = sum(len(m.positives) for m in members)
    steps = config.steps_per_epoch or max(1, round(total_pos / config.batch_size))
    stats = TrainStats()
    checkpoints: list[str] = []
    best_val: float | None = None
    epoch = 0
    stop = False

    def maybe_checkpoint(tag: str, stage_idx: int) -> None:
        if out_dir is None:
            return
        path = os.path.join(out_dir, f"{tag}.ckpt")
        save_checkpoint(path, model, extra={
            "stage": stage_idx, "epoch": epoch, "seed": config.seed})
        if path not in checkpoints:
            checkpoints.append(path)

    def validation_mrr() -> float:
        results = []
        for member in members:
            split = member.split
            if config.eval_on == "train":
                triples = member.positives
                extra = split.train_triples
            else:
                triples, _ = map_name_triples(member.ctx.kg, split.valid_triples)
                extra = (split.train_triples + split.valid_triples
                         + split.test_triples)
                if not triples:
                    continue
            res = evaluate_graph(model, member.ctx, triples,
                                 extra_filter_triples=extra,
                                 batch_size=config.batch_size)
            results.append((res.mrr, res.n_queries))
        if not results:
            raise DataError("no validation queries available")
        total = sum(n for _, n in results)
        return sum(m * n for m, n in results) / total

    for stage_idx, stage in enumerate(config.stages):
        stage_start = time.monotonic()
        for name in Model.GROUP_NAMES:
            model.group(name).frozen = name in stage.frozen
        opt = Adam(model.param_groups(), lr=stage.lr)
        for _ in range(stage.epochs):
            epoch += 1
            epoch_losses = []
            for _ in range(steps):
                member = members[rng.choice(len(members), p=weights)]
                kg = member.ctx.kg
                pos_idx = rng.integers(0, len(member.positives),
                                       size=config.batch_size)
                queries, golds, negs = [], [], []
                for i in pos_idx:
                    h, r, t = member.positives[int(i)]
                    inv = kg.inverse_of[r]
                    for query, gold in (((h, r), t), ((t, inv), h)):
                        queries.append(query)
                        golds.append(gold)
                        negs.append(member.negatives_for(
                            query, gold, config.negatives, rng))
                opt.zero_grad()
                logits = score_queries(model, member.ctx, queries)
                loss = batch_bce(logits, np.asarray(golds, dtype=np.int64),
                                 np.stack(negs))
                loss_value = loss.item()
                if not np.isfinite(loss_value):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}; batch positives: "
                        f"{[tuple(member.positives[int(i)]) for i in pos_idx]}")
                backward(loss, model.param_groups())
                opt.step()
                epoch_losses.append(loss_value)

            val = None
            if config.val_every and (epoch % config.val_every == 0
                                     or epoch == sum(s.epochs for s in config.stages)):
                val = validation_mrr()
                if best_val is None or val > best_val:
                    best_val = val
                    maybe_checkpoint("best", stage_idx)
                if config.stop_at_mrr is not None and val >= config.stop_at_mrr:
                    stop = True
            stats.record(epoch, stage_idx, float(np.mean(epoch_losses)), val)
            if stop:
                break
        stats.stage_seconds.append(time.monotonic() - stage_start)
        maybe_checkpoint(f"stage{stage_idx}", stage_idx)
        if stop:
            break

    if out_dir is not None:
        stats.to_csv(os.path.join(out_dir, "train_stats.csv"))
    return TrainOutcome(model=model, stats=stats, best_val_mrr=best_val,
                        checkpoints=checkpoints)
