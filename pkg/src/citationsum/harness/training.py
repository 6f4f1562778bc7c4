"""Training loop, checkpoints, evaluation and the rho sweep."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import torch

from ..corpus import CorpusSplit, Document, tokenize
from ..losses import dra_loss, nll_loss, total_loss, tra_loss
from ..model import CitationSumModel, ModelConfig, generate
from ..rouge import rouge_l, rouge_n
from .config import TrainConfig, lr_multiplier
from .instances import (
    InstancePlan, Vocabulary, collate_decoder, decoder_context, dump_plan, encode_plan, forward_plans,
    populate_selection_cache, prepare_instances,
)

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class DegenerateDataError(RuntimeError):
    """Too many training instances had to be skipped."""


def model_config(config: TrainConfig, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        model_dim=config.model_dim,
        encoder_layers=config.encoder_layers,
        decoder_layers=config.decoder_layers,
        attention_heads=config.attention_heads,
        feedforward_dim=config.feedforward_dim,
        max_positions=config.max_positions,
        encoder_dropout=config.encoder_dropout,
        dropout=config.decoder_dropout,
    )


def build_model(config: TrainConfig, vocab: Vocabulary) -> CitationSumModel:
    torch.manual_seed(config.rng_seed)
    return CitationSumModel(model_config(config, len(vocab)))


def make_optimizer(model: CitationSumModel, config: TrainConfig):
    groups = [
        {"params": model.encoder_parameters(), "lr": 0.0, "base_lr": config.encoder_lr, "warmup": config.encoder_warmup_steps},
        {"params": model.decoder_parameters(), "lr": 0.0, "base_lr": config.decoder_lr, "warmup": config.decoder_warmup_steps},
    ]
    return torch.optim.Adam(groups, betas=(0.9, 0.999), eps=1e-9)


def set_learning_rates(optimizer, step: int):
    for g in optimizer.param_groups:
        g["lr"] = g["base_lr"] * lr_multiplier(step, g["warmup"])


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, optimizer, config: TrainConfig, vocab: Vocabulary, step: int):
    path = Path(path)
    torch.save(
        {
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "torch_rng": torch.get_rng_state(),
            "step": step,
            "vocab": vocab.itos,
        },
        path,
    )
    sidecar = config.to_text() + f"step = {step}\nvocab_size = {len(vocab)}\nvocab_hash = {vocab.digest()}\n"
    path.with_suffix(".txt").write_text(sidecar, encoding="utf-8")
    return path


def load_checkpoint(path, config: TrainConfig | None = None):
    """Returns (model, optimizer_state, vocab, step, config); the config defaults to the sidecar."""
    from .config import parse_config_text, make_config, FIELD_TYPES

    path = Path(path)
    blob = torch.load(path, weights_only=False)
    if config is None:
        text = path.with_suffix(".txt").read_text(encoding="utf-8")
        lines = [l for l in text.splitlines() if l.split("=", 1)[0].strip() in FIELD_TYPES]
        values = parse_config_text("\n".join(lines))
        scale = values.pop("scale", "desk")
        config = make_config(scale, **values)
    vocab = Vocabulary(blob["vocab"][4:])
    model = CitationSumModel(model_config(config, len(vocab)))
    model.load_state_dict(blob["model"])
    return model, blob, vocab, int(blob["step"]), config


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: CitationSumModel
    vocab: Vocabulary
    losses: list[float]
    checkpoints: list[Path] = field(default_factory=list)
    best_checkpoint: Path | None = None
    val_scores: dict = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    param_trace: list[float] = field(default_factory=list)


def _batch_for_step(step: int, n: int, batch_size: int, seed: int) -> list[int]:
    """Indices for 0-based ``step``: epoch-wise shuffles, stateless so resumption is exact."""
    if batch_size >= n:
        return list(range(n))
    per_epoch = math.ceil(n / batch_size)
    epoch, k = divmod(step, per_epoch)
    order = list(range(n))
    random.Random(seed * 1000003 + epoch).shuffle(order)
    return order[k * batch_size : (k + 1) * batch_size]


def _param_fingerprint(model) -> float:
    return float(sum(p.detach().double().sum() for p in model.parameters()))


def train(
    docs: Mapping[str, Document],
    split: CorpusSplit,
    config: TrainConfig,
    out_dir=None,
    cache=None,
    vocab: Vocabulary | None = None,
    resume_from=None,
    trace_params: bool = False,
) -> TrainResult:
    """Minimise nll + alpha*dra + beta*tra with per-group warm-up/inverse-sqrt learning rates."""
    if not split.train_ids:
        raise TrainingError("empty training split")
    torch.use_deterministic_algorithms(True)
    vocab = vocab or Vocabulary.from_documents(list(docs.values()))
    if cache is None:
        cache = populate_selection_cache(docs, split, config.max_sentences)
    plans, skipped = prepare_instances(split.train_ids, docs, split, cache, vocab, config)
    use_contrastive = config.contrastive
    if skipped:
        logger.warning("skipped %d of %d training instances with no usable citation graph", len(skipped), len(plans))
    if len(skipped) * 2 > len(plans):
        raise DegenerateDataError(f"{len(skipped)} of {len(plans)} training instances are degenerate")
    plans = [p for p in plans if p.trainable]

    model = build_model(config, vocab)
    optimizer = make_optimizer(model, config)
    start = 0
    if resume_from is not None:
        blob = torch.load(resume_from, weights_only=False)
        model.load_state_dict(blob["model"])
        optimizer.load_state_dict(blob["optimizer"])
        torch.set_rng_state(blob["torch_rng"])
        start = int(blob["step"])

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        vocab.save(out / "vocab.txt")
    result = TrainResult(model, vocab, [], skipped=skipped)
    best_score = -1.0

    for step in range(start, config.total_steps):
        model.train()
        set_learning_rates(optimizer, step + 1)
        batch = [plans[i] for i in _batch_for_step(step, len(plans), config.batch_size, config.rng_seed)]
        fb = forward_plans(model, batch, config, with_contrastive=use_contrastive)
        memory, mmask, prefix, gold, gmask = collate_decoder(fb.contexts, fb.targets)
        logits = model.decode(model.embed_prefix(prefix), memory, mmask)
        nll = nll_loss(logits, gold, gmask)
        dra = tra = None
        if use_contrastive and fb.contrastive:
            dra = dra_loss(fb.contrastive)
            with_tokens = [c for c in fb.contrastive if c.alignments]
            tra = tra_loss(with_tokens) if with_tokens else None
        loss = total_loss(nll, dra, tra, config.alpha if dra is not None else 0.0, config.beta if tra is not None else 0.0)
        if not torch.isfinite(loss):
            if out is not None:
                (out / "nonfinite_dump.jsonl").write_text("\n".join(dump_plan(p) for p in batch) + "\n", encoding="utf-8")
            raise TrainingError(f"non-finite loss at step {step + 1}: sources {[p.source_id for p in batch]}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        result.losses.append(float(loss.detach()))
        if trace_params:
            result.param_trace.append(_param_fingerprint(model))

        done = step + 1
        if out is not None and (done % config.checkpoint_every == 0 or done == config.total_steps):
            path = save_checkpoint(out / f"ckpt_{done:06d}.pt", model, optimizer, config, vocab, done)
            result.checkpoints.append(path)
            if split.val_ids:
                report = evaluate(model, split.val_ids, docs, split, config, vocab, cache, checkpoint=path.name, role="val")
                result.val_scores[path.name] = report.mean_rouge1
                if report.mean_rouge1 > best_score:
                    best_score, result.best_checkpoint = report.mean_rouge1, path
            else:
                result.best_checkpoint = path
    if out is not None:
        (out / "losses.txt").write_text("".join(f"{l!r}\n" for l in result.losses), encoding="utf-8")
        if result.best_checkpoint is not None:
            (out / "best_checkpoint.txt").write_text(result.best_checkpoint.name + "\n", encoding="utf-8")
    return result


def moving_average(values: Sequence[float], window: int) -> list[float]:
    out, acc = [], 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        if i >= window - 1:
            out.append(acc / window)
    return out


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    split: str
    checkpoint: str
    per_document: dict  # id -> (rouge1, rouge2, rougeL) F1
    errors: dict = field(default_factory=dict)
    summaries: dict = field(default_factory=dict)

    def _mean(self, k: int) -> float:
        vals = [v[k] for v in self.per_document.values()]
        return sum(vals) / len(vals) if vals else 0.0

    @property
    def mean_rouge1(self) -> float:
        return self._mean(0)

    @property
    def mean_rouge2(self) -> float:
        return self._mean(1)

    @property
    def mean_rougeL(self) -> float:
        return self._mean(2)

    def to_text(self) -> str:
        lines = [f"split={self.split} checkpoint={self.checkpoint}", f"{'id':<16}{'R-1':>8}{'R-2':>8}{'R-L':>8}"]
        for doc_id, (r1, r2, rl) in sorted(self.per_document.items()):
            lines.append(f"{doc_id:<16}{r1:>8.4f}{r2:>8.4f}{rl:>8.4f}")
        for doc_id, err in sorted(self.errors.items()):
            lines.append(f"{doc_id:<16}ERROR {err}")
        lines.append(f"{'mean':<16}{self.mean_rouge1:>8.4f}{self.mean_rouge2:>8.4f}{self.mean_rougeL:>8.4f}")
        return "\n".join(lines)

    def to_records(self) -> list[str]:
        recs = [json.dumps({"id": k, "rouge1": v[0], "rouge2": v[1], "rougeL": v[2]}) for k, v in sorted(self.per_document.items())]
        recs += [json.dumps({"id": k, "error": e}) for k, e in sorted(self.errors.items())]
        recs.append(json.dumps({"split": self.split, "checkpoint": self.checkpoint, "rouge1": self.mean_rouge1,
                                "rouge2": self.mean_rouge2, "rougeL": self.mean_rougeL}))
        return recs


def score_summary(candidate: Sequence[str], reference: Sequence[str]) -> tuple[float, float, float]:
    return rouge_n(candidate, reference, 1).f1, rouge_n(candidate, reference, 2).f1, rouge_l(candidate, reference).f1


def evaluate(
    model: CitationSumModel,
    split_ids,
    docs: Mapping[str, Document],
    split: CorpusSplit,
    config: TrainConfig,
    vocab: Vocabulary,
    cache=None,
    checkpoint: str = "in-memory",
    role: str | None = None,
) -> EvalReport:
    """Decode a summary for each document and score it against its abstract."""
    from .instances import prepare_instance

    if cache is None:
        cache = populate_selection_cache(docs, split, config.max_sentences)
    graph = split.graph()
    role = role or (split.role_of(next(iter(split_ids))) if split_ids else "test")
    report = EvalReport(role, checkpoint, {})
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for sid in sorted(split_ids):
            try:
                plan = prepare_instance(sid, docs, split, cache, vocab, config, graph)
            except ValueError as exc:
                report.errors[sid] = str(exc)
                continue
            reps, _, mask = encode_plan(model, plan)
            ctx = decoder_context(plan, reps, mask, config)
            ids = generate(model, ctx, config.max_summary_length + 1, config.decode_strategy, config.beam_width)
            words = vocab.decode(ids)
            report.summaries[sid] = " ".join(words)
            report.per_document[sid] = score_summary(words, tokenize(docs[sid].abstract))
    model.train(was_training)
    return report


def sweep_rho(values: Sequence[float], docs, split, config: TrainConfig, out_dir=None, eval_role: str = "test"):
    """Train and evaluate once per rho value; returns [(rho, EvalReport)]."""
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"rho {v} outside [0, 1]")
    cache = populate_selection_cache(docs, split, config.max_sentences)
    vocab = Vocabulary.from_documents(list(docs.values()))
    ids = split.ids_for(eval_role) or split.train_ids
    rows = []
    for v in values:
        cfg = config.replace(rho=v)
        sub = None if out_dir is None else Path(out_dir) / f"rho_{v:g}"
        res = train(docs, split, cfg, sub, cache=cache, vocab=vocab)
        rows.append((v, evaluate(res.model, ids, docs, split, cfg, vocab, cache, checkpoint=f"rho={v:g}", role=eval_role)))
    return rows


def rho_table(rows) -> str:
    lines = [f"{'rho':>6}{'R-1':>10}{'R-2':>10}{'R-L':>10}"]
    for v, rep in rows:
        lines.append(f"{v:>6.2f}{rep.mean_rouge1:>10.4f}{rep.mean_rouge2:>10.4f}{rep.mean_rougeL:>10.4f}")
    return "\n".join(lines)


def rho_records(rows) -> list[str]:
    return [json.dumps({"rho": v, "rouge1": r.mean_rouge1, "rouge2": r.mean_rouge2, "rougeL": r.mean_rougeL}) for v, r in rows]
