"""Encoder, pooling and decoder.

A small trainable encoder replaces the pretrained language model; every
document (source or reference) is encoded on its own. The decoder follows
the residual-then-layer-norm ordering in all three sub-blocks.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

SOURCE_SEGMENT, REFERENCE_SEGMENT = 0, 1


@dataclass
class ModelConfig:
    vocab_size: int
    model_dim: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    attention_heads: int = 4
    feedforward_dim: int = 128
    max_positions: int = 128
    encoder_dropout: float = 0.1
    dropout: float = 0.4  # decoder

    def __post_init__(self):
        if self.model_dim % self.attention_heads:
            raise ValueError("model_dim must be divisible by attention_heads")
        for name in ("vocab_size", "model_dim", "encoder_layers", "decoder_layers", "attention_heads",
                     "feedforward_dim", "max_positions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.encoder_dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderOutput:
    token_reps: Tensor  # (L, D)
    doc_rep: Optional[Tensor]  # (D,)
    attention_mask: Tensor  # (L,) bool, True = real token


@dataclass
class DecoderContext:
    memory: Tensor  # (M, D)
    memory_mask: Tensor  # (M,) bool
    generated_prefix: list = field(default_factory=list)
    # (document index, position) per memory row; document 0 is the source
    provenance: list = field(default_factory=list)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.dropout = dropout

    def forward(self, query: Tensor, key: Tensor, key_mask: Optional[Tensor] = None, causal: bool = False) -> Tensor:
        """query (B, Tq, D), key/value (B, Tk, D); key_mask (B, Tk) True for attendable keys."""
        b, tq, d = query.shape
        tk = key.shape[1]
        q = self.q_proj(query).view(b, tq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(key).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(key).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        blocked = torch.zeros(b, 1, tq, tk, dtype=torch.bool, device=query.device)
        if key_mask is not None:
            blocked = blocked | ~key_mask[:, None, None, :]
        if causal:
            blocked = blocked | torch.triu(torch.ones(tq, tk, dtype=torch.bool, device=query.device), diagonal=1)
        scores = scores.masked_fill(blocked, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        attn = F.dropout(attn, self.dropout, self.training)
        out = (attn @ v).transpose(1, 2).reshape(b, tq, d)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.dropout(F.gelu(self.fc1(x))))


class EncoderLayer(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        p = cfg.encoder_dropout
        self.norm1 = nn.LayerNorm(cfg.model_dim)
        self.attn = MultiHeadAttention(cfg.model_dim, cfg.attention_heads)
        self.norm2 = nn.LayerNorm(cfg.model_dim)
        self.ffn = FeedForward(cfg.model_dim, cfg.feedforward_dim, p)
        self.dropout = nn.Dropout(p)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.dropout(self.attn(h, h, key_mask=mask))
        return x + self.dropout(self.ffn(self.norm2(x)))


class DecoderLayer(nn.Module):
    """x <- LN(x + SelfAttn(x)); x <- LN(x + CrossAttn(x, memory)); x <- LN(x + FFN(x))."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        p = cfg.dropout
        self.self_attn = MultiHeadAttention(cfg.model_dim, cfg.attention_heads)
        self.norm1 = nn.LayerNorm(cfg.model_dim)
        self.cross_attn = MultiHeadAttention(cfg.model_dim, cfg.attention_heads)
        self.norm2 = nn.LayerNorm(cfg.model_dim)
        self.ffn = FeedForward(cfg.model_dim, cfg.feedforward_dim, p)
        self.norm3 = nn.LayerNorm(cfg.model_dim)
        self.dropout = nn.Dropout(p)

    def forward(self, y: Tensor, memory: Tensor, memory_mask: Tensor) -> Tensor:
        y = self.norm1(y + self.dropout(self.self_attn(y, y, causal=True)))
        y = self.norm2(y + self.dropout(self.cross_attn(y, memory, key_mask=memory_mask)))
        return self.norm3(y + self.dropout(self.ffn(y)))


class CitationSumModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.model_dim
        # encoder group
        self.token_embedding = nn.Embedding(cfg.vocab_size, d)
        self.position_embedding = nn.Embedding(cfg.max_positions, d)
        self.segment_embedding = nn.Embedding(2, d)
        self.encoder_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.encoder_layers))
        self.encoder_norm = nn.LayerNorm(d)
        self.pool_proj = nn.Linear(2 * d, d)
        # decoder group
        self.decoder_position_embedding = nn.Embedding(cfg.max_positions, d)
        self.decoder_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.decoder_layers))
        self.output_proj = nn.Linear(d, cfg.vocab_size)
        self.reset_parameters()

    def reset_parameters(self):
        for name, p in self.named_parameters():
            if p.dim() > 1:
                nn.init.normal_(p, std=0.02 if "embedding" in name else 1.0 / math.sqrt(p.shape[1]))
            elif name.endswith("bias"):
                nn.init.zeros_(p)

    def encoder_parameters(self):
        prefixes = ("token_embedding", "position_embedding", "segment_embedding", "encoder_", "pool_proj")
        return [p for n, p in self.named_parameters() if n.startswith(prefixes)]

    def decoder_parameters(self):
        enc = {id(p) for p in self.encoder_parameters()}
        return [p for p in self.parameters() if id(p) not in enc]

    # -- encoder side ---------------------------------------------------

    def embed_tokens(self, token_ids: Tensor, segment_id: int | Tensor = SOURCE_SEGMENT) -> Tensor:
        """Sum of token, position and segment embeddings; accepts (L,) or (B, L) ids."""
        if token_ids.shape[-1] > self.cfg.max_positions:
            raise IndexError(f"sequence length {token_ids.shape[-1]} exceeds max_positions {self.cfg.max_positions}")
        if token_ids.numel() and (int(token_ids.min()) < 0 or int(token_ids.max()) >= self.cfg.vocab_size):
            raise IndexError("token id out of range")
        positions = torch.arange(token_ids.shape[-1], device=token_ids.device)
        seg = torch.as_tensor(segment_id, device=token_ids.device)
        if seg.dim() == 1 and token_ids.dim() == 2:
            seg = seg[:, None]
        return self.token_embedding(token_ids) + self.position_embedding(positions) + self.segment_embedding(seg)

    def encode(self, embedded: Tensor, mask: Tensor) -> Tensor:
        """Contextual token representations, (B, L, D); padded rows are zeroed."""
        if embedded.dim() != 3 or mask.shape != embedded.shape[:2]:
            raise ValueError(f"shape mismatch: embedded {tuple(embedded.shape)}, mask {tuple(mask.shape)}")
        x = embedded
        for layer in self.encoder_layers:
            x = layer(x, mask)
        return self.encoder_norm(x) * mask[..., None].to(x.dtype)

    def pool(self, token_reps: Tensor, mask: Tensor) -> Tensor:
        """FFN([max; mean]) over unmasked rows; (B, L, D) -> (B, D)."""
        return self.pool_proj(pool_features(token_reps, mask))

    def encode_documents(self, token_ids: Tensor, mask: Tensor, segments) -> tuple[Tensor, Tensor]:
        reps = self.encode(self.embed_tokens(token_ids, segments), mask)
        return reps, self.pool(reps, mask)

    # -- decoder side ---------------------------------------------------

    def embed_prefix(self, prefix_ids: Tensor) -> Tensor:
        if prefix_ids.shape[-1] > self.cfg.max_positions:
            raise IndexError("prefix longer than max_positions")
        positions = torch.arange(prefix_ids.shape[-1], device=prefix_ids.device)
        return self.token_embedding(prefix_ids) + self.decoder_position_embedding(positions)

    def decode(self, prefix_embeddings: Tensor, memory: Tensor, memory_mask: Tensor) -> Tensor:
        """Next-token logits for every prefix position, (B, T, V)."""
        if prefix_embeddings.dim() != 3 or memory.dim() != 3 or memory.shape[-1] != prefix_embeddings.shape[-1]:
            raise ValueError("shape mismatch between prefix and memory")
        if memory_mask.shape != memory.shape[:2]:
            raise ValueError("memory mask shape mismatch")
        y = prefix_embeddings
        for layer in self.decoder_layers:
            y = layer(y, memory, memory_mask)
        return self.output_proj(y)

    def decoder_step(self, context: DecoderContext, prefix_embeddings: Tensor) -> Tensor:
        """Single-instance form of :meth:`decode`: (T, D) prefix -> (T, V) logits."""
        if prefix_embeddings.dim() != 2 or prefix_embeddings.shape[0] < 1:
            raise ValueError("prefix must be a non-empty (T, D) matrix")
        if context.memory.shape[0] < 1:
            raise ValueError("memory is empty")
        return self.decode(prefix_embeddings[None], context.memory[None], context.memory_mask[None])[0]


def pool_features(token_reps: Tensor, mask: Tensor) -> Tensor:
    """[max; mean] over real rows, the input of the pooling projection."""
    counts = mask.sum(dim=-1, keepdim=True)
    if bool((counts == 0).any()):
        raise ValueError("cannot pool a sequence with every position masked")
    m = mask[..., None]
    neg_inf = torch.finfo(token_reps.dtype).min
    mx = token_reps.masked_fill(~m, neg_inf).max(dim=-2).values
    mean = (token_reps * m.to(token_reps.dtype)).sum(dim=-2) / counts.to(token_reps.dtype)
    return torch.cat([mx, mean], dim=-1)


def build_decoder_memory(
    source: EncoderOutput,
    refs: Sequence[tuple[EncoderOutput, float]],
    per_ref_budget: int,
    source_budget: int,
    ref_ids: Sequence[str] | None = None,
) -> DecoderContext:
    """Truncated source rows, then references by descending edge weight (ties by id)."""
    if per_ref_budget < 1 or source_budget < 1:
        raise ValueError("budgets must be >= 1")
    ids = list(ref_ids) if ref_ids is not None else [f"{i:08d}" for i in range(len(refs))]
    order = sorted(range(len(refs)), key=lambda i: (-refs[i][1], ids[i]))
    rows, masks, prov = [], [], []

    def take(out: EncoderOutput, budget: int, doc_index: int):
        real = out.attention_mask.nonzero().flatten()[:budget]
        rows.append(out.token_reps[real])
        masks.append(torch.ones(len(real), dtype=torch.bool))
        prov.extend((doc_index, int(p)) for p in real)

    take(source, source_budget, 0)
    for i in order:
        take(refs[i][0], per_ref_budget, i + 1)
    return DecoderContext(torch.cat(rows), torch.cat(masks), [], prov)


@torch.no_grad()
def generate(
    model: CitationSumModel,
    context: DecoderContext,
    max_length: int,
    strategy: str = "greedy",
    beam_width: int = 4,
) -> list[int]:
    """Autoregressive decoding from BOS; the EOS token is not returned."""
    if max_length < 1:
        raise ValueError("max_length must be >= 1")
    if strategy == "greedy":
        return _greedy(model, context, max_length)
    if strategy == "beam":
        return _beam(model, context, max_length, beam_width)
    raise ValueError(f"unknown decoding strategy {strategy!r}")


def _greedy(model, context, max_length):
    prefix = [BOS]
    out = []
    mem, mmask = context.memory[None], context.memory_mask[None]
    for _ in range(max_length):
        logits = model.decode(model.embed_prefix(torch.tensor([prefix])), mem, mmask)[0, -1]
        tok = int(torch.argmax(logits))  # first maximum = lowest id
        if tok == EOS:
            break
        out.append(tok)
        prefix.append(tok)
    return out


def _beam(model, context, max_length, width):
    if width < 1:
        raise ValueError("beam width must be >= 1")
    alive = [([BOS], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for _ in range(max_length):
        if not alive:
            break
        prefixes = torch.tensor([p for p, _ in alive])
        mem = context.memory[None].expand(len(alive), -1, -1)
        mmask = context.memory_mask[None].expand(len(alive), -1)
        logp = torch.log_softmax(model.decode(model.embed_prefix(prefixes), mem, mmask)[:, -1], dim=-1)
        total = torch.tensor([s for _, s in alive], dtype=logp.dtype)[:, None] + logp
        flat = total.flatten()
        # stable sort keeps lower (hypothesis, token) index first among ties
        order = torch.sort(flat, descending=True, stable=True).indices[:width]
        vocab = logp.shape[1]
        nxt = []
        for idx in order.tolist():
            h, tok = divmod(idx, vocab)
            seq = alive[h][0] + [tok]
            score = float(flat[idx])
            if tok == EOS:
                finished.append((seq, score))
            else:
                nxt.append((seq, score))
        alive = nxt
        if len(finished) >= width:
            break
    pool = finished + alive
    best = max(pool, key=lambda t: t[1] / (len(t[0]) - 1))
    seq = best[0][1:]
    return seq[:-1] if seq and seq[-1] == EOS else seq
