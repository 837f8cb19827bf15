"""Encoder backend: a bidirectional MLM providing embeddings, mask filling,
and pseudo-log-likelihood scoring.

Two initialization modes:

* pretrained: ``from_pretrained(model_id)`` with its own tokenizer (requires
  the weights to be available locally or downloadable).
* untrained: a randomly initialized model of the standard base architecture
  (768-dim hidden state, 30,522-token vocabulary) with a synthetic WordPiece
  vocabulary, seeded so every weight is reproducible.  This keeps the full
  wire contract testable on machines without model assets.

All inference runs in eval mode with gradients off, so identical requests
return bitwise-identical floats on the same hardware.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
import torch
from transformers import BertConfig, BertForMaskedLM

DEFAULT_MODEL = "bert-base-uncased"
SPECIAL_SURFACE_RE = re.compile(r"^\[(PAD|UNK|CLS|SEP|MASK|unused\d+)\]$")


@dataclass
class ServiceConfig:
    model_id: str = DEFAULT_MODEL
    device: str = "cpu"
    max_batch: int = 32
    port: int = 8900
    pooling: str = "cls"  # or "mean"
    untrained: bool = False
    seed: int = 0
    max_length: int = 512

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError(f"max_batch must be >= 1, got {self.max_batch}")
        if self.pooling not in ("cls", "mean"):
            raise ValueError(f"pooling must be cls or mean, got {self.pooling!r}")


def synthetic_vocab(size: int = 30522) -> dict[str, int]:
    """WordPiece vocabulary laid out like the standard uncased one:
    [PAD], 99 unused slots, [UNK]/[CLS]/[SEP]/[MASK], single characters with
    their ``##`` continuations (so any ASCII word tokenizes without [UNK]),
    then filler pieces up to ``size`` entries."""
    chars = "abcdefghijklmnopqrstuvwxyz0123456789"
    surfaces = ["[PAD]"]
    surfaces += [f"[unused{i}]" for i in range(99)]
    surfaces += ["[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    surfaces += list(chars)
    surfaces += [f"##{c}" for c in chars]
    i = 0
    while len(surfaces) < size:
        surfaces.append(f"xq{i}" if i % 3 else f"##xq{i}")
        i += 1
    return {s: i for i, s in enumerate(surfaces[:size])}


class EncoderBackend:
    def __init__(self, config: ServiceConfig):
        self.config = config
        if config.untrained:
            torch.manual_seed(config.seed)
            bert_config = BertConfig()  # the standard base shape: 768 x 30522
            self.model = BertForMaskedLM(bert_config)
            from transformers import BertTokenizerFast

            self.tokenizer = BertTokenizerFast(vocab=synthetic_vocab(bert_config.vocab_size))
        else:
            from transformers import AutoTokenizer

            self.tokenizer = AutoTokenizer.from_pretrained(config.model_id)
            self.model = BertForMaskedLM.from_pretrained(config.model_id)
        self.model.to(config.device)
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)
        self.vocab_size = int(self.model.config.vocab_size)

    def info(self) -> dict:
        return {
            "dim": self.dim,
            "vocab_size": self.vocab_size,
            "model_id": self.config.model_id,
            "pooling": self.config.pooling,
            "untrained": self.config.untrained,
        }

    def _encode(self, texts: list[str]):
        return self.tokenizer(
            texts,
            return_tensors="pt",
            padding=True,
            truncation=True,
            max_length=self.config.max_length,
        ).to(self.config.device)

    @torch.no_grad()
    def embed(self, texts: list[str]) -> np.ndarray:
        """One pooled hidden-state vector per text (CLS position by default)."""
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        batch = self._encode(texts)
        hidden = self.model.bert(**batch).last_hidden_state
        if self.config.pooling == "cls":
            pooled = hidden[:, 0, :]
        else:
            mask = batch["attention_mask"].unsqueeze(-1).to(hidden.dtype)
            pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1)
        return pooled.cpu().numpy().astype(np.float32)

    @torch.no_grad()
    def mlm_fill(self, text: str, tail_len: int, top_k: int) -> list[dict]:
        """Mask the last ``tail_len`` content tokens, average the per-slot
        softmax over the vocabulary, return the top candidates descending."""
        if tail_len < 1:
            raise ValueError("tail_len must be >= 1")
        batch = self._encode([text])
        ids = batch["input_ids"][0]
        special = self.tokenizer.get_special_tokens_mask(ids.tolist(), already_has_special_tokens=True)
        content = [i for i, flag in enumerate(special) if not flag]
        if not content:
            raise ValueError("text has no maskable tokens")
        positions = content[-min(tail_len, len(content)):]
        masked = ids.clone()
        for pos in positions:
            masked[pos] = self.tokenizer.mask_token_id
        logits = self.model(input_ids=masked.unsqueeze(0), attention_mask=batch["attention_mask"]).logits[0]
        probs = torch.softmax(logits[positions].double(), dim=-1).mean(dim=0)
        k = min(int(top_k), self.vocab_size)
        if k <= 0:
            return []
        values, indices = torch.topk(probs, k)
        out = []
        for prob, tid in zip(values.tolist(), indices.tolist()):
            out.append({"token_id": int(tid), "surface": self.tokenizer.convert_ids_to_tokens(int(tid)), "prob": float(prob)})
        return out

    @torch.no_grad()
    def nll(self, text: str) -> tuple[float, float]:
        """Mean masked-token negative log-likelihood with each content token
        masked in turn (the standard pseudo-log-likelihood); ppl = exp(nll)."""
        batch = self._encode([text])
        ids = batch["input_ids"][0]
        special = self.tokenizer.get_special_tokens_mask(ids.tolist(), already_has_special_tokens=True)
        positions = [i for i, flag in enumerate(special) if not flag]
        if not positions:
            raise ValueError("text has no scorable tokens")
        copies = ids.unsqueeze(0).repeat(len(positions), 1)
        for row, pos in enumerate(positions):
            copies[row, pos] = self.tokenizer.mask_token_id
        attention = batch["attention_mask"].repeat(len(positions), 1)
        logits = self.model(input_ids=copies, attention_mask=attention).logits
        total = 0.0
        for row, pos in enumerate(positions):
            logp = torch.log_softmax(logits[row, pos].double(), dim=-1)
            total += -float(logp[int(ids[pos])])
        nll = total / len(positions)
        return nll, math.exp(nll)

    def token_embedding_matrix(self) -> np.ndarray:
        weight = self.model.get_input_embeddings().weight.detach().cpu().numpy()
        return np.ascontiguousarray(weight, dtype=np.float32)

    def token_surfaces(self) -> list[str]:
        return self.tokenizer.convert_ids_to_tokens(list(range(self.vocab_size)))

    def special_token_ids(self, extra_patterns: tuple[str, ...] = ()) -> set[int]:
        """Mask/CLS/SEP/PAD/UNK plus reserved [unusedN] slots, from surfaces."""
        patterns = [SPECIAL_SURFACE_RE] + [re.compile(p) for p in extra_patterns]
        specials = set(int(i) for i in self.tokenizer.all_special_ids)
        for tid, surface in enumerate(self.token_surfaces()):
            if any(p.match(surface) for p in patterns):
                specials.add(tid)
        return specials
