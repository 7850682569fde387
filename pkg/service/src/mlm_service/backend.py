"""Model backends.

Both expose `vocab_size` and `logits_batch(token_lists)`; the latter
takes a list of token sequences (None marks a masked position) and
returns, per sequence, a dict mapping masked position to a float64 logit
vector over the vocabulary.
"""

import numpy as np


class MockBackend:
    """Deterministic stand-in so the protocol is testable without model
    weights: a fixed integer hash of (position, context) ranks the
    vocabulary.  Stateless, identical request gives identical logits."""

    def __init__(self, vocab_size=64):
        if vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        self.vocab_size = vocab_size

    def logits(self, tokens):
        ctx = sum((t or 0) * (i + 1) for i, t in enumerate(tokens))
        q = np.arange(self.vocab_size, dtype=np.int64)
        out = {}
        for pos, t in enumerate(tokens):
            if t is None:
                mixed = (q * 2654435761 + 97 * pos + ctx) % self.vocab_size
                out[pos] = mixed.astype(np.float64)
        return out

    def logits_batch(self, token_lists):
        return [self.logits(toks) for toks in token_lists]


class BertBackend:
    """Pretrained masked LM; sequences are framed with [CLS]/[SEP] and
    nulls become [MASK].  Inference runs on CPU with gradients off."""

    def __init__(self, model_name="bert-base-cased"):
        import torch
        from transformers import AutoModelForMaskedLM, AutoTokenizer
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForMaskedLM.from_pretrained(model_name)
        self.model.eval()
        self.vocab_size = int(self.tokenizer.vocab_size)
        self.mask_id = int(self.tokenizer.mask_token_id)
        self.cls_id = int(self.tokenizer.cls_token_id)
        self.sep_id = int(self.tokenizer.sep_token_id)
        self.pad_id = int(self.tokenizer.pad_token_id)

    def _frame(self, tokens):
        return [self.cls_id] + [self.mask_id if t is None else int(t)
                                for t in tokens] + [self.sep_id]

    def logits_batch(self, token_lists):
        torch = self._torch
        framed = [self._frame(toks) for toks in token_lists]
        width = max(len(f) for f in framed)
        ids = torch.full((len(framed), width), self.pad_id, dtype=torch.long)
        attn = torch.zeros((len(framed), width), dtype=torch.long)
        for i, f in enumerate(framed):
            ids[i, :len(f)] = torch.tensor(f, dtype=torch.long)
            attn[i, :len(f)] = 1
        with torch.no_grad():
            logits = self.model(input_ids=ids, attention_mask=attn).logits
        out = []
        for i, toks in enumerate(token_lists):
            per_pos = {}
            for pos, t in enumerate(toks):
                if t is None:
                    # +1 skips [CLS]; vocab axis clipped in case the model
                    # head is padded past the tokenizer vocab
                    vec = logits[i, pos + 1, :self.vocab_size]
                    per_pos[pos] = vec.double().numpy().copy()
            out.append(per_pos)
        return out

    def logits(self, tokens):
        return self.logits_batch([tokens])[0]

    def encode_text(self, text):
        return self.tokenizer.encode(text, add_special_tokens=True)

    def decode_ids(self, ids):
        return self.tokenizer.decode(ids, skip_special_tokens=True,
                                     clean_up_tokenization_spaces=True)


def text_roundtrip(backend, text):
    """Tokenize with the model's framing and decode back; returns
    (token_ids, reconstructed_text)."""
    ids = backend.encode_text(text)
    return ids, backend.decode_ids(ids)


def make_backend(model_name: str):
    """`mock` (or `mock:<vocab_size>`) selects the deterministic backend;
    anything else is loaded as a pretrained masked LM."""
    if model_name == "mock" or model_name.startswith("mock:"):
        _, _, size = model_name.partition(":")
        return MockBackend(vocab_size=int(size) if size else 64)
    return BertBackend(model_name)
