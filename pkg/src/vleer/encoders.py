"""Text encoder interface and the built-in deterministic encoders.

Real deployments plug a pathology VLM's text encoder in behind
:class:`TextEncoder`. The two built-ins exist so every stage is testable
without model weights:

* :class:`HashTextEncoder` maps any string to a reproducible unit vector
  derived from SHA-256, with no semantic structure. The external exporter
  ships the same construction, so tables produced on either side agree.
* :class:`KeywordLookupEncoder` backs the synthetic cohorts: it averages
  the stored vectors of every known keyword found in the prompt, which
  makes comma-joined keyword strings behave like a real aligned encoder.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import FormatError, ValidationError


class TextEncoder(Protocol):
    dim: int

    def encode(self, text: str) -> np.ndarray:
        """Return a unit-norm vector of length ``dim`` for the prompt."""
        ...


def hash_floats(text: str, n: int) -> np.ndarray:
    """Expand SHA-256(text) into ``n`` floats in [-1, 1).

    Counter-mode expansion: block b contributes 8 lanes, each a big-endian
    u32 of SHA-256(seed || u32_be(b)) mapped to 2*u/2^32 - 1. Kept
    dead simple so other-language implementations can match it bit-for-bit.
    """
    seed = hashlib.sha256(text.encode("utf-8")).digest()
    out = np.empty(n, dtype=np.float64)
    i = 0
    block = 0
    while i < n:
        digest = hashlib.sha256(seed + struct.pack(">I", block)).digest()
        for lane in range(8):
            if i >= n:
                break
            (u,) = struct.unpack_from(">I", digest, lane * 4)
            out[i] = 2.0 * (u / 4294967296.0) - 1.0
            i += 1
        block += 1
    return out


class HashTextEncoder:
    """Deterministic stub encoder: unit vector from a hash of the prompt."""

    def __init__(self, dim: int):
        if dim <= 0:
            raise ValidationError("encoder dim must be positive")
        self.dim = dim

    def encode(self, text: str) -> np.ndarray:
        vec = hash_floats(text, self.dim)
        return vec / np.linalg.norm(vec)


class KeywordLookupEncoder:
    """Encoder backed by per-keyword vectors from a synthetic cohort.

    ``encode`` averages the vectors of all known keywords appearing in the
    prompt (casefolded substring match), then normalizes. Prompts that
    mention no known keyword fall back to the hash construction.
    """

    def __init__(self, vectors: dict[str, np.ndarray]):
        if not vectors:
            raise ValidationError("keyword vector table is empty")
        self._vectors = {
            kw.strip().casefold(): np.asarray(v, dtype=np.float64)
            for kw, v in vectors.items()
        }
        dims = {v.shape[0] for v in self._vectors.values()}
        if len(dims) != 1:
            raise ValidationError("keyword vectors have mixed dimensions")
        self.dim = dims.pop()

    def encode(self, text: str) -> np.ndarray:
        hay = text.casefold()
        hits = [v for kw, v in sorted(self._vectors.items()) if kw in hay]
        if not hits:
            vec = hash_floats(text, self.dim)
        else:
            vec = np.mean(hits, axis=0)
        return vec / np.linalg.norm(vec)


def load_encoder(path) -> KeywordLookupEncoder:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        if doc.get("type") != "keyword-lookup":
            raise FormatError(f"{path}: unknown encoder type {doc.get('type')!r}")
        vectors = {kw: np.array(v, dtype=np.float64) for kw, v in doc["vectors"].items()}
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid encoder file: {exc}") from exc
    return KeywordLookupEncoder(vectors)


def make_encoder(spec: str):
    """Build an encoder from a CLI spec: ``hash:<dim>`` or a file path."""
    if spec.startswith("hash:"):
        return HashTextEncoder(int(spec.split(":", 1)[1]))
    return load_encoder(spec)
