"""Ordered score levels, score tokens and the argmax decision rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import ValidationError, as_float_array, check_levels


@dataclass(frozen=True)
class ScoreScale:
    """Levels ``0..k_max`` mapped to rubric scores ``offset..offset + k_max``."""

    k_max: int
    offset: int = 0

    def __post_init__(self):
        if int(self.k_max) != self.k_max or int(self.offset) != self.offset:
            raise ValidationError("k_max and offset must be integers")
        if self.k_max < 1:
            raise ValidationError(f"k_max must be >= 1, got {self.k_max}")
        object.__setattr__(self, "k_max", int(self.k_max))
        object.__setattr__(self, "offset", int(self.offset))

    @property
    def n_levels(self) -> int:
        return self.k_max + 1

    @property
    def external_range(self) -> tuple[int, int]:
        return self.offset, self.offset + self.k_max

    def levels(self) -> np.ndarray:
        return np.arange(self.n_levels)


def to_external(scale: ScoreScale, k):
    """Internal level(s) to rubric score(s)."""
    arr = check_levels(k, scale.k_max, "level")
    out = arr + scale.offset
    return int(out) if np.ndim(out) == 0 else out


def from_external(scale: ScoreScale, score):
    """Rubric score(s) to internal level(s)."""
    arr = np.asarray(score)
    lo, hi = scale.external_range
    if arr.size and (np.min(arr) < lo or np.max(arr) > hi):
        raise ValidationError(f"score outside rubric range {lo}..{hi}: {score!r}")
    out = check_levels(arr - scale.offset, scale.k_max, "level")
    return int(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ScoreTokenSet:
    """Vocabulary index of the token standing for each score level."""

    token_ids: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(t) for t in self.token_ids)
        if len(set(ids)) != len(ids):
            raise ValidationError(f"score token ids must be distinct: {ids}")
        if any(t < 0 for t in ids):
            raise ValidationError(f"score token ids must be non-negative: {ids}")
        object.__setattr__(self, "token_ids", ids)

    def __len__(self):
        return len(self.token_ids)

    @classmethod
    def spaced(cls, scale: ScoreScale, vocab_size: int) -> "ScoreTokenSet":
        """Evenly spaced ids, so score tokens are a strict subset of a larger vocabulary."""
        if vocab_size < scale.n_levels:
            raise ValidationError(f"vocab_size {vocab_size} < number of levels {scale.n_levels}")
        stride = vocab_size // scale.n_levels
        return cls(tuple(k * stride for k in range(scale.n_levels)))

    def check_against(self, scale: ScoreScale, vocab_size: int | None = None) -> None:
        if len(self) != scale.n_levels:
            raise ValidationError(f"{len(self)} score tokens for {scale.n_levels} levels")
        if vocab_size is not None:
            for t in self.token_ids:
                if t >= vocab_size:
                    raise IndexError(f"score token id {t} out of range for vocabulary of size {vocab_size}")


def extract_score_logits(vocab_logits, tokens: ScoreTokenSet) -> np.ndarray:
    """Gather the score-token columns of ``vocab_logits`` (shape ``(..., V)``)."""
    logits = as_float_array(vocab_logits, "vocab_logits")
    vocab_size = logits.shape[-1]
    for t in tokens.token_ids:
        if t >= vocab_size:
            raise IndexError(f"score token id {t} out of range for vocabulary of size {vocab_size}")
    return logits[..., list(tokens.token_ids)]


def decide(z) -> np.ndarray | int:
    """Argmax over levels; ties go to the lower level."""
    z = as_float_array(z, "z")
    # np.argmax returns the first maximal index, which is the lowest level.
    out = np.argmax(z, axis=-1)
    return int(out) if np.ndim(out) == 0 else out
