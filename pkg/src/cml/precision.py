"""Arithmetic mode selection: binary64 or mpmath with a chosen mantissa width."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import ConfigurationError

DEFAULT_BIG_BITS = 128


@dataclass(frozen=True)
class Precision:
    kind: str = "f64"
    bits: int = 53

    def __post_init__(self):
        if self.kind not in ("f64", "big"):
            raise ConfigurationError(f"unknown precision kind {self.kind!r}")
        if self.kind == "f64" and self.bits != 53:
            raise ConfigurationError("f64 precision has a fixed 53-bit mantissa")
        if self.kind == "big" and self.bits < 64:
            raise ConfigurationError("extended precision needs at least 64 bits")

    @classmethod
    def parse(cls, text: str | Precision | None) -> Precision:
        """Parse ``f64``, ``big`` or ``big:<bits>``."""
        if isinstance(text, Precision):
            return text
        if text is None or text == "f64":
            return cls()
        if text == "big":
            return cls("big", DEFAULT_BIG_BITS)
        if text.startswith("big:"):
            try:
                bits = int(text[4:])
            except ValueError:
                raise ConfigurationError(f"bad precision {text!r}") from None
            return cls("big", bits)
        raise ConfigurationError(f"bad precision {text!r}; use f64 or big:<bits>")

    @property
    def extended(self) -> bool:
        return self.kind == "big"

    def __str__(self) -> str:
        return "f64" if self.kind == "f64" else f"big:{self.bits}"

    def context(self):
        """Context manager setting the mpmath working precision."""
        if self.extended:
            return mpmath.workprec(self.bits)
        return contextlib.nullcontext()


F64 = Precision()


def random_unit(rng: np.random.Generator, bits: int):
    """Uniform mpf in [0, 1) carrying ``bits`` random binary digits.

    Must be called inside a context of at least ``bits`` precision.
    """
    words = -(-bits // 32)
    value = 0
    for w in rng.integers(0, 2**32, size=words, dtype=np.uint64):
        value = (value << 32) | int(w)
    value >>= words * 32 - bits
    return mpmath.ldexp(mpmath.mpf(value), -bits)
