"""Privacy amplification by pairwise XOR.

Each stage XORs disjoint neighbouring bit pairs.  If Eve guesses every
input bit correctly with probability ``p`` independently, she gets an
output bit right when she is right on both or wrong on both inputs, so
``p <- p^2 + (1-p)^2``, while the key halves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_count, check_probability


def _as_bits(bits, name="bits"):
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr.astype(np.uint8)


def xor_stage(bits):
    """XOR bits ``2j`` and ``2j+1``; a trailing odd bit is dropped."""
    arr = _as_bits(bits)
    if arr.size < 2:
        raise ValueError("xor_stage needs at least 2 bits")
    m = arr.size // 2
    return arr[0 : 2 * m : 2] ^ arr[1 : 2 * m : 2]


def predicted_p_after_stages(p0, stages):
    """Eve's per-bit success after ``stages`` XOR stages, starting from ``p0``."""
    p = check_probability(p0, "p0", lo=0.5, hi=1.0)
    for _ in range(check_count(stages, "stages")):
        p = p * p + (1.0 - p) * (1.0 - p)
    return p


def binary_entropy(p):
    p = check_probability(p, "p")
    if p in (0.0, 1.0):
        return 0.0
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


def leak_metrics(p):
    """``(p - 1/2, 1 - H2(p))``: Eve's advantage and her information per key bit."""
    p = check_probability(p, "p", lo=0.5, hi=1.0)
    eps = p - 0.5
    if eps < 1e-4:
        # Series form avoids cancellation in 1 - H2 near p = 1/2.
        x = 2 * eps
        info = (x * x / 2 + x**4 / 12 + x**6 / 30) / math.log(2)
    else:
        info = 1.0 - binary_entropy(p)
    return eps, info


@dataclass(frozen=True)
class KeyMaterial:
    """Key bits with Eve's per-bit success ``eve_p`` and, optionally, her actual guesses."""

    bits: np.ndarray = field(repr=False)
    eve_p: float = 0.5
    eve_guess: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        bits = _as_bits(self.bits)
        object.__setattr__(self, "bits", bits)
        check_probability(self.eve_p, "eve_p", lo=0.5, hi=1.0)
        if self.eve_guess is not None:
            guess = _as_bits(self.eve_guess, "eve_guess")
            if guess.size != bits.size:
                raise ValueError("bits and eve_guess must have equal length")
            object.__setattr__(self, "eve_guess", guess)

    def __len__(self):
        return self.bits.size

    @property
    def empirical_eve_p(self):
        if self.eve_guess is None or not self.bits.size:
            return None
        return float(np.mean(self.bits == self.eve_guess))

    def to_text(self):
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def simulate(cls, n_bits, p, rng_seed):
        """Uniform key; Eve is right on each bit independently with probability ``p``."""
        p = check_probability(p, "p", lo=0.5, hi=1.0)
        rng = np.random.default_rng(rng_seed)
        bits = rng.integers(0, 2, check_count(n_bits, "n_bits", minimum=1), dtype=np.uint8)
        wrong = (rng.random(bits.size) >= p).astype(np.uint8)
        return cls(bits, p, bits ^ wrong)


@dataclass(frozen=True)
class AmplificationReport:
    stages: int
    input_len: int
    output_len: int
    p_in: float
    p_out: float
    p_out_empirical: float | None = None

    @property
    def slowdown_factor(self):
        return 1 << self.stages

    @property
    def epsilon(self):
        return self.p_out - 0.5

    @property
    def mutual_information_leak(self):
        return leak_metrics(self.p_out)[1]

    def as_rows(self):
        rows = [
            ("stages", self.stages),
            ("input_len", self.input_len),
            ("output_len", self.output_len),
            ("slowdown_factor", self.slowdown_factor),
            ("p_in", self.p_in),
            ("p_out", self.p_out),
            ("epsilon", self.epsilon),
            ("mutual_information_leak", self.mutual_information_leak),
        ]
        if self.p_out_empirical is not None:
            rows.append(("p_out_empirical", self.p_out_empirical))
        return rows


def amplify(key, stages):
    """Apply ``stages`` XOR stages to the key (and to Eve's guesses, if present)."""
    stages = check_count(stages, "stages")
    n = len(key)
    if n < (1 << stages):
        raise ValueError(f"key of {n} bits is too short for {stages} stages")
    bits, guess = key.bits, key.eve_guess
    for _ in range(stages):
        bits = xor_stage(bits)
        guess = None if guess is None else xor_stage(guess)
    p_out = predicted_p_after_stages(key.eve_p, stages)
    out = KeyMaterial(bits, p_out, guess)
    report = AmplificationReport(stages, n, len(out), key.eve_p, p_out, out.empirical_eve_p)
    return out, report
