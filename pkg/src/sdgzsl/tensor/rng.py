"""Seeded random streams.

Every stream is a numpy ``PCG64`` bit generator seeded from
``SeedSequence(seed, spawn_key=(crc32(label),))``. PCG64's output sequence is
fixed by its specification, so a ``(seed, label, call sequence)`` triple gives
the same draws on every platform. Gaussian variates use Box-Muller over the
stream's uniform doubles rather than numpy's ziggurat sampler, so they depend
only on the uniform sequence.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("init", "noise", "permute", "dropout", "shuffle")


class Rng:
    """A named, independently reproducible random stream."""

    def __init__(self, seed: int, stream: str = "init"):
        self.seed = int(seed)
        self.stream = stream
        ss = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=(zlib.crc32(stream.encode()),))
        self._bitgen = np.random.PCG64(ss)
        self._gen = np.random.Generator(self._bitgen)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream!r})"

    def uniform(self, shape=()) -> np.ndarray:
        """Doubles in [0, 1)."""
        return self._gen.random(shape)

    def normal(self, shape=()) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        u = self._gen.random((2, half))
        radius = np.sqrt(-2.0 * np.log1p(-u[0]))
        angle = 2.0 * np.pi * u[1]
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
        return z.reshape(shape) if shape else z[0]

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def get_state(self) -> dict:
        return {"seed": self.seed, "stream": self.stream, "bit_generator": self._bitgen.state}

    def set_state(self, state: dict) -> None:
        self._bitgen.state = state["bit_generator"]

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"], state["stream"])
        rng.set_state(state)
        return rng


class RngStreams:
    """The fixed set of named streams a training run draws from."""

    def __init__(self, seed: int, names=STREAMS):
        self.seed = int(seed)
        self._streams = {name: Rng(seed, name) for name in names}

    def __getitem__(self, name: str) -> Rng:
        return self._streams[name]

    def __getattr__(self, name: str) -> Rng:
        try:
            return self.__dict__["_streams"][name]
        except KeyError:
            raise AttributeError(name) from None

    def get_state(self) -> dict:
        return {name: rng.get_state() for name, rng in self._streams.items()}

    def set_state(self, state: dict) -> None:
        for name, s in state.items():
            self._streams[name].set_state(s)
