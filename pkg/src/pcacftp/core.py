"""Alphabet, kernels, the basic coupling and (envelope) single-step dynamics.

Symbols are handled internally as integer indices ``0..|A|-1`` in alphabet
order; :class:`Alphabet` maps them back to labels for I/O.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .grid import STREAM_BASIC, RandomGrid

ROW_TOL = 1e-12
# breakpoints closer than this are treated as one
_MERGE_TOL = 1e-12
# largest alphabet for which the dense envelope lookup table is built
_ENVTAB_MAX_SIZE = 4


class KernelError(ValueError):
    pass


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(str(s) for s in self.symbols))
        if not self.symbols:
            raise ValueError("alphabet must be non-empty")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError(f"alphabet symbols must be distinct: {self.symbols}")

    @classmethod
    def binary(cls) -> "Alphabet":
        return cls(("0", "1"))

    @property
    def size(self) -> int:
        return len(self.symbols)

    def index(self, label) -> int:
        try:
            return self.symbols.index(str(label))
        except ValueError:
            raise KeyError(f"symbol {label!r} not in alphabet {self.symbols}") from None

    def label(self, i: int) -> str:
        return self.symbols[i]

    @property
    def full_mask(self) -> int:
        return (1 << self.size) - 1


def _triples(k: int):
    return itertools.product(range(k), repeat=3)


class Kernel:
    """Transition table from neighbourhood triples to distributions.

    ``table[a, b, c, s]`` is the probability that a site with left neighbour
    ``a``, own value ``b`` and right neighbour ``c`` takes value ``s``.  Missing
    triples are stored as NaN rows so that :func:`validate_kernel` can report
    them; constructing a kernel does not validate it.
    """

    def __init__(self, alphabet: Alphabet, table):
        self.alphabet = alphabet
        k = alphabet.size
        if isinstance(table, Mapping):
            arr = np.full((k, k, k, k), np.nan)
            for key, row in table.items():
                a, b, c = _parse_triple(alphabet, key)
                arr[a, b, c] = np.asarray(row, dtype=float)
        else:
            arr = np.array(table, dtype=float)
            if arr.shape != (k, k, k, k):
                raise KernelError(f"table shape {arr.shape} != {(k, k, k, k)}")
        arr.setflags(write=False)
        self.table = arr

    @property
    def size(self) -> int:
        return self.alphabet.size

    def row(self, triple) -> np.ndarray:
        a, b, c = triple
        return self.table[a, b, c]

    def rows_dict(self) -> dict[str, list[float]]:
        sep = "" if all(len(s) == 1 for s in self.alphabet.symbols) else ","
        out = {}
        for a, b, c in _triples(self.size):
            key = sep.join(self.alphabet.label(i) for i in (a, b, c))
            out[key] = [float(p) for p in self.table[a, b, c]]
        return out

    def to_json(self) -> dict:
        return {"alphabet": list(self.alphabet.symbols), "rows": self.rows_dict()}

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @cached_property
    def witness(self) -> "PositiveRatesWitness | None":
        return positive_rates_witness(self)

    @cached_property
    def random_function(self) -> "RandomFunction":
        return build_random_function(self)

    def __repr__(self):
        return f"Kernel(alphabet={self.alphabet.symbols}, digest={self.digest()[:12]})"


def _parse_triple(alphabet: Alphabet, key) -> tuple[int, int, int]:
    if isinstance(key, str):
        if "," in key:
            parts = key.split(",")
        elif len(key) == 3:
            parts = list(key)
        else:
            raise KernelError(f"cannot parse triple key {key!r}")
    else:
        parts = list(key)
    if len(parts) != 3:
        raise KernelError(f"triple key {key!r} does not have three symbols")
    out = []
    for p in parts:
        if isinstance(p, (int, np.integer)) and not isinstance(p, bool) and str(p) not in alphabet.symbols:
            out.append(int(p))
        else:
            out.append(alphabet.index(p))
    return tuple(out)


def validate_kernel(k: Kernel) -> None:
    """Raise :class:`KernelError` unless every row is a probability vector."""
    t = k.table
    for a, b, c in _triples(k.size):
        row = t[a, b, c]
        name = "".join(k.alphabet.label(i) for i in (a, b, c))
        if np.isnan(row).any():
            raise KernelError(f"missing triple ({name})")
        if (row < 0).any():
            raise KernelError(f"negative entry in row ({name}): {row.tolist()}")
        if (row > 1).any():
            raise KernelError(f"entry above 1 in row ({name}): {row.tolist()}")
        dev = float(row.sum()) - 1.0
        if abs(dev) > ROW_TOL:
            raise KernelError(f"row ({name}) sums to {row.sum():.15g} (deviation {dev:.3g})")


def load_kernel(path) -> Kernel:
    data = json.loads(Path(path).read_text())
    return kernel_from_json(data)


def kernel_from_json(data: dict) -> Kernel:
    alphabet = Alphabet(tuple(data["alphabet"]))
    k = Kernel(alphabet, data["rows"])
    validate_kernel(k)
    return k


def save_kernel(k: Kernel, path) -> None:
    Path(path).write_text(json.dumps(k.to_json(), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class PositiveRatesWitness:
    w: int
    kappa: float


def positive_rates_witness(k: Kernel) -> PositiveRatesWitness | None:
    mins = k.table.reshape(-1, k.size).min(axis=0)
    w = int(np.argmax(mins))  # first maximiser, i.e. alphabet order on ties
    kappa = float(mins[w])
    if not kappa > 0:
        return None
    return PositiveRatesWitness(w, kappa)


@dataclass(frozen=True)
class Configuration:
    offset: int
    word: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "word", tuple(int(s) for s in self.word))
        if not self.word:
            raise WindowError("configuration must be non-empty")

    def __len__(self):
        return len(self.word)

    @property
    def sites(self) -> range:
        return range(self.offset, self.offset + len(self.word))

    def at(self, x: int) -> int:
        return self.word[x - self.offset]

    def labels(self, alphabet: Alphabet) -> list[str]:
        return [alphabet.label(s) for s in self.word]


@dataclass(frozen=True)
class EnvelopeConfiguration:
    offset: int
    sets: tuple[frozenset, ...]

    def __post_init__(self):
        sets = tuple(frozenset(int(s) for s in x) for x in self.sets)
        object.__setattr__(self, "sets", sets)
        if not sets:
            raise WindowError("envelope must be non-empty")
        if any(not s for s in sets):
            raise WindowError("envelope sets must be non-empty")

    def __len__(self):
        return len(self.sets)

    @classmethod
    def full(cls, alphabet: Alphabet, offset: int, length: int) -> "EnvelopeConfiguration":
        return cls(offset, (frozenset(range(alphabet.size)),) * length)

    @classmethod
    def point(cls, config: Configuration) -> "EnvelopeConfiguration":
        return cls(config.offset, tuple(frozenset((s,)) for s in config.word))

    @classmethod
    def from_masks(cls, offset: int, masks) -> "EnvelopeConfiguration":
        return cls(offset, tuple(mask_to_set(int(m)) for m in masks))

    def masks(self) -> np.ndarray:
        return np.array([set_to_mask(s) for s in self.sets], dtype=np.uint64)

    def is_determined(self) -> bool:
        return all(len(s) == 1 for s in self.sets)

    def contains(self, config: Configuration) -> bool:
        return config.offset == self.offset and len(config) == len(self) and all(
            v in s for v, s in zip(config.word, self.sets)
        )


def set_to_mask(s) -> int:
    m = 0
    for v in s:
        m |= 1 << int(v)
    return m


def mask_to_set(m: int) -> frozenset:
    return frozenset(i for i in range(m.bit_length()) if m >> i & 1)


def is_singleton_mask(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.uint64)
    return (m != 0) & ((m & (m - np.uint64(1))) == 0)


@dataclass(frozen=True, eq=False)
class RandomFunction:
    """The basic coupling: ``[0, 1)`` cut into atoms, each carrying a map A^3 -> A.

    ``edges`` has ``n_atoms + 1`` increasing entries from 0 to 1 and
    ``table[i, a, b, c]`` is the image of the triple under atom ``i``.
    """

    edges: np.ndarray
    table: np.ndarray
    witness: PositiveRatesWitness
    size: int
    _envtab: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_atoms(self) -> int:
        return len(self.edges) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.edges)

    def atom_of(self, u) -> np.ndarray:
        return np.searchsorted(self.edges[1:-1], u, side="right")

    def constant_atoms(self) -> np.ndarray:
        flat = self.table.reshape(self.n_atoms, -1)
        return (flat == flat[:, :1]).all(axis=1)

    def marginal(self) -> np.ndarray:
        """Total atom length mapping each triple to each symbol, shape (k,k,k,k)."""
        k = self.size
        out = np.zeros((k, k, k, k))
        lens = self.lengths
        for i in range(self.n_atoms):
            np.add.at(out, (*np.indices((k, k, k)), self.table[i]), lens[i])
        return out

    def is_monotone(self) -> bool:
        """Whether every atom's map is monotone for the product order on triples."""
        k = self.size
        t = self.table
        return bool(
            (t[:, 1:, :, :] >= t[:, :-1, :, :]).all()
            and (t[:, :, 1:, :] >= t[:, :, :-1, :]).all()
            and (t[:, :, :, 1:] >= t[:, :, :, :-1]).all()
        ) if k > 1 else True

    def step(self, atoms: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Concrete update along the last axis: width w -> w - 2."""
        return self.table[atoms, x[..., :-2], x[..., 1:-1], x[..., 2:]]

    @property
    def envelope_table(self) -> np.ndarray | None:
        return self._envtab

    def envelope(self, atoms: np.ndarray, masks: np.ndarray) -> np.ndarray:
        """Set-valued update along the last axis on bitmask-encoded sets."""
        m1, m2, m3 = masks[..., :-2], masks[..., 1:-1], masks[..., 2:]
        if self._envtab is not None:
            return self._envtab[atoms, m1.astype(np.intp), m2.astype(np.intp), m3.astype(np.intp)]
        out = np.zeros(np.broadcast_shapes(atoms.shape, m1.shape), dtype=np.uint64)
        one = np.uint64(1)
        for a, b, c in _triples(self.size):
            hit = ((m1 >> np.uint64(a)) & (m2 >> np.uint64(b)) & (m3 >> np.uint64(c)) & one).astype(bool)
            img = one << self.table[atoms, a, b, c].astype(np.uint64)
            out |= np.where(hit, img, np.uint64(0))
        return out


def _build_envelope_table(table: np.ndarray, k: int) -> np.ndarray:
    n = table.shape[0]
    nm = 1 << k
    env = np.zeros((n, nm, nm, nm), dtype=np.uint64)
    bits = [[s for s in range(k) if m >> s & 1] for m in range(nm)]
    for m1, m2, m3 in itertools.product(range(1, nm), repeat=3):
        acc = np.zeros(n, dtype=np.uint64)
        for a in bits[m1]:
            for b in bits[m2]:
                for c in bits[m3]:
                    acc |= np.uint64(1) << table[:, a, b, c].astype(np.uint64)
        env[:, m1, m2, m3] = acc
    return env


def build_random_function(k: Kernel) -> RandomFunction:
    """Canonical interval layout: witness symbol first, then alphabet order."""
    wit = k.witness
    if wit is None:
        raise KernelError("kernel does not satisfy the positive rates condition")
    n = k.size
    order = [wit.w] + [s for s in range(n) if s != wit.w]
    probs = k.table.reshape(-1, n)[:, order]
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    raw = np.sort(cum[:, :-1].ravel())
    raw = raw[(raw > _MERGE_TOL) & (raw < 1 - _MERGE_TOL)]
    cuts: list[float] = []
    for b in raw:
        if not cuts or b - cuts[-1] > _MERGE_TOL:
            cuts.append(float(b))
    edges = np.array([0.0, *cuts, 1.0])
    mids = 0.5 * (edges[:-1] + edges[1:])
    pos = (cum[:, None, :-1] <= mids[None, :, None]).sum(axis=2)
    sym = np.asarray(order)[pos]  # (k^3, n_atoms)
    dtype = np.int8 if n <= 127 else np.int16
    table = np.ascontiguousarray(sym.T.reshape(len(mids), n, n, n).astype(dtype))
    envtab = _build_envelope_table(table, n) if n <= _ENVTAB_MAX_SIZE else None
    edges.setflags(write=False)
    table.setflags(write=False)
    return RandomFunction(edges, table, wit, n, envtab)


def _check_window(n: int):
    if n < 3:
        raise WindowError(f"window too short: length {n} < 3")


def step_window(
    k: Kernel,
    grid: RandomGrid,
    key: tuple[int, int],
    config: Configuration,
    replica: int = 0,
    stream: int = STREAM_BASIC,
) -> Configuration:
    """One PCA step on a finite window; the output loses one site at each end."""
    _check_window(len(config))
    level, time = key
    rf = k.random_function
    xs = np.arange(config.offset + 1, config.offset + len(config) - 1)
    atoms = rf.atom_of(grid.uniform(level, xs, time, replica, stream))
    out = rf.step(atoms, np.asarray(config.word))
    return Configuration(config.offset + 1, tuple(int(v) for v in out))


def envelope_step(
    k: Kernel,
    grid: RandomGrid,
    key: tuple[int, int],
    env: EnvelopeConfiguration,
    replica: int = 0,
    stream: int = STREAM_BASIC,
) -> EnvelopeConfiguration:
    """Set-valued image of :func:`step_window` under the same variates."""
    _check_window(len(env))
    level, time = key
    rf = k.random_function
    xs = np.arange(env.offset + 1, env.offset + len(env) - 1)
    atoms = rf.atom_of(grid.uniform(level, xs, time, replica, stream))
    out = rf.envelope(atoms, env.masks())
    return EnvelopeConfiguration.from_masks(env.offset + 1, out)
