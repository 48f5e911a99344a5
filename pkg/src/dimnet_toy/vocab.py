"""Two-granularity unit inventories and the coarse-to-fine lexicon.

Fine units carry pronunciation (phoneme-like); coarse units carry the
transcript (BPE-like). Index 0 of the fine inventory is the CTC blank and
index 1 a silence unit that never occurs in transcripts; the coarse
inventory starts with ``<unk> <bos> <eos>``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, IndexOutOfRange, LexiconMiss, ParseError, UnknownToken

BLANK = "<blank>"
SIL = "<sil>"
UNK = "<unk>"
BOS = "<bos>"
EOS = "<eos>"

FINE_SPECIALS = (BLANK, SIL)
COARSE_SPECIALS = (UNK, BOS, EOS)


class Vocabulary:
    """Label <-> index table for one granularity."""

    def __init__(self, tokens: Sequence[str], unk: Optional[str] = None):
        self.tokens: Tuple[str, ...] = tuple(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("duplicate tokens in inventory")
        self.index: Dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        self.unk_id = None if unk is None else self.index[unk]
        self.unknown_count = 0

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, labels: Iterable[str]) -> List[int]:
        ids = []
        for lab in labels:
            idx = self.index.get(lab)
            if idx is None:
                if self.unk_id is None:
                    raise UnknownToken(lab)
                self.unknown_count += 1
                idx = self.unk_id
            ids.append(idx)
        return ids

    def decode(self, ids: Iterable[int]) -> List[str]:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise IndexOutOfRange(f"index {i} outside [0, {len(self.tokens)})")
            out.append(self.tokens[i])
        return out


@dataclass
class UnitInventory:
    fine: Vocabulary
    coarse: Vocabulary
    blank_id: int = 0
    sil_id: int = 1
    unk_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    @classmethod
    def build(cls, fine_units: Sequence[str], coarse_units: Sequence[str]) -> "UnitInventory":
        fine = Vocabulary(FINE_SPECIALS + tuple(fine_units))
        coarse = Vocabulary(COARSE_SPECIALS + tuple(coarse_units), unk=UNK)
        inv = cls(fine=fine, coarse=coarse)
        inv.validate()
        return inv

    def validate(self, strict_granularity: bool = True):
        if self.fine.tokens[self.blank_id] != BLANK:
            raise ConfigError("blank must be fine index 0")
        if strict_granularity and len(self.fine) >= len(self.coarse):
            raise ConfigError("fine inventory must be smaller than the coarse one")

    @property
    def fine_units(self) -> Tuple[str, ...]:
        return self.fine.tokens[len(FINE_SPECIALS):]

    @property
    def coarse_units(self) -> Tuple[str, ...]:
        return self.coarse.tokens[len(COARSE_SPECIALS):]

    @property
    def coarse_special_ids(self) -> Tuple[int, ...]:
        return (self.unk_id, self.bos_id, self.eos_id)


@dataclass
class Lexicon:
    inventory: UnitInventory
    entries: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        specials = set(COARSE_SPECIALS)
        for c, fs in self.entries.items():
            if c in specials:
                raise ConfigError(f"special token {c!r} cannot have a lexicon entry")
            if c not in self.inventory.coarse:
                raise ConfigError(f"lexicon key {c!r} not in coarse inventory")
            if not fs:
                raise ConfigError(f"empty expansion for {c!r}")
            for f in fs:
                if f not in self.inventory.fine or f in FINE_SPECIALS:
                    raise ConfigError(f"bad fine unit {f!r} in entry {c!r}")
        missing = [c for c in self.inventory.coarse_units if c not in self.entries]
        if missing:
            raise ConfigError(f"coarse tokens without lexicon entry: {missing[:5]}")
        fi = self.inventory.fine.index
        self._id_table = {self.inventory.coarse.index[c]: tuple(fi[f] for f in fs)
                          for c, fs in self.entries.items()}

    def expand_ids(self, coarse_ids: Iterable[int]) -> List[int]:
        specials = self.inventory.coarse_special_ids
        out: List[int] = []
        for c in coarse_ids:
            c = int(c)
            if c in specials:
                continue
            fs = self._id_table.get(c)
            if fs is None:
                name = (self.inventory.coarse.tokens[c]
                        if 0 <= c < len(self.inventory.coarse) else c)
                raise LexiconMiss(name)
            out.extend(fs)
        return out

    def is_prefix_free(self) -> bool:
        seqs = sorted(self.entries.values())
        return all(b[:len(a)] != a for a, b in zip(seqs, seqs[1:]))


def expand_to_fine(lex: Lexicon, coarse_seq: Iterable[str]) -> List[str]:
    """Concatenate the fine expansions of ``coarse_seq``; specials expand to nothing."""
    specials = set(COARSE_SPECIALS)
    out: List[str] = []
    for c in coarse_seq:
        if c in specials:
            continue
        try:
            out.extend(lex.entries[c])
        except KeyError:
            raise LexiconMiss(c) from None
    return out


def generate_lexicon(n_fine: int, n_coarse: int, rng: np.random.Generator,
                     max_len: int = 3) -> Lexicon:
    """Random prefix-free lexicon: every entry has 1..max_len fine units.

    Prefix-freeness makes the fine expansion of any coarse sequence uniquely
    segmentable, so distinct coarse transcripts never share a pronunciation.
    """
    if n_fine < 2:
        raise ConfigError("need at least two fine units")
    fine_units = [f"p{i}" for i in range(n_fine)]
    capacity = sum(n_fine ** k for k in range(1, max_len + 1))
    if n_coarse > capacity:
        raise ConfigError("too many coarse tokens for the fine inventory")
    # grow a prefix tree by splitting random leaves into n_fine children
    leaves: List[Tuple[int, ...]] = [(i,) for i in range(n_fine)]
    while len(leaves) < n_coarse:
        splittable = [k for k, leaf in enumerate(leaves) if len(leaf) < max_len]
        victim = leaves.pop(splittable[rng.integers(len(splittable))])
        leaves.extend(victim + (j,) for j in range(n_fine))
    # drop the surplus at random, never losing the last leaf that uses a unit
    uses = np.zeros(n_fine, dtype=int)
    for leaf in leaves:
        for u in set(leaf):
            uses[u] += 1
    surplus = len(leaves) - n_coarse
    for k in rng.permutation(len(leaves)):
        if surplus == 0:
            break
        units = set(leaves[k])
        if all(uses[u] > 1 for u in units):
            for u in units:
                uses[u] -= 1
            leaves[k] = None
            surplus -= 1
    chosen = [leaf for leaf in leaves if leaf is not None]
    if len(chosen) != n_coarse:
        raise ConfigError("could not build a prefix-free lexicon of the requested size")
    chosen.sort(key=lambda s: (len(s), s))
    coarse_units = [f"w{i}" for i in range(n_coarse)]
    inventory = UnitInventory.build(fine_units, coarse_units)
    entries = {c: tuple(fine_units[u] for u in seq) for c, seq in zip(coarse_units, chosen)}
    return Lexicon(inventory, entries)


def coarse_as_fine(lex: Lexicon) -> Lexicon:
    """Single-granularity view: the CTC side models coarse units directly.

    The returned lexicon maps every coarse token to itself, so rescoring and
    alignment code runs unchanged when both branches use coarse units.
    """
    inv = lex.inventory
    fine = Vocabulary(FINE_SPECIALS + inv.coarse_units)
    twin = UnitInventory(fine=fine, coarse=inv.coarse)
    twin.validate(strict_granularity=False)
    return Lexicon(twin, {c: (c,) for c in inv.coarse_units})


# plain-text serialisation -------------------------------------------------

def write_tokens(path, tokens: Sequence[str]):
    Path(path).write_text("".join(f"{t}\n" for t in tokens), encoding="utf-8")


def read_tokens(path) -> List[str]:
    text = Path(path).read_text(encoding="utf-8")
    return [line for line in text.split("\n") if line]


def write_lexicon(path, lex: Lexicon):
    lines = [f"{c}\t{' '.join(lex.entries[c])}\n" for c in lex.inventory.coarse_units]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_lexicon(path, inventory: UnitInventory) -> Lexicon:
    entries = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
        if not line:
            continue
        key, sep, rest = line.partition("\t")
        if not sep or not rest.split():
            raise ParseError(f"expected COARSE<TAB>F1 F2 ..., got {line!r}", line=n)
        entries[key] = tuple(rest.split())
    return Lexicon(inventory, entries)


def save_units(directory, lex: Lexicon):
    directory = Path(directory)
    write_tokens(directory / "fine.txt", lex.inventory.fine.tokens)
    write_tokens(directory / "coarse.txt", lex.inventory.coarse.tokens)
    write_lexicon(directory / "lexicon.txt", lex)


def load_units(directory) -> Lexicon:
    directory = Path(directory)
    fine = read_tokens(directory / "fine.txt")
    coarse = read_tokens(directory / "coarse.txt")
    if tuple(fine[:2]) != FINE_SPECIALS or tuple(coarse[:3]) != COARSE_SPECIALS:
        raise ParseError("inventory files do not start with the reserved specials")
    inv = UnitInventory.build(fine[2:], coarse[3:])
    return read_lexicon(directory / "lexicon.txt", inv)


__all__ = [
    "Vocabulary", "UnitInventory", "Lexicon", "expand_to_fine", "generate_lexicon",
    "coarse_as_fine", "save_units", "load_units", "read_tokens", "write_tokens",
    "read_lexicon", "write_lexicon", "BLANK", "SIL", "UNK", "BOS", "EOS",
]
