"""Synthetic accented corpus.

Each fine unit owns an acoustic template. An accent shifts the templates of a
subset of fine units by a fixed accent-specific offset; the remaining units
are pronounced in the standard way. Frames are template + offset + noise,
emitted for a random number of frames per unit.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ParseError
from .vocab import Lexicon, generate_lexicon

SPLITS = ("train", "dev", "test")


@dataclass
class CorpusSpec:
    n_accents: int = 4
    n_fine: int = 12
    n_coarse: int = 40
    feat_dim: int = 16
    frames_per_unit: Tuple[int, int] = (2, 4)
    utt_len: Tuple[int, int] = (4, 10)
    accent_shift_scale: float = 1.5
    accent_phoneme_fraction: float = 0.25
    noise_std: float = 0.5
    accent_weights: Optional[Tuple[float, ...]] = None
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    seed: int = 0

    def validate(self):
        if self.n_fine < 4:
            raise ConfigError("n_fine must be >= 4")
        if self.n_accents < 2:
            raise ConfigError("n_accents must be >= 2")
        if not 0 < self.accent_phoneme_fraction <= 1:
            raise ConfigError("accent_phoneme_fraction must be in (0, 1]")
        if self.accent_phoneme_fraction * self.n_fine < 1:
            raise ConfigError("accent_phoneme_fraction * n_fine must be >= 1")
        lo, hi = self.utt_len
        if hi < 1 or lo < 1 or lo > hi:
            raise ConfigError(f"degenerate utt_len range {self.utt_len}")
        lo, hi = self.frames_per_unit
        if lo < 1 or lo > hi:
            raise ConfigError(f"degenerate frames_per_unit range {self.frames_per_unit}")
        if self.accent_shift_scale < 0 or self.noise_std < 0:
            raise ConfigError("scales must be nonnegative")
        w = self.weights
        if len(w) != self.n_accents or min(w) <= 0:
            raise ConfigError("accent_weights needs one positive weight per accent")

    @property
    def weights(self) -> np.ndarray:
        # default marginals are linearly imbalanced: K, K-1, ..., 1
        w = self.accent_weights or tuple(range(self.n_accents, 0, -1))
        w = np.asarray(w, dtype=float)
        return w / w.sum()

    @property
    def n_accented(self) -> int:
        return max(1, int(round(self.accent_phoneme_fraction * self.n_fine)))


@dataclass(eq=False)
class Utterance:
    utt_id: str
    frames: np.ndarray
    y_f: Tuple[int, ...]
    y_c: Tuple[int, ...]
    accent: int
    durations: Optional[Tuple[int, ...]] = None

    def __eq__(self, other):
        return (isinstance(other, Utterance)
                and self.utt_id == other.utt_id
                and self.frames.shape == other.frames.shape
                and np.array_equal(self.frames, other.frames)
                and tuple(self.y_f) == tuple(other.y_f)
                and tuple(self.y_c) == tuple(other.y_c)
                and self.accent == other.accent
                and self.durations == other.durations)

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class AccentTables:
    """Generator ground truth: templates and per-accent offsets."""

    templates: np.ndarray          # (n_fine_total, F), row per fine index
    deltas: np.ndarray             # (n_accents, n_fine_total, F), zero rows off the accented set
    accented: List[Tuple[int, ...]]  # fine indices each accent perturbs

    def min_pairwise_distance(self) -> float:
        K = self.deltas.shape[0]
        flat = self.deltas.reshape(K, -1)
        return min(float(np.linalg.norm(flat[a] - flat[b]))
                   for a in range(K) for b in range(a + 1, K))


@dataclass
class Corpus:
    lexicon: Lexicon
    splits: Dict[str, List[Utterance]]
    spec: Optional[CorpusSpec] = None
    tables: Optional[AccentTables] = None
    n_accents: int = field(default=0)

    def __post_init__(self):
        if not self.n_accents:
            if self.spec is not None:
                self.n_accents = self.spec.n_accents
            else:
                self.n_accents = 1 + max((u.accent for us in self.splits.values() for u in us),
                                         default=0)

    def __getitem__(self, split) -> List[Utterance]:
        return self.splits[split]


def _accent_tables(spec: CorpusSpec, lex: Lexicon, rng_tpl, rng_acc) -> AccentTables:
    inv = lex.inventory
    V, F = len(inv.fine), spec.feat_dim
    templates = rng_tpl.normal(size=(V, F))
    units = np.arange(2, V)  # skip blank and silence
    n_acc = spec.n_accented
    # disjoint accented sets while the inventory allows it, then wrap around
    perm = rng_acc.permutation(units)
    accented = []
    for a in range(spec.n_accents):
        idx = [(a * n_acc + k) % len(perm) for k in range(n_acc)]
        accented.append(tuple(sorted(int(perm[i]) for i in idx)))
    directions = rng_acc.normal(size=(spec.n_accents, V, F))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    deltas = np.zeros((spec.n_accents, V, F))
    for a, units_a in enumerate(accented):
        for u in units_a:
            deltas[a, u] = spec.accent_shift_scale * directions[a, u]
    return AccentTables(templates=templates, deltas=deltas, accented=accented)


def _make_utterance(utt_id, spec, lex, tables, rng) -> Utterance:
    inv = lex.inventory
    n_units = len(inv.coarse_units)
    first = len(inv.coarse) - n_units
    length = int(rng.integers(spec.utt_len[0], spec.utt_len[1] + 1))
    y_c = tuple(int(first + c) for c in rng.integers(0, n_units, size=length))
    y_f = tuple(lex.expand_ids(y_c))
    accent = int(rng.choice(spec.n_accents, p=spec.weights))
    lo, hi = spec.frames_per_unit
    durations = tuple(int(d) for d in rng.integers(lo, hi + 1, size=len(y_f)))
    rows = np.repeat(np.asarray(y_f), durations)
    mean = tables.templates[rows] + tables.deltas[accent, rows]
    frames = mean + spec.noise_std * rng.normal(size=mean.shape)
    return Utterance(utt_id, frames.astype(np.float32), y_f, y_c, accent, durations)


def generate_corpus(spec: CorpusSpec) -> Corpus:
    """Build train/dev/test splits deterministically from ``spec.seed``."""
    spec.validate()
    ss = np.random.SeedSequence(spec.seed)
    s_lex, s_tpl, s_acc, *s_splits = ss.spawn(3 + len(SPLITS))
    lex = generate_lexicon(spec.n_fine, spec.n_coarse, np.random.default_rng(s_lex))
    tables = _accent_tables(spec, lex, np.random.default_rng(s_tpl), np.random.default_rng(s_acc))
    sizes = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}
    splits = {}
    for name, seq in zip(SPLITS, s_splits):
        rng = np.random.default_rng(seq)
        splits[name] = [_make_utterance(f"{name}-{i:05d}", spec, lex, tables, rng)
                        for i in range(sizes[name])]
    return Corpus(lexicon=lex, splits=splits, spec=spec, tables=tables)


# feature files -------------------------------------------------------------

def write_features(path, frames: np.ndarray):
    frames = np.ascontiguousarray(frames, dtype="<f4")
    T, F = frames.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", T, F))
        fh.write(frames.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ParseError(f"{path}: truncated feature header")
        T, F = struct.unpack("<ii", header)
        data = fh.read()
    if len(data) != 4 * T * F:
        raise ParseError(f"{path}: expected {T}x{F} floats, got {len(data)} bytes")
    return np.frombuffer(data, dtype="<f4").reshape(T, F).astype(np.float32)


# manifests ----------------------------------------------------------------

def write_manifest(path, utterances: Sequence[Utterance], feature_dir=None):
    """JSON-lines manifest; frames inline unless ``feature_dir`` is given."""
    path = Path(path)
    if feature_dir is not None:
        feature_dir = Path(feature_dir)
        feature_dir.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u in utterances:
            rec = {"utt_id": u.utt_id}
            if feature_dir is None:
                rec["frames"] = u.frames.astype(np.float32).tolist()
            else:
                fpath = feature_dir / f"{u.utt_id}.f32"
                write_features(fpath, u.frames)
                rec["frames_path"] = str(fpath.relative_to(path.parent)
                                         if fpath.is_relative_to(path.parent) else fpath)
            rec["y_f"] = list(u.y_f)
            rec["y_c"] = list(u.y_c)
            rec["accent"] = u.accent
            if u.durations is not None:
                rec["durations"] = list(u.durations)
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_manifest(path) -> List[Utterance]:
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if "frames" in rec:
                    frames = np.asarray(rec["frames"], dtype=np.float32)
                    if frames.ndim != 2:
                        raise ValueError("frames must be a 2-D list")
                else:
                    frames = read_features(path.parent / rec["frames_path"])
                durations = rec.get("durations")
                out.append(Utterance(
                    utt_id=str(rec["utt_id"]),
                    frames=frames,
                    y_f=tuple(int(x) for x in rec["y_f"]),
                    y_c=tuple(int(x) for x in rec["y_c"]),
                    accent=int(rec["accent"]),
                    durations=None if durations is None else tuple(int(d) for d in durations),
                ))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"{path.name}: {exc}", line=n) from exc
    return out


def spec_to_dict(spec: CorpusSpec) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()}


def accent_counts(utterances: Sequence[Utterance], n_accents: int) -> np.ndarray:
    counts = np.zeros(n_accents, dtype=int)
    for u in utterances:
        counts[u.accent] += 1
    return counts


# corpus directories ---------------------------------------------------------

def save_corpus(corpus: Corpus, directory, external_features: bool = False):
    """<dir>/{train,dev,test}.jsonl, unit inventories, lexicon and corpus.json."""
    from .vocab import save_units

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_units(directory, corpus.lexicon)
    for name, utts in corpus.splits.items():
        feats = directory / "features" / name if external_features else None
        write_manifest(directory / f"{name}.jsonl", utts, feats)
    meta = {"n_accents": corpus.n_accents, "splits": list(corpus.splits)}
    if corpus.spec is not None:
        meta["spec"] = spec_to_dict(corpus.spec)
    if corpus.tables is not None:
        meta["accented"] = [list(a) for a in corpus.tables.accented]
    (directory / "corpus.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n",
                                           encoding="utf-8")


def load_corpus(directory) -> Corpus:
    """Inverse of ``save_corpus``; generator tables other than the accented sets are not kept."""
    from .vocab import load_units

    directory = Path(directory)
    meta_path = directory / "corpus.json"
    if not meta_path.exists():
        raise ParseError(f"{directory}: no corpus.json; run gen-data first")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    lex = load_units(directory)
    splits = {name: read_manifest(directory / f"{name}.jsonl") for name in meta["splits"]}
    spec = None
    if "spec" in meta:
        raw = dict(meta["spec"])
        for key in ("frames_per_unit", "utt_len", "accent_weights"):
            if raw.get(key) is not None:
                raw[key] = tuple(raw[key])
        spec = CorpusSpec(**raw)
    tables = None
    if "accented" in meta:
        tables = AccentTables(templates=np.zeros((0, 0)), deltas=np.zeros((0, 0, 0)),
                              accented=[tuple(a) for a in meta["accented"]])
    return Corpus(lexicon=lex, splits=splits, spec=spec, tables=tables,
                  n_accents=int(meta["n_accents"]))
