"""Synthetic corpora with controllable difficulty.

Each label owns a fixed random template vector; an utterance emits a few
noisy copies of each label's template in order.  Task difficulty is the
single noise scale.  All randomness flows from named seeds, so identical
specs reproduce identical corpora, batches, and corruptions.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    vocab_size: int
    feat_dim: int
    frames_per_label: tuple
    noise_sigma: float
    label_len_range: tuple
    num_supervised: int
    num_unsupervised: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "frames_per_label", tuple(self.frames_per_label))
        object.__setattr__(self, "label_len_range", tuple(self.label_len_range))
        a, b = self.frames_per_label
        if a < 1 or b < a:
            raise DataError(f"bad frames_per_label range {self.frames_per_label}")
        lo, hi = self.label_len_range
        if lo < 1 or hi < lo:
            raise DataError(f"bad label_len_range {self.label_len_range}")
        if self.num_supervised < 1 or self.num_unsupervised < 1:
            raise DataError("corpus sizes must be >= 1")
        if self.vocab_size < 1 or self.feat_dim < 1:
            raise DataError("vocab_size and feat_dim must be >= 1")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")


@dataclass
class Utterance:
    utt_id: str
    frames: np.ndarray
    labels: tuple | None = None


@dataclass
class Corpus:
    split: str
    utterances: list
    hidden_refs: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.utterances)

    def utt_ids(self):
        return [u.utt_id for u in self.utterances]

    def reference_labels(self, utt_id: str) -> tuple:
        """Ground truth for evaluation; reaches hidden references of
        unsupervised splits that training code must never see."""
        for utt in self.utterances:
            if utt.utt_id == utt_id:
                if utt.labels is not None:
                    return utt.labels
                break
        ref = self.hidden_refs.get(utt_id)
        if ref is None:
            raise DataError(f"no reference labels for utterance {utt_id!r}")
        return ref


def label_templates(spec: SyntheticSpec) -> np.ndarray:
    """Per-label feature templates, a function of the spec seed only."""
    rng = np.random.default_rng(spec.seed)
    return rng.normal(size=(spec.vocab_size, spec.feat_dim))


def _sample_utterance(spec, templates, rng, utt_id: str) -> tuple:
    lo, hi = spec.label_len_range
    length = int(rng.integers(lo, hi + 1))
    labels = tuple(int(v) for v in rng.integers(0, spec.vocab_size, size=length))
    a, b = spec.frames_per_label
    rows = []
    for lab in labels:
        repeats = int(rng.integers(a, b + 1))
        noise = rng.normal(size=(repeats, spec.feat_dim)) * spec.noise_sigma
        rows.append(templates[lab] + noise)
    frames = np.round(np.concatenate(rows, axis=0), 9)
    return Utterance(utt_id=utt_id, frames=frames, labels=labels), labels


def generate_split(spec: SyntheticSpec, tag: str, size: int, stream: int,
                   visible_labels: bool = True) -> Corpus:
    """One corpus split; ``stream`` decouples the utterance randomness from
    the template randomness so different splits share label templates."""
    templates = label_templates(spec)
    rng = np.random.default_rng([spec.seed, stream])
    utterances = []
    hidden = {}
    for i in range(size):
        utt_id = f"{tag}-{i:05d}"
        utt, labels = _sample_utterance(spec, templates, rng, utt_id)
        if not visible_labels:
            hidden[utt_id] = labels
            utt.labels = None
        utterances.append(utt)
    return Corpus(split=tag, utterances=utterances, hidden_refs=hidden)


def generate(spec: SyntheticSpec):
    """Supervised and unsupervised corpora; ground truth of the unsupervised
    split is retained as hidden references for evaluation only."""
    supervised = generate_split(spec, "sup", spec.num_supervised, stream=1)
    unsupervised = generate_split(
        spec, "unsup", spec.num_unsupervised, stream=2, visible_labels=False
    )
    return supervised, unsupervised


def corrupt_labels(corpus: Corpus, rate: float, seed: int, vocab_size: int | None = None) -> Corpus:
    """Randomly substitute / delete / insert labels (0.8 / 0.1 / 0.1 of the
    corruption rate respectively), deterministic per seed."""
    if not 0 <= rate < 1:
        raise DataError(f"corruption rate {rate} outside [0, 1)")
    if vocab_size is None:
        vocab_size = _vocab_of(corpus)
    rng = np.random.default_rng(seed)
    out = []
    for utt in corpus.utterances:
        if utt.labels is None:
            raise DataError("corrupt_labels needs a supervised corpus")
        new = []
        for lab in utt.labels:
            draw = rng.random()
            if draw < rate * 0.8:
                shift = int(rng.integers(1, vocab_size)) if vocab_size > 1 else 0
                new.append((lab + shift) % vocab_size)
            elif draw < rate * 0.9:
                continue  # deletion
            else:
                new.append(lab)
                if draw < rate:
                    new.append(int(rng.integers(0, vocab_size)))
        out.append(Utterance(utt.utt_id, utt.frames, tuple(new)))
    return Corpus(split=corpus.split, utterances=out, hidden_refs=dict(corpus.hidden_refs))


def _vocab_of(corpus: Corpus) -> int:
    top = 0
    for utt in corpus.utterances:
        if utt.labels:
            top = max(top, max(utt.labels) + 1)
    return max(top, 2)


def subsample_corpus(corpus: Corpus, fraction: float, seed: int) -> Corpus:
    """Keep a deterministic random fraction of the utterances (>= 1)."""
    if not 0 < fraction <= 1:
        raise DataError(f"fraction {fraction} outside (0, 1]")
    rng = np.random.default_rng(seed)
    n = max(1, int(round(fraction * len(corpus.utterances))))
    idx = sorted(rng.permutation(len(corpus.utterances))[:n])
    utts = [corpus.utterances[i] for i in idx]
    return Corpus(split=corpus.split, utterances=utts, hidden_refs=dict(corpus.hidden_refs))


def mix_batches(supervised: Corpus, unsupervised: Corpus, batch_size: int,
                sup_fraction: float = 0.10, seed: int = 0):
    """Endless stream of batches mixing the two corpora.

    Each batch holds round(batch_size * sup_fraction) supervised utterances
    (stochastically rounded so the long-run fraction is exact) and the rest
    unsupervised, drawn from independently reshuffled epochs.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if not 0 <= sup_fraction <= 1:
        raise DataError(f"sup_fraction {sup_fraction} outside [0, 1]")
    if sup_fraction > 0 and not supervised.utterances:
        raise DataError("supervised corpus is empty but sup_fraction > 0")
    if sup_fraction < 1 and not unsupervised.utterances:
        raise DataError("unsupervised corpus is empty but sup_fraction < 1")
    return _batch_stream(supervised, unsupervised, batch_size, sup_fraction, seed)


def _batch_stream(supervised, unsupervised, batch_size, sup_fraction, seed):
    rng = np.random.default_rng(seed)

    def cycler(utts):
        while True:
            order = rng.permutation(len(utts))
            for i in order:
                yield utts[i]

    sup_iter = cycler(supervised.utterances) if supervised.utterances else None
    unsup_iter = cycler(unsupervised.utterances) if unsupervised.utterances else None

    exact = batch_size * sup_fraction
    base = int(np.floor(exact))
    frac = exact - base
    while True:
        n_sup = base + (1 if frac > 0 and rng.random() < frac else 0)
        n_sup = min(n_sup, batch_size)
        batch = [next(sup_iter) for _ in range(n_sup)]
        batch += [next(unsup_iter) for _ in range(batch_size - n_sup)]
        yield batch


# ----- corpus files -----


def write_corpus(path, corpus: Corpus) -> None:
    """Line-delimited records {utt_id, frames, labels?}; frame values are
    9-decimal fixed-point so files re-read value-exactly."""
    with open(path, "w", encoding="utf-8") as f:
        for utt in corpus.utterances:
            rec = {
                "utt_id": utt.utt_id,
                "frames": [[round(float(v), 9) for v in row] for row in utt.frames],
            }
            if utt.labels is not None:
                rec["labels"] = list(utt.labels)
            f.write(json.dumps(rec, sort_keys=True))
            f.write("\n")


def read_corpus(path, split: str) -> Corpus:
    utterances = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            obj = json.loads(line)
            utterances.append(
                Utterance(
                    utt_id=obj["utt_id"],
                    frames=np.asarray(obj["frames"], dtype=np.float64),
                    labels=tuple(obj["labels"]) if "labels" in obj else None,
                )
            )
    return Corpus(split=split, utterances=utterances)


def write_hidden_refs(path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt in corpus.utterances:
            ref = corpus.hidden_refs.get(utt.utt_id)
            if ref is not None:
                f.write(json.dumps({"utt_id": utt.utt_id, "labels": list(ref)}, sort_keys=True))
                f.write("\n")


def read_hidden_refs(path) -> dict:
    refs = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            obj = json.loads(line)
            refs[obj["utt_id"]] = tuple(obj["labels"])
    return refs


def spec_to_dict(spec: SyntheticSpec) -> dict:
    d = asdict(spec)
    d["frames_per_label"] = list(spec.frames_per_label)
    d["label_len_range"] = list(spec.label_len_range)
    return d


def spec_from_dict(d: dict) -> SyntheticSpec:
    return SyntheticSpec(
        vocab_size=d["vocab_size"],
        feat_dim=d["feat_dim"],
        frames_per_label=tuple(d["frames_per_label"]),
        noise_sigma=d["noise_sigma"],
        label_len_range=tuple(d["label_len_range"]),
        num_supervised=d["num_supervised"],
        num_unsupervised=d["num_unsupervised"],
        seed=d["seed"],
    )
