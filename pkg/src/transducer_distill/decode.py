"""Greedy and beam-search decoding over a transducer model.

Both decoders drive the model through its incremental interface
(``predictor_start`` / ``predictor_advance`` / ``joint_log_probs``), so any
object implementing those methods plus ``encode`` and ``vocab_size`` works.
Ties are broken toward the lexicographically smaller label sequence so that
decoding is deterministic.
"""

import json
from dataclasses import dataclass

import numpy as np

from .lattice import forward_backward

DEFAULT_MAX_SYMBOLS_PER_FRAME = 5


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class Hypothesis:
    labels: tuple
    score: float


@dataclass
class NBestList:
    hypotheses: list
    beam_size: int

    def __post_init__(self):
        if self.beam_size < 1:
            raise DecodeError("beam_size must be >= 1")
        if len(self.hypotheses) > self.beam_size:
            raise DecodeError("more hypotheses than beam_size")
        seen = set()
        prev = np.inf
        for hyp in self.hypotheses:
            if hyp.labels in seen:
                raise DecodeError(f"duplicate hypothesis {hyp.labels}")
            seen.add(hyp.labels)
            if hyp.score > prev + 1e-12:
                raise DecodeError("hypotheses not sorted by descending score")
            prev = hyp.score

    def top(self) -> Hypothesis:
        return self.hypotheses[0]

    def __len__(self):
        return len(self.hypotheses)


def greedy_decode(model, x, max_symbols_per_frame: int = DEFAULT_MAX_SYMBOLS_PER_FRAME) -> Hypothesis:
    """Frame-synchronous argmax decoding.

    Emits the argmax label while it beats blank (capped per frame), then
    advances time; the score accumulates the chosen log-probabilities.
    """
    if max_symbols_per_frame < 1:
        raise DecodeError("max_symbols_per_frame must be >= 1")
    enc = model.encode(x)
    blank = model.vocab_size
    state = model.predictor_start()
    labels = []
    score = 0.0
    for t in range(enc.shape[0]):
        for _ in range(max_symbols_per_frame):
            logp = model.joint_log_probs(enc[t], state)
            k = int(np.argmax(logp))
            score += float(logp[k])
            if k == blank:
                break
            labels.append(k)
            state = model.predictor_advance(state, k)
        else:
            # cap hit: advance time, accounting for the blank we force
            score += float(model.joint_log_probs(enc[t], state)[blank])
    return Hypothesis(labels=tuple(labels), score=score)


@dataclass
class _Beam:
    labels: tuple
    score: float
    state: np.ndarray
    emitted_in_frame: int


def _sort_key(item):
    return (-item.score, item.labels)


def beam_search(
    model,
    x,
    beam: int,
    max_symbols_per_frame: int = DEFAULT_MAX_SYMBOLS_PER_FRAME,
) -> NBestList:
    """Time-synchronous transducer beam search with hypothesis merging.

    Hypotheses carrying identical label sequences are merged by log-adding
    their scores, so with a beam wide enough to avoid pruning the scores
    converge to the exact full-sum sequence log-probabilities.
    """
    if beam < 1:
        raise DecodeError("beam must be >= 1")
    enc = model.encode(x)
    blank = model.vocab_size

    kept = [_Beam(labels=(), score=0.0, state=model.predictor_start(), emitted_in_frame=0)]
    for t in range(enc.shape[0]):
        open_hyps = [
            _Beam(h.labels, h.score, h.state, emitted_in_frame=0) for h in kept
        ]
        merged: dict[tuple, _Beam] = {}
        while open_hyps:
            best = min(open_hyps, key=_sort_key)
            open_hyps.remove(best)
            logp = model.joint_log_probs(enc[t], best.state)

            # blank terminates the frame for this hypothesis; merge
            blank_score = best.score + float(logp[blank])
            existing = merged.get(best.labels)
            if existing is None:
                merged[best.labels] = _Beam(best.labels, blank_score, best.state, 0)
            else:
                existing.score = float(np.logaddexp(existing.score, blank_score))

            if best.emitted_in_frame < max_symbols_per_frame:
                for k in range(model.vocab_size):
                    open_hyps.append(
                        _Beam(
                            labels=best.labels + (k,),
                            score=best.score + float(logp[k]),
                            state=model.predictor_advance(best.state, k),
                            emitted_in_frame=best.emitted_in_frame + 1,
                        )
                    )

            if open_hyps:
                frontier = min(open_hyps, key=_sort_key).score
                settled = [h for h in merged.values() if h.score > frontier]
                if len(settled) >= beam:
                    break
        kept = sorted(merged.values(), key=_sort_key)[:beam]

    hyps = [Hypothesis(labels=h.labels, score=h.score) for h in kept]
    return NBestList(hypotheses=hyps, beam_size=beam)


def rescore_nbest(model, x, nbest: NBestList) -> list:
    """Exact full-sum log P(Y'|X) for every hypothesis, replacing beam scores."""
    scores = []
    for hyp in nbest.hypotheses:
        lat = model.build_lattice(x, list(hyp.labels))
        log_prob, _, _ = forward_backward(lat, list(hyp.labels))
        scores.append(float(log_prob))
    return scores


# ----- pseudo-label records -----


@dataclass
class PseudoLabelRecord:
    """Teacher output for one unsupervised utterance.

    ``labels``/``score`` hold the top-1 pseudo label and its (full-sum
    rescored) log probability; ``nbest`` holds (labels, score) pairs for the
    hypothesis list when N-best generation is configured.
    """

    utt_id: str
    labels: tuple
    score: float
    nbest: list

    def target_index(self) -> int:
        """Position of the pseudo label inside the N-best list."""
        for i, (labels, _) in enumerate(self.nbest):
            if tuple(labels) == tuple(self.labels):
                return i
        raise DecodeError(f"pseudo label missing from N-best for {self.utt_id}")


def write_pseudo_labels(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(
                json.dumps(
                    {
                        "utt_id": rec.utt_id,
                        "labels": list(rec.labels),
                        "score": rec.score,
                        "nbest": [
                            {"labels": list(l), "score": s} for l, s in rec.nbest
                        ],
                    },
                    sort_keys=True,
                )
            )
            f.write("\n")


def read_pseudo_labels(path) -> dict:
    records = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            obj = json.loads(line)
            records[obj["utt_id"]] = PseudoLabelRecord(
                utt_id=obj["utt_id"],
                labels=tuple(obj["labels"]),
                score=float(obj["score"]),
                nbest=[(tuple(e["labels"]), float(e["score"])) for e in obj["nbest"]],
            )
    return records
