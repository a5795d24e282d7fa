"""Segment-vote inference and two-step (manufacturer, then part) identification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensemble import EnsembleModel
from .oneclass import OneClassEnvelope

__all__ = ["UNKNOWN_ORIGIN", "RegistryError", "Verdict", "verdict_from_posteriors",
           "segment_posteriors", "predict_segments", "two_step_identify"]

UNKNOWN_ORIGIN = "unknown origin"


class RegistryError(LookupError):
    """No part-number models are registered for the identified manufacturer."""


@dataclass(frozen=True)
class Verdict:
    predicted_label: str
    segment_votes: dict
    cumulative_posterior: dict
    tie_broken: bool = False
    segment_labels: tuple = ()
    accepted_by: tuple = field(default=())

    @property
    def n_segments(self) -> int:
        return sum(self.segment_votes.values())

    def to_dict(self) -> dict:
        return {"predicted_label": self.predicted_label,
                "segment_votes": dict(sorted(self.segment_votes.items())),
                "cumulative_posterior": {k: round(v, 12) for k, v in sorted(self.cumulative_posterior.items())},
                "tie_broken": self.tie_broken,
                "segment_labels": list(self.segment_labels)}


def verdict_from_posteriors(labels, posteriors) -> Verdict:
    """Plurality vote over segments, tie broken by summed posterior.

    ``posteriors`` is ``(k segments, L labels)``.  Each segment votes for its
    argmax label; exact posterior ties within a segment, and any tie left
    after summing, resolve to the earliest label.
    """
    labels = list(labels)
    P = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    if P.shape[0] == 0:
        raise ValueError("no segments to vote with")
    if P.shape[1] != len(labels):
        raise ValueError(f"{P.shape[1]} posterior columns for {len(labels)} labels")
    seg_choice = np.argmax(P, axis=1)
    counts = np.bincount(seg_choice, minlength=len(labels))
    totals = P.sum(axis=0)
    top = np.flatnonzero(counts == counts.max())
    tie = len(top) > 1
    winner = top[np.argmax(totals[top])] if tie else top[0]
    return Verdict(
        predicted_label=labels[winner],
        segment_votes={labels[i]: int(c) for i, c in enumerate(counts) if c},
        cumulative_posterior={lab: float(t) for lab, t in zip(labels, totals)},
        tie_broken=bool(tie),
        segment_labels=tuple(labels[i] for i in seg_choice),
    )


def segment_posteriors(models: dict, vectors):
    """Target posterior of each one-vs-all model for each segment vector."""
    labels = sorted(models)
    P = np.column_stack([models[lab].posterior(vectors) for lab in labels])
    return labels, P


def predict_segments(models: dict[str, EnsembleModel], vectors) -> Verdict:
    """Classify a chip from its segment feature vectors with one-vs-all models."""
    vectors = list(vectors)
    if not vectors:
        raise ValueError("no segments to vote with")
    if not models:
        raise ValueError("empty model registry")
    labels, P = segment_posteriors(models, vectors)
    return verdict_from_posteriors(labels, P)


def two_step_identify(manufacturer_models: dict, part_models_by_manufacturer: dict, vectors,
                      envelopes: dict[str, OneClassEnvelope] | None = None, strict: bool = False,
                      part_vectors=None):
    """Manufacturer verdict, then part verdict among that manufacturer's parts.

    With ``strict`` the winning manufacturer's one-class envelope must accept
    a majority of the segments, otherwise the chip is of unknown origin and
    the part step is skipped (part verdict ``None``).  ``part_vectors``
    defaults to ``vectors``; it differs when part models use another schema.
    """
    vectors = list(vectors)
    mv = predict_segments(manufacturer_models, vectors)
    if strict:
        if not envelopes:
            raise ValueError("strict identification needs one-class envelopes")
        accepted = tuple(sorted(m for m, env in envelopes.items() if env.accepts_chip(vectors)))
        if mv.predicted_label not in accepted:
            return Verdict(UNKNOWN_ORIGIN, mv.segment_votes, mv.cumulative_posterior, mv.tie_broken,
                           mv.segment_labels, accepted), None
    try:
        parts = part_models_by_manufacturer[mv.predicted_label]
    except KeyError:
        raise RegistryError(f"no part-number models registered for manufacturer {mv.predicted_label!r}") from None
    return mv, predict_segments(parts, vectors if part_vectors is None else list(part_vectors))
