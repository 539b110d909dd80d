"""Test accuracy on a slice of the joint head, per-round records and run summaries."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from hetfl.data import LabeledDataset
from hetfl.errors import DataError, ParameterError
from hetfl.nn import ModelParams, forward_logits


def evaluate_accuracy(model: ModelParams, testset: LabeledDataset,
                      class_slice: tuple[int, int] | None = None) -> float:
    """Fraction of examples whose argmax over ``logits[:, lo:hi]`` equals the label.

    ``class_slice`` defaults to the slice the dataset occupies in the joint head.
    Ties resolve to the lowest index (``np.argmax`` semantics).
    """
    if len(testset) == 0:
        raise DataError("cannot evaluate on an empty test set")
    lo, hi = testset.class_slice if class_slice is None else class_slice
    if not 0 <= lo < hi <= model.arch.output_dim:
        raise ParameterError(f"class slice [{lo}, {hi}) outside head of size {model.arch.output_dim}")
    if testset.labels.max() >= hi - lo:
        raise DataError(f"labels up to {testset.labels.max()} do not fit slice [{lo}, {hi})")
    logits = forward_logits(model, testset.inputs)
    pred = np.argmax(logits[:, lo:hi], axis=1)
    return int(np.count_nonzero(pred == testset.labels)) / len(testset)


def mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else float("nan")


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    global_acc: float
    distilled_acc_mean: float
    personalised_acc_mean: float
    gap: float
    distilled_accs: tuple[float, ...] = ()
    personalised_accs: tuple[float, ...] = ()
    participating_client_ids: tuple[int, ...] = ()

    @classmethod
    def from_accs(cls, round_index: int, global_acc: float, distilled_accs,
                  personalised_accs, participating_client_ids) -> RoundRecord:
        d = mean(distilled_accs)
        p = mean(personalised_accs)
        return cls(round_index, float(global_acc), d, p, d - p,
                   tuple(float(a) for a in distilled_accs),
                   tuple(float(a) for a in personalised_accs),
                   tuple(int(i) for i in participating_client_ids))


@dataclass(frozen=True)
class EvalReport:
    initial_mean: float
    global_final: float | None
    distilled_final_mean: float | None
    personalised_final_mean: float | None
    gap_final: float | None
    per_round: list[RoundRecord] = field(default_factory=list)
    initial_accs: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_round"] = [asdict(r) for r in self.per_round]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        d = dict(d)
        d["per_round"] = [
            RoundRecord(**{k: tuple(v) if isinstance(v, list) else v for k, v in r.items()})
            for r in d["per_round"]
        ]
        d["initial_accs"] = tuple(d.get("initial_accs", ()))
        return cls(**d)

    def tail_mean(self, attr: str, last: int = 10) -> float:
        """Mean of a RoundRecord attribute over the final ``last`` rounds."""
        return mean(getattr(r, attr) for r in self.per_round[-last:])


def summarize(records: list[RoundRecord], initial_accs) -> EvalReport:
    initial_accs = tuple(float(a) for a in initial_accs)
    init_mean = mean(initial_accs)
    if not records:
        return EvalReport(init_mean, None, None, None, None, [], initial_accs)
    last = records[-1]
    return EvalReport(
        initial_mean=init_mean,
        global_final=last.global_acc,
        distilled_final_mean=last.distilled_acc_mean,
        personalised_final_mean=last.personalised_acc_mean,
        gap_final=last.gap,
        per_round=list(records),
        initial_accs=initial_accs,
    )


def format_percent(acc: float) -> str:
    """Two-decimal percentage, locale independent."""
    text = f"{100.0 * acc:.2f}"
    return "0.00" if text == "-0.00" else text
