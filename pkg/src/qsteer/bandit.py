"""Contextual bandit over single-rule flips.

Logging chooses uniformly over the no-op plus one flip per span rule, so the
propensity is exactly 1/(1+S). The reward is the optimizer's estimated-cost
ratio default/new clipped to [0, 2], with 0 for a failed compilation. The
policy is a linear model in the hashed context x action space, trained with
IPS-weighted AdaGrad SGD, and evaluated off-policy with the standard IPS
estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .features import (
    ActionVector,
    ContextVector,
    D_BITS_DEFAULT,
    NOOP_ACTION,
    Normalizer,
    hashed_features,
)

REWARD_CLIP = 2.0


def reward_from_costs(cost_default: float, cost_new: float | None) -> float:
    """Estimated-cost improvement ratio, clipped; None means CompileError."""
    if not (cost_default > 0.0) or not math.isfinite(cost_default):
        raise ValueError(f"default cost must be positive and finite, got {cost_default}")
    if cost_new is None:
        return 0.0
    if not (cost_new > 0.0) or not math.isfinite(cost_new):
        raise ValueError(f"new cost must be positive and finite, got {cost_new}")
    return min(cost_default / cost_new, REWARD_CLIP)


@dataclass(frozen=True)
class DecisionRecord:
    date: str
    job_id: str
    template_id: str
    context: ContextVector
    actions: tuple[ActionVector, ...]  # index 0 is always the no-op
    chosen: int
    propensity: float
    reward: float


@dataclass
class LearnConfig:
    d_bits: int = D_BITS_DEFAULT
    learning_rate: float = 0.01
    epochs: int = 40
    l2: float = 1e-6
    seed: int = 0


@dataclass
class Policy:
    weights: np.ndarray
    normalizer: Normalizer
    d_bits: int = D_BITS_DEFAULT

    def score(self, context: ContextVector, actions: Sequence[ActionVector]) -> np.ndarray:
        idx_parts = []
        val_parts = []
        indptr = [0]
        for action in actions:
            idx, val = hashed_features(context, action, self.normalizer, self.d_bits)
            idx_parts.append(idx)
            val_parts.append(val)
            indptr.append(indptr[-1] + len(idx))
        scores = _kernels.dot_rows(
            self.weights,
            np.concatenate(idx_parts),
            np.concatenate(val_parts),
            np.asarray(indptr, dtype=np.int64),
        )
        return scores

    def choose(self, context: ContextVector, actions: Sequence[ActionVector]) -> int:
        scores = self.score(context, actions)
        return int(np.argmax(scores))  # first maximum wins; index 0 is no-op


def decide(
    context: ContextVector,
    actions: Sequence[ActionVector],
    mode: str,
    rng: np.random.Generator | None = None,
    policy: Policy | None = None,
) -> tuple[int, float]:
    """Pick an action index and its propensity under the given mode."""
    if not actions:
        raise ValueError("need at least one action")
    if mode == "log":
        if rng is None:
            raise ValueError("log mode needs an rng")
        chosen = int(rng.integers(len(actions)))
        return chosen, 1.0 / len(actions)
    if mode == "exploit":
        if policy is None:
            raise ValueError("exploit mode needs a trained policy")
        return policy.choose(context, actions), 1.0
    raise ValueError(f"unknown decision mode {mode!r}")


def _csr_from_records(records, normalizer, d_bits):
    idx_parts = []
    val_parts = []
    indptr = [0]
    for rec in records:
        idx, val = hashed_features(
            rec.context, rec.actions[rec.chosen], normalizer, d_bits
        )
        idx_parts.append(idx)
        val_parts.append(val)
        indptr.append(indptr[-1] + len(idx))
    return (
        np.concatenate(idx_parts),
        np.concatenate(val_parts),
        np.asarray(indptr, dtype=np.int64),
    )


def learn(records: Sequence[DecisionRecord], config: LearnConfig | None = None) -> Policy:
    """Train the linear policy on a decision log. Deterministic for a seed."""
    config = config or LearnConfig()
    if not records:
        raise ValueError("cannot learn from an empty decision log")
    normalizer = Normalizer.fit([rec.context.dense for rec in records])
    idx, val, indptr = _csr_from_records(records, normalizer, config.d_bits)
    rewards = np.asarray([rec.reward for rec in records], dtype=np.float64)
    sweights = np.asarray([1.0 / rec.propensity for rec in records], dtype=np.float64)
    weights = np.zeros(1 << config.d_bits, dtype=np.float64)
    g2 = np.zeros_like(weights)
    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    for _ in range(config.epochs):
        order = rng.permutation(len(records)).astype(np.int64)
        _kernels.sgd_epoch(weights, g2, idx, val, indptr, rewards, sweights, order, lr, config.l2)
    return Policy(weights, normalizer, config.d_bits)


def ips_value(
    records: Sequence[DecisionRecord],
    target_prob: Callable[[DecisionRecord], float],
) -> float:
    """IPS estimate of the target policy's value on a logged dataset.

    target_prob(record) is the probability the target assigns to the action
    that was actually logged.
    """
    if not records:
        raise ValueError("cannot evaluate on an empty decision log")
    total = 0.0
    for rec in records:
        total += target_prob(rec) * rec.reward / rec.propensity
    return total / len(records)


def ips_policy_value(policy: Policy, records: Sequence[DecisionRecord]) -> float:
    def prob(rec: DecisionRecord) -> float:
        return 1.0 if policy.choose(rec.context, rec.actions) == rec.chosen else 0.0

    return ips_value(records, prob)


def ips_uniform_value(records: Sequence[DecisionRecord]) -> float:
    return ips_value(records, lambda rec: 1.0 / len(rec.actions))


# ---------------------------------------------------------------------------
# Decision log and policy files. Reals are written with repr() so values such
# as the 1/(1+S) propensity survive a round trip bit-exactly; the 9-digit view
# format is deliberately not used here.

_LOG_HEADER = "# qsteer-decision-log v1"
_POLICY_HEADER = "# qsteer-policy v1"


def _fmt_action(action: ActionVector) -> str:
    if action.kind == "noop":
        return "noop"
    # Category rides along because it feeds the action feature hash.
    return f"{action.rule_id}:{action.direction}:{action.category}"


def _parse_action(text: str) -> ActionVector:
    if text == "noop":
        return NOOP_ACTION
    parts = text.split(":")
    if len(parts) != 3 or parts[1] not in ("on", "off"):
        raise ValueError(f"bad action {text!r}")
    return ActionVector("flip", int(parts[0]), parts[2], parts[1])


def write_decision_log(records: Sequence[DecisionRecord], path) -> None:
    lines = [_LOG_HEADER]
    for rec in records:
        lines.append(
            "\t".join(
                [
                    rec.date,
                    rec.job_id,
                    rec.template_id,
                    ",".join(str(i) for i in rec.context.span) or "-",
                    ",".join(repr(v) for v in rec.context.dense),
                    ";".join(_fmt_action(a) for a in rec.actions),
                    str(rec.chosen),
                    repr(rec.propensity),
                    repr(rec.reward),
                ]
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_decision_log(path) -> list[DecisionRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != _LOG_HEADER:
            raise ValueError(f"{path}: not a decision log (header {header!r})")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 9:
                raise ValueError(f"{path}:{lineno}: expected 9 columns, got {len(parts)}")
            date, job_id, template_id, span_s, dense_s, actions_s, chosen_s, p_s, r_s = parts
            span = tuple(int(x) for x in span_s.split(",")) if span_s != "-" else ()
            dense = tuple(float(x) for x in dense_s.split(","))
            actions = tuple(_parse_action(a) for a in actions_s.split(";"))
            records.append(
                DecisionRecord(
                    date=date,
                    job_id=job_id,
                    template_id=template_id,
                    context=ContextVector(dense, span),
                    actions=actions,
                    chosen=int(chosen_s),
                    propensity=float(p_s),
                    reward=float(r_s),
                )
            )
    return records


def write_policy(policy: Policy, path) -> None:
    nz = np.nonzero(policy.weights)[0]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_POLICY_HEADER + "\n")
        fh.write(f"d_bits\t{policy.d_bits}\n")
        fh.write("means\t" + ",".join(repr(v) for v in policy.normalizer.means) + "\n")
        fh.write("stds\t" + ",".join(repr(v) for v in policy.normalizer.stds) + "\n")
        fh.write(f"nnz\t{len(nz)}\n")
        for i in nz:
            fh.write(f"{int(i)}\t{policy.weights[i]!r}\n")


def read_policy(path) -> Policy:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != _POLICY_HEADER:
            raise ValueError(f"{path}: not a policy file (header {header!r})")
        meta = {}
        for _ in range(4):
            key, _, value = fh.readline().rstrip("\n").partition("\t")
            meta[key] = value
        d_bits = int(meta["d_bits"])
        normalizer = Normalizer(
            tuple(float(x) for x in meta["means"].split(",")),
            tuple(float(x) for x in meta["stds"].split(",")),
        )
        weights = np.zeros(1 << d_bits, dtype=np.float64)
        for _ in range(int(meta["nnz"])):
            idx_s, _, w_s = fh.readline().rstrip("\n").partition("\t")
            weights[int(idx_s)] = float(w_s)
    return Policy(weights, normalizer, d_bits)
