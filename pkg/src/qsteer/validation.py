"""Regression guard: predict the PN-hours delta from data-movement deltas.

Flight successes yield (delta_read, delta_write, delta_pn) samples, where a
delta is new/old - 1. A least-squares affine model trained on the earlier
half of the dates predicts delta_pn; a hint is accepted only when the
predicted delta clears the safety threshold (default -0.1, inclusive).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .flightsim import FlightRecord

GATE_THRESHOLD_DEFAULT = -0.1
_DELTA_CAP = 3.0


@dataclass(frozen=True)
class FlightSample:
    date: str
    job_id: str
    template_id: str
    d_read: float
    d_write: float
    d_pn: float


def samples_from_flights(records: Sequence[FlightRecord]) -> list[FlightSample]:
    """Success outcomes only; the other outcomes carry no measurement."""
    samples = []
    for rec in records:
        if rec.outcome != "success":
            continue
        base, treat = rec.baseline, rec.treatment
        samples.append(
            FlightSample(
                date=rec.date,
                job_id=rec.job_id,
                template_id=rec.template_id,
                d_read=treat.data_read / base.data_read - 1.0,
                d_write=treat.data_written / base.data_written - 1.0,
                d_pn=treat.pn_hours / base.pn_hours - 1.0,
            )
        )
    return samples


@dataclass(frozen=True)
class ValidationModel:
    w0: float
    w_read: float
    w_write: float
    train_start: str = ""
    train_end: str = ""
    heldout_r2: float | None = None
    heldout_n: int = 0

    def predict(self, d_read: float, d_write: float) -> float:
        return self.w0 + self.w_read * d_read + self.w_write * d_write


def predict_pn_delta(model: ValidationModel, d_read: float, d_write: float) -> float:
    return model.predict(d_read, d_write)


def gate(predicted_pn_delta: float, threshold: float = GATE_THRESHOLD_DEFAULT) -> bool:
    """Accept iff the predicted delta is at or below the threshold."""
    return predicted_pn_delta <= threshold


def _nonneg_slope_lstsq(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares with the slope coefficients constrained to be >= 0.

    More data moved can only cost more work, so a negative slope is always a
    collinearity artifact; it would let a flip that inflates writes masquerade
    as an improvement. Active-set over two slopes: drop any negative one and
    refit, keeping the feasible fit with the lowest residual.
    """
    best = None
    best_sse = np.inf
    for mask in ((1, 1), (1, 0), (0, 1), (0, 0)):
        keep = [0] + [i + 1 for i in range(2) if mask[i]]
        sub, *_ = np.linalg.lstsq(x[:, keep], y, rcond=None)
        coef = np.zeros(3)
        coef[keep] = sub
        if coef[1] < 0.0 or coef[2] < 0.0:
            continue
        sse = float(((y - x @ coef) ** 2).sum())
        if sse < best_sse:
            best_sse = sse
            best = coef
    assert best is not None  # mask (0, 0) is always feasible
    return best


def train_validation_model(samples: Sequence[FlightSample]) -> ValidationModel:
    """Least squares on the earlier half of the dates; held out on the rest."""
    dates = sorted({s.date for s in samples})
    if len(dates) < 2:
        raise ValueError(f"need samples from at least 2 distinct dates, got {len(dates)}")
    cut = (len(dates) + 1) // 2
    train_dates = set(dates[:cut])
    train = [s for s in samples if s.date in train_dates]
    heldout = [s for s in samples if s.date not in train_dates]

    def design(rows):
        # A handful of flips blow up data_written by 30x and more; left
        # unclipped they own the fit through sheer leverage. Deltas are
        # bounded below by -1, so only the upper side needs a cap.
        x = np.asarray([[1.0, min(s.d_read, _DELTA_CAP), min(s.d_write, _DELTA_CAP)] for s in rows])
        y = np.asarray([s.d_pn for s in rows])
        return x, y

    x, y = design(train)
    coef = _nonneg_slope_lstsq(x, y)
    r2 = None
    if heldout:
        hx, hy = design(heldout)
        resid = hy - hx @ coef
        ss_tot = float(((hy - hy.mean()) ** 2).sum())
        r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 0.0
    return ValidationModel(
        w0=float(coef[0]),
        w_read=float(coef[1]),
        w_write=float(coef[2]),
        train_start=dates[0],
        train_end=dates[cut - 1],
        heldout_r2=r2,
        heldout_n=len(heldout),
    )


def gate_precision(
    model: ValidationModel,
    samples: Sequence[FlightSample],
    threshold: float = GATE_THRESHOLD_DEFAULT,
) -> dict[str, float]:
    """Among accepted samples: fraction truly below threshold and below zero."""
    accepted = [s for s in samples if gate(model.predict(s.d_read, s.d_write), threshold)]
    if not accepted:
        return {"accepted": 0, "frac_below_threshold": 0.0, "frac_improved": 0.0}
    below = sum(1 for s in accepted if s.d_pn < threshold)
    improved = sum(1 for s in accepted if s.d_pn < 0.0)
    return {
        "accepted": len(accepted),
        "frac_below_threshold": below / len(accepted),
        "frac_improved": improved / len(accepted),
    }


_MODEL_HEADER = "# qsteer-vmodel v1"
_SAMPLES_HEADER = "# qsteer-flight-samples v1"


def save_validation_model(model: ValidationModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_MODEL_HEADER + "\n")
        fh.write(f"w0\t{model.w0!r}\n")
        fh.write(f"w_read\t{model.w_read!r}\n")
        fh.write(f"w_write\t{model.w_write!r}\n")
        fh.write(f"train_window\t{model.train_start}\t{model.train_end}\n")


def load_validation_model(path) -> ValidationModel:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != _MODEL_HEADER:
            raise ValueError(f"{path}: not a validation model file (header {header!r})")
        fields = {}
        window = ("", "")
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "train_window":
                window = (parts[1], parts[2]) if len(parts) == 3 else ("", "")
            else:
                fields[parts[0]] = float(parts[1])
    missing = {"w0", "w_read", "w_write"} - set(fields)
    if missing:
        raise ValueError(f"{path}: missing fields {sorted(missing)}")
    return ValidationModel(
        fields["w0"], fields["w_read"], fields["w_write"], window[0], window[1]
    )


def write_flight_samples(samples: Sequence[FlightSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_SAMPLES_HEADER + "\n")
        for s in samples:
            fh.write(
                f"{s.date}\t{s.job_id}\t{s.template_id}\t{s.d_read!r}\t{s.d_write!r}\t{s.d_pn!r}\n"
            )


def read_flight_samples(path) -> list[FlightSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != _SAMPLES_HEADER:
            raise ValueError(f"{path}: not a flight sample file (header {header!r})")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
            samples.append(
                FlightSample(
                    parts[0], parts[1], parts[2],
                    float(parts[3]), float(parts[4]), float(parts[5]),
                )
            )
    return samples
