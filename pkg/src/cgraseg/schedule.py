"""Four-phase QAT training schedule and step learning-rate decay.

Phases are half-open epoch intervals; epochs past the last boundary keep the
phase-4 settings until ``total_epochs``.
"""

from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass


@dataclass(frozen=True)
class PhaseState:
    phase: int
    frozen_decoder: bool
    aux_supervision: bool
    dropout: bool
    augmentation: bool


# phase -> (frozen decoder, aux supervision, dropout, augmentation)
PHASE_FLAGS = {
    1: (False, False, True, True),
    2: (True, True, True, True),
    3: (True, True, False, False),
    4: (False, True, True, True),
}


@dataclass(frozen=True)
class ScheduleConfig:
    boundaries: tuple[int, ...] = (50, 110, 170, 218)
    total_epochs: int = 240
    base_lr: float = 7e-4
    lr_milestones: tuple[int, ...] = (110, 170)
    lr_factor: float = 0.1
    batch_size: int = 2

    def __post_init__(self):
        b = tuple(self.boundaries)
        if len(b) != 4 or any(x >= y for x, y in zip(b, b[1:])) or b[0] <= 0:
            raise ValueError(f"boundaries must be 4 strictly increasing positive epochs, got {b}")


def phase_for_epoch(epoch: int, cfg: ScheduleConfig = ScheduleConfig()) -> PhaseState:
    if not 0 <= epoch < cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    phase = min(bisect.bisect_right(cfg.boundaries, epoch) + 1, 4)
    return PhaseState(phase, *PHASE_FLAGS[phase])


def lr_for_epoch(epoch: int, cfg: ScheduleConfig = ScheduleConfig()) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.base_lr * cfg.lr_factor ** bisect.bisect_right(sorted(cfg.lr_milestones), epoch)


def schedule_csv(cfg: ScheduleConfig = ScheduleConfig()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "phase", "frozen_dec", "aux", "dropout", "aug", "lr"])
    for e in range(cfg.total_epochs):
        s = phase_for_epoch(e, cfg)
        w.writerow([e, s.phase, int(s.frozen_decoder), int(s.aux_supervision),
                    int(s.dropout), int(s.augmentation), f"{lr_for_epoch(e, cfg):.6g}"])
    return buf.getvalue()
