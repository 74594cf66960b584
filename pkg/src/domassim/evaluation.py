"""Robustness sweeps over attacks x epsilon and their CSV reports."""
from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

from .attacks import ATTACKS, AttackConfig, run_attack
from .models import VARIANTS
from .train import predict

CSV_HEADER = ("variant", "backbone", "attack", "epsilon", "accuracy", "n_samples", "seed")
EPSILON_GRID = tuple(range(1, 9))  # numerators over 255


@dataclass(frozen=True)
class ReportRow:
    variant: str
    backbone: str
    attack: str
    epsilon_k: int
    accuracy: float
    n_samples: int
    seed: int

    @property
    def adversarial(self) -> bool:
        return self.attack != "clean"

    @property
    def epsilon(self) -> str:
        return f"{self.epsilon_k}/255"


def parse_epsilon(text: str) -> int:
    """'3/255' -> 3. A bare integer is read as a numerator over 255."""
    text = text.strip()
    num, sep, den = text.partition("/")
    try:
        k = int(num)
        if sep and int(den) != 255:
            raise ValueError
    except ValueError:
        raise ValueError(f"epsilon {text!r} is not of the form k/255") from None
    if k < 0 or k > 255:
        raise ValueError(f"epsilon {text!r} outside [0/255, 255/255]")
    return k


def _adv_accuracy(stack, x, y, cfg: AttackConfig, batch_size: int) -> float:
    correct = 0
    for b, s in enumerate(range(0, len(x), batch_size)):
        xb, yb = x[s:s + batch_size], y[s:s + batch_size]
        bcfg = AttackConfig(cfg.kind, cfg.epsilon, cfg.alpha, cfg.steps, cfg.mu, cfg.random_start, cfg.seed + b)
        adv = run_attack(stack, xb, yb, bcfg)
        correct += int((predict(stack, adv, batch_size) == yb).sum())
    return correct / len(x)


def robustness_sweep(stack, dataset, attacks: Sequence = ATTACKS, epsilons: Iterable[int] = EPSILON_GRID,
                     seed: int = 0, steps: int = 10, batch_size: int = 64) -> List[ReportRow]:
    """Clean accuracy followed by one row per (attack, epsilon); epsilons are numerators over 255.

    ``attacks`` holds attack names or ``AttackConfig`` templates whose epsilon is ignored.
    """
    x, y = dataset.batch(), dataset.labels
    n = len(y)
    stack.eval()
    backbone = getattr(stack, "backbone_name", "smallcnn")
    rows = [ReportRow(stack.variant, backbone, "clean", 0, float(np.mean(predict(stack, x) == y)), n, seed)]
    for attack in attacks:
        template = attack if isinstance(attack, AttackConfig) else AttackConfig(attack, 0.0, steps=steps, seed=seed)
        for k in sorted(set(int(e) for e in epsilons)):
            cfg = AttackConfig(template.kind, k / 255.0, template.alpha, template.steps, template.mu,
                               template.random_start, template.seed)
            rows.append(ReportRow(stack.variant, backbone, template.kind, k,
                                  _adv_accuracy(stack, x, y, cfg, batch_size), n, seed))
    return rows


def _sort_key(row: ReportRow):
    vrank = VARIANTS.index(row.variant) if row.variant in VARIANTS else len(VARIANTS)
    arank = -1 if row.attack == "clean" else (ATTACKS.index(row.attack) if row.attack in ATTACKS else len(ATTACKS))
    return (vrank, row.variant, arank, row.attack, row.epsilon_k)


def format_report_csv(rows: Iterable[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(rows, key=_sort_key):
        w.writerow((r.variant, r.backbone, r.attack, r.epsilon, repr(float(r.accuracy)), r.n_samples, r.seed))
    return buf.getvalue()


def write_report_csv(rows: Iterable[ReportRow], path) -> None:
    """UTF-8, LF-terminated CSV; written to a temporary file and renamed into place."""
    write_text_atomic(path, format_report_csv(rows))


def read_report_csv(path) -> List[ReportRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [ReportRow(r["variant"], r["backbone"], r["attack"], parse_epsilon(r["epsilon"]),
                          float(r["accuracy"]), int(r["n_samples"]), int(r["seed"])) for r in reader]


def write_text_atomic(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
