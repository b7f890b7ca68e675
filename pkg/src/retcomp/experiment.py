"""Training and evaluation runs driven by a RunConfig."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .cgrpo import METRICS_HEADER, StepMetrics, ToyPolicy, cgrpo_step, retention_ratio, sft_step
from .config import RunConfig
from .core import make_rng
from .pipeline import prepare_features
from .synth import eval_accuracy

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    full: np.ndarray
    comp: np.ndarray
    answers: np.ndarray

    def __len__(self):
        return len(self.answers)

    def subset(self, sl) -> "Prepared":
        return Prepared(self.full[sl], self.comp[sl], self.answers[sl])


def prepare(samples, cfg: RunConfig) -> Prepared:
    return Prepared(*prepare_features(samples, cfg.segment, cfg.retrieval, cfg.compress))


def split(data: Prepared, eval_samples: int) -> tuple[Prepared, Prepared | None]:
    if eval_samples <= 0:
        return data, None
    if eval_samples >= len(data):
        raise ValueError(f"eval_samples={eval_samples} leaves no training data out of {len(data)}")
    return data.subset(slice(None, -eval_samples)), data.subset(slice(-eval_samples, None))


def evaluate(policy: ToyPolicy, data: Prepared, cgrpo_cfg=None) -> dict:
    acc_full = eval_accuracy(policy, list(data.full), data.answers)
    acc_comp = eval_accuracy(policy, list(data.comp), data.answers)
    out = {"acc_full": acc_full, "acc_comp": acc_comp, "num_samples": len(data)}
    if cgrpo_cfg is not None:
        out["retention"] = retention_ratio(acc_comp, acc_full, cgrpo_cfg)
    return out


def train(data: Prepared, cfg: RunConfig, eval_data: Prepared | None = None):
    """Run ``cfg.train.steps`` updates. Returns (final policy, list of StepMetrics)."""
    seed = cfg.run.seed
    mode = cfg.train.mode
    cg = cfg.cgrpo if mode == "cgrpo" else replace(cfg.cgrpo, alpha=0.0)
    C = cfg.synth.num_classes
    policy = ToyPolicy.init(C, data.full.shape[1], make_rng(seed, "init"), cfg.train.init_scale)
    ref = policy.copy()
    batch_rng = make_rng(seed, "batch")
    rollout_rng = make_rng(seed, "rollout")
    bs = min(cfg.train.batch_size, len(data))
    history = []
    for step in range(1, cfg.train.steps + 1):
        idx = batch_rng.choice(len(data), size=bs, replace=False)
        if mode == "sft":
            batch = [(data.comp[i], int(data.answers[i])) for i in idx]
            policy, loss, gnorm = sft_step(policy, batch, cg.learning_rate)
            m = StepMetrics(step, J=-loss, grad_norm=gnorm)
        else:
            batch = [(data.full[i], data.comp[i], int(data.answers[i])) for i in idx]
            policy, m, _ = cgrpo_step(policy, ref, batch, cg, rollout_rng)
            m.step = step
        if eval_data is not None and (step % cfg.train.eval_every == 0 or step == cfg.train.steps):
            ev = evaluate(policy, eval_data)
            m.eval_acc_comp = ev["acc_comp"]
            m.eval_acc_full = ev["acc_full"]
            log.debug("step %d acc_comp=%.3f acc_full=%.3f", step, m.eval_acc_comp, m.eval_acc_full)
        history.append(m)
    return policy, history


def metrics_csv(history) -> str:
    return "\n".join([",".join(METRICS_HEADER)] + [m.csv_row() for m in history]) + "\n"


def policy_to_json(policy: ToyPolicy) -> str:
    return json.dumps({"W": policy.W.tolist(), "b": policy.b.tolist()}, indent=1) + "\n"


def policy_from_json(text: str) -> ToyPolicy:
    obj = json.loads(text)
    return ToyPolicy(np.array(obj["W"], dtype=np.float64), np.array(obj["b"], dtype=np.float64))
