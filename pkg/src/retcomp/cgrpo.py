"""Compression-aware group relative policy optimization on a linear softmax policy.

The same policy is run on the full input (teacher branch) and on the
compressed input (student branch). The student's correct rollouts earn a
bonus when its mean reward retains enough of the teacher's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .core import TokenSequence, ZeroProb

METRICS_HEADER = (
    "step",
    "a_full",
    "a_comp",
    "eta",
    "r_c_mean",
    "J",
    "kl",
    "grad_norm",
    "eval_acc_comp",
    "eval_acc_full",
)


@dataclass
class CGRPOConfig:
    tau: float = 0.6
    alpha: float = 1.0  # never given a value upstream; 1.0 is a local choice
    beta: float = 0.04
    eps_clip: float = 0.2
    group_size: int = 8
    eta_clamp: float | None = 1.0
    sigma_floor: float = 1e-8
    afull_floor: float = 1e-8
    use_ppo_min: bool = False
    # 1e-6 is the large-model value; a linear toy policy needs a much bigger step
    learning_rate: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.eps_clip <= 0:
            raise ValueError("eps_clip must be > 0")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.eta_clamp is not None and self.eta_clamp < 1.0:
            raise ValueError("eta_clamp must be >= 1")


@dataclass
class Rollout:
    output_id: int
    prob_new: float
    prob_old: float
    reward: float
    correct: bool


@dataclass
class RolloutGroup:
    rollouts: list[Rollout]
    a_full: float = 0.0
    a_comp: float = 0.0
    total_rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None
    group_mean: float = 0.0
    group_std: float = 0.0


@dataclass
class ToyPolicy:
    W: np.ndarray  # (C, d)
    b: np.ndarray  # (C,)

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.W.copy(), self.b.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b])

    @classmethod
    def from_flat(cls, theta, num_classes: int, dim: int) -> "ToyPolicy":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[: num_classes * dim].reshape(num_classes, dim).copy(), theta[num_classes * dim :].copy())

    @classmethod
    def init(cls, num_classes: int, dim: int, rng: np.random.Generator, scale: float = 0.01) -> "ToyPolicy":
        return cls(scale * rng.standard_normal((num_classes, dim)), np.zeros(num_classes))


@dataclass
class StepMetrics:
    step: int
    a_full: float | None = None
    a_comp: float | None = None
    eta: float | None = None
    r_c_mean: float | None = None
    J: float | None = None
    kl: float | None = None
    grad_norm: float | None = None
    eval_acc_comp: float | None = None
    eval_acc_full: float | None = None

    def csv_row(self) -> str:
        cells = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                cells.append("")
            elif isinstance(v, int):
                cells.append(str(v))
            else:
                cells.append(repr(float(v)))
        return ",".join(cells)


# --- reward shaping ----------------------------------------------------------


def retention_ratio(a_comp: float, a_full: float, cfg: CGRPOConfig) -> float:
    if a_full < cfg.afull_floor:
        return 0.0
    eta = a_comp / a_full
    if cfg.eta_clamp is not None:
        eta = min(eta, cfg.eta_clamp)
    return eta


def compression_reward(eta: float, cfg: CGRPOConfig) -> float:
    return cfg.alpha * max(0.0, eta - cfg.tau)


def total_reward(r_i: float, correct: bool, r_c: float) -> float:
    return r_i + (r_c if correct else 0.0)


def normalize_advantages(rewards, cfg: CGRPOConfig | None = None):
    """Group-standardized rewards using the population std."""
    floor = cfg.sigma_floor if cfg is not None else 1e-8
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("a group needs at least two rewards")
    mean = r.mean()
    std = r.std()
    if std < floor:
        return np.zeros_like(r)
    return (r - mean) / std


# --- objective ---------------------------------------------------------------


def _clip(x, cfg):
    return np.clip(x, 1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip)


def cgrpo_objective(group: RolloutGroup, kl: float, cfg: CGRPOConfig) -> float:
    if group.advantages is None:
        raise ValueError("advantages not populated; call normalize_advantages first")
    old = np.array([r.prob_old for r in group.rollouts])
    new = np.array([r.prob_new for r in group.rollouts])
    if np.any(old < 1e-300):
        raise ZeroProb("old-policy probability underflowed to zero")
    ratio = new / old
    adv = np.asarray(group.advantages)
    term = _clip(ratio, cfg) * adv
    if cfg.use_ppo_min:
        term = np.minimum(ratio * adv, term)
    return float(term.mean() - cfg.beta * kl)


def kl_categorical(p, q_ref) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q_ref, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("inputs must be probability distributions")
    if np.any(q <= 0):
        raise ZeroProb("reference distribution must have full support")
    mask = p > 0
    return max(0.0, float(np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def features(seq: TokenSequence) -> np.ndarray:
    """Mean over frames of the per-frame patch mean."""
    return seq.frames.mean(axis=1).mean(axis=0)


def policy_forward(policy: ToyPolicy, seq) -> np.ndarray:
    x = seq if isinstance(seq, np.ndarray) else features(seq)
    if x.shape != (policy.dim,):
        raise ValueError(f"policy expects dim {policy.dim}, input has {x.shape}")
    return softmax(policy.W @ x + policy.b)


def surrogate(policy: ToyPolicy, x, actions, prob_old, advantages, ref_probs, cfg: CGRPOConfig, grad: bool = True):
    """Objective for one group and, optionally, its gradient w.r.t. (W, b).

    Returns (J, kl, gW, gb); the gradients are None when ``grad`` is False.
    """
    actions = np.asarray(actions)
    prob_old = np.asarray(prob_old, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    if np.any(prob_old < 1e-300):
        raise ZeroProb("old-policy probability underflowed to zero")
    p = policy_forward(policy, x)
    ratio = p[actions] / prob_old
    lo, hi = 1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip
    clipped = np.clip(ratio, lo, hi)
    term = clipped * adv
    # d term / d ratio, per rollout
    active = (ratio > lo) & (ratio < hi)
    if cfg.use_ppo_min:
        unclipped = ratio * adv
        use_raw = unclipped < term
        term = np.where(use_raw, unclipped, term)
        dterm = np.where(use_raw, adv, np.where(active, adv, 0.0))
    else:
        dterm = np.where(active, adv, 0.0)
    G = len(actions)
    kl = kl_categorical(p, ref_probs)
    J = float(term.mean() - cfg.beta * kl)
    if not grad:
        return J, kl, None, None

    # d ratio_i / d logits = ratio_i * (onehot(a_i) - p)
    coeff = dterm * ratio / G
    gz = -coeff.sum() * p
    np.add.at(gz, actions, coeff)
    logr = np.log(p / ref_probs)
    gz -= cfg.beta * p * (logr - kl)
    return J, kl, np.outer(gz, x), gz


def sample_group(policy: ToyPolicy, x, answer: int, G: int, rng: np.random.Generator):
    probs = policy_forward(policy, x)
    actions = rng.choice(len(probs), size=G, p=probs)
    rewards = (actions == answer).astype(np.float64)
    return actions, probs, rewards


def cgrpo_step(policy: ToyPolicy, ref_policy: ToyPolicy, batch, cfg: CGRPOConfig, rng: np.random.Generator, lr=None):
    """One on-policy update; ``batch`` holds (full_seq, comp_seq, answer) triples.

    The policy at step start serves as the old policy. Returns
    (updated policy, StepMetrics with step=0, list of student RolloutGroups).
    """
    if not batch:
        raise ValueError("empty batch")
    lr = cfg.learning_rate if lr is None else lr
    G = cfg.group_size
    gW = np.zeros_like(policy.W)
    gb = np.zeros_like(policy.b)
    stats = {"a_full": 0.0, "a_comp": 0.0, "eta": 0.0, "r_c": 0.0, "J": 0.0, "kl": 0.0}
    groups = []
    for full_seq, comp_seq, answer in batch:
        x_full = full_seq if isinstance(full_seq, np.ndarray) else features(full_seq)
        x_comp = comp_seq if isinstance(comp_seq, np.ndarray) else features(comp_seq)
        _, _, r_teacher = sample_group(policy, x_full, answer, G, rng)
        actions, probs, r_student = sample_group(policy, x_comp, answer, G, rng)
        a_full = float(r_teacher.mean())
        a_comp = float(r_student.mean())
        eta = retention_ratio(a_comp, a_full, cfg)
        r_c = compression_reward(eta, cfg)
        correct = r_student > 0
        R = np.array([total_reward(r, c, r_c) for r, c in zip(r_student, correct)])
        adv = normalize_advantages(R, cfg)
        ref_probs = policy_forward(ref_policy, x_comp)
        J, kl, dW, db = surrogate(policy, x_comp, actions, probs[actions], adv, ref_probs, cfg)
        gW += dW
        gb += db
        group = RolloutGroup(
            [Rollout(int(a), float(probs[a]), float(probs[a]), float(r), bool(c)) for a, r, c in zip(actions, r_student, correct)],
            a_full=a_full,
            a_comp=a_comp,
            total_rewards=R,
            advantages=adv,
            group_mean=float(R.mean()),
            group_std=float(R.std()),
        )
        groups.append(group)
        stats["a_full"] += a_full
        stats["a_comp"] += a_comp
        stats["eta"] += eta
        stats["r_c"] += r_c
        stats["J"] += J
        stats["kl"] += kl

    n = len(batch)
    gW /= n
    gb /= n
    new = ToyPolicy(policy.W + lr * gW, policy.b + lr * gb)
    metrics = StepMetrics(
        step=0,
        a_full=stats["a_full"] / n,
        a_comp=stats["a_comp"] / n,
        eta=stats["eta"] / n,
        r_c_mean=stats["r_c"] / n,
        J=stats["J"] / n,
        kl=stats["kl"] / n,
        grad_norm=float(math.sqrt(np.sum(gW * gW) + np.sum(gb * gb))),
    )
    return new, metrics, groups


# --- supervised baseline -----------------------------------------------------


def cross_entropy(policy: ToyPolicy, xs, answers, grad: bool = True):
    """Mean cross-entropy and its gradient w.r.t. (W, b)."""
    loss = 0.0
    gW = np.zeros_like(policy.W)
    gb = np.zeros_like(policy.b)
    for x, y in zip(xs, answers):
        p = policy_forward(policy, x)
        loss -= math.log(p[y])
        if grad:
            gz = p.copy()
            gz[y] -= 1.0
            gW += np.outer(gz, x)
            gb += gz
    n = len(xs)
    return loss / n, gW / n, gb / n


def sft_step(policy: ToyPolicy, batch, lr: float):
    """One gradient-descent step on mean cross-entropy over (comp_seq, answer) pairs.

    Returns (updated policy, loss before the step, gradient norm).
    """
    if not batch:
        raise ValueError("empty batch")
    xs = [s if isinstance(s, np.ndarray) else features(s) for s, _ in batch]
    ys = [y for _, y in batch]
    loss, gW, gb = cross_entropy(policy, xs, ys)
    gnorm = float(math.sqrt(np.sum(gW * gW) + np.sum(gb * gb)))
    return ToyPolicy(policy.W - lr * gW, policy.b - lr * gb), loss, gnorm
