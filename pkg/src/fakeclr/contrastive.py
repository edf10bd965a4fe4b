"""InfoNCE losses over a momentum queue of fake-sample keys.

Plain InfoNCE scores the positive key against the queued negatives.  The
iteration-weighted variant adds a per-negative logit offset ``m_i`` derived
from the training step that produced the negative, so recent negatives
count more.  Queue capacity can shrink linearly with the training step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import InvalidParameterError, Tensor, concat, softmax

UNIT_TOL = 1e-6


class ContractViolation(ValueError):
    pass


def _require_unit(name: str, v: np.ndarray) -> None:
    if v.size == 0:
        return
    norms = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ContractViolation(f"{name} must be unit-norm (max deviation {np.max(np.abs(norms - 1.0)):.2e})")


def _prepare(q, k_pos, negatives, tau):
    if not tau > 0:
        raise InvalidParameterError(f"temperature must be positive, got {tau}")
    q = np.asarray(q, dtype=np.float64)
    k_pos = np.asarray(k_pos, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64).reshape(-1, q.shape[-1])
    _require_unit("query", q)
    _require_unit("positive key", k_pos)
    _require_unit("negatives", negatives)
    return q, k_pos, negatives


def _nce_from_logits(logits: np.ndarray) -> float:
    mx = np.max(logits)
    return float(mx + np.log(np.sum(np.exp(logits - mx))) - logits[0])


def info_nce(q, k_pos, negatives, tau: float) -> float:
    """``-log(e^{q.k+/tau} / (e^{q.k+/tau} + sum_i e^{q.k_i/tau}))`` for one query."""
    q, k_pos, negatives = _prepare(q, k_pos, negatives, tau)
    logits = np.concatenate([[q @ k_pos], negatives @ q]) / tau
    return _nce_from_logits(logits)


def iteration_info_nce(q, k_pos, negatives, weights, tau: float) -> float:
    """InfoNCE with each negative logit shifted by its forgetting weight before scaling."""
    q, k_pos, negatives = _prepare(q, k_pos, negatives, tau)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape[0] != negatives.shape[0]:
        raise ContractViolation("one weight per negative is required")
    if not np.isfinite(weights).all():
        raise ContractViolation("forgetting weights must be finite")
    logits = np.concatenate([[q @ k_pos], negatives @ q + weights]) / tau
    return _nce_from_logits(logits)


def iteration_info_nce_grads(q, k_pos, negatives, weights, tau: float):
    """Closed-form gradients w.r.t. the query, positive key and each negative.

    With ``E_i = exp((q.k_i + m_i)/tau)`` and ``Y`` the full denominator::

        dq  =  sum_i E_i (k_i - k+) / (Y tau)
        dk+ = -sum_i E_i q / (Y tau)
        dk_i =  E_i q / (Y tau)

    Exponents are shifted by their common maximum; ``E_i / Y`` is unchanged.
    """
    q, k_pos, negatives = _prepare(q, k_pos, negatives, tau)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    pos = (q @ k_pos) / tau
    neg = (negatives @ q + weights) / tau
    shift = max(pos, neg.max()) if neg.size else pos
    u = np.exp(pos - shift)
    e = np.exp(neg - shift)
    y = u + e.sum()
    g_q = (e[:, None] * (negatives - k_pos)).sum(axis=0) / (y * tau)
    g_k = -e.sum() * q / (y * tau)
    g_neg = e[:, None] * q[None, :] / (y * tau)
    return g_q, g_k, g_neg


def iteration_info_nce_tensor(q: Tensor, k_pos: Tensor, negatives: Tensor | np.ndarray,
                              weights: np.ndarray | None, tau: float) -> Tensor:
    """Batched, differentiable form; mean loss over the rows of ``q``.

    ``q`` and ``k_pos`` are (B, p); ``negatives`` is (N, p).  No norm checks:
    callers normalise upstream, and gradient checks need off-sphere probes.
    """
    if q.values.ndim == 1:
        q, k_pos = _row(q), _row(k_pos)
    negatives = negatives if isinstance(negatives, Tensor) else Tensor(negatives)
    # scale the (B, p) query rather than the (B, N + 1) logits
    qs = q * (1.0 / tau)
    pos = (qs * k_pos).sum(axis=1, keepdims=True)
    neg = qs @ _transpose(negatives)
    if weights is not None:
        neg = neg + np.asarray(weights, dtype=np.float64)[None, :] / tau
    logits = concat([pos, neg], axis=1)
    return (logits.logsumexp(axis=1) - pos.sum(axis=1)).mean()


def _row(t: Tensor) -> Tensor:
    shape = t.shape
    return Tensor._make(t.values.reshape(1, -1), (t,), lambda g: (g.reshape(shape),))


def _transpose(t: Tensor) -> Tensor:
    return Tensor._make(t.values.T, (t,), lambda g: (g.T,))


# forgetting factor ----------------------------------------------------------------


@dataclass
class ForgettingConfig:
    tau_m: float = 0.01
    enabled: bool = True
    use_pseudocode_normalization: bool = False

    def __post_init__(self):
        if not self.tau_m > 0:
            raise InvalidParameterError(f"tau_m must be positive, got {self.tau_m}")


def forgetting_factors(labels, tau_m: float, use_pseudocode_normalization: bool = False) -> np.ndarray:
    """Softmax over min-max normalised iteration labels.

    Coinciding labels give a uniform weighting.  With
    ``use_pseudocode_normalization`` the normalised labels are additionally
    scaled to unit Euclidean norm before the softmax.
    """
    t = np.asarray(labels, dtype=np.float64).reshape(-1)
    if t.size == 0:
        raise InvalidParameterError("labels must be non-empty")
    lo, hi = t.min(), t.max()
    t_hat = np.zeros_like(t) if hi == lo else (t - lo) / (hi - lo)
    if use_pseudocode_normalization:
        norm = np.linalg.norm(t_hat)
        if norm > 0:
            t_hat = t_hat / norm
    return softmax(t_hat, tau_m)


# queue --------------------------------------------------------------------------


@dataclass
class QueueSchedule:
    """Linear capacity schedule ``clamp(round(n0 - decay_rate * t), n_min, n0)``."""

    n0: int = 1000
    decay_rate: float = 0.0
    n_min: int = 64

    def __post_init__(self):
        if self.n_min < 1:
            raise InvalidParameterError("n_min must be at least 1")
        if self.n_min > self.n0:
            raise InvalidParameterError(f"n_min ({self.n_min}) exceeds n0 ({self.n0})")
        if self.decay_rate < 0:
            raise InvalidParameterError("decay_rate must be non-negative")


def queue_target_size(t: int, schedule: QueueSchedule) -> int:
    if t < 0:
        raise InvalidParameterError("iteration must be non-negative")
    raw = np.floor(schedule.n0 - schedule.decay_rate * t + 0.5)
    return int(min(max(raw, schedule.n_min), schedule.n0))


class NegativeQueue:
    """FIFO of detached unit-norm keys, each tagged with the iteration that produced it."""

    def __init__(self, dim: int, schedule: QueueSchedule | None = None):
        self.dim = dim
        self.schedule = schedule or QueueSchedule()
        self.embeddings = np.zeros((0, dim))
        self.labels = np.zeros(0, dtype=np.int64)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def newest_label(self) -> int | None:
        return int(self.labels[-1]) if len(self) else None

    def capacity(self, iteration: int) -> int:
        return queue_target_size(iteration, self.schedule)

    def push(self, keys, iteration: int) -> "NegativeQueue":
        keys = np.array(keys, dtype=np.float64).reshape(-1, self.dim)
        _require_unit("queued keys", keys)
        if len(self) and iteration < self.labels[-1]:
            raise ContractViolation(f"iteration {iteration} precedes newest queued label {self.labels[-1]}")
        cap = self.capacity(iteration)
        emb = np.concatenate([self.embeddings, keys])
        lab = np.concatenate([self.labels, np.full(len(keys), iteration, dtype=np.int64)])
        self.embeddings = emb[-cap:] if len(emb) > cap else emb
        self.labels = lab[-cap:] if len(lab) > cap else lab
        return self

    def weights(self, cfg: ForgettingConfig) -> np.ndarray:
        """Forgetting weights for the live entries, or zeros when disabled."""
        if not len(self) or not cfg.enabled:
            return np.zeros(len(self))
        return forgetting_factors(self.labels, cfg.tau_m, cfg.use_pseudocode_normalization)
