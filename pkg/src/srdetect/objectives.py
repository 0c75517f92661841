"""Composite training objective: weighted cross-entropy, cosine triplet and variance terms.

All functions take torch tensors and stay differentiable, so the same code
serves training (float32) and gradient checks (float64).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

CE, TRIPLET, VARIANCE = "CE", "T", "V"
ALL_TERMS = (CE, TRIPLET, VARIANCE)

_zero_norm_events = 0


def zero_norm_events() -> int:
    """How many zero-norm vectors :func:`cosine_sim` has seen in this process."""
    return _zero_norm_events


def reset_zero_norm_events() -> None:
    global _zero_norm_events
    _zero_norm_events = 0


@dataclass
class LossConfig:
    margin: float = 0.2
    gamma: float = 1.0
    eps: float = 1e-4
    ce_weights: tuple[float, float, float] = (0.25, 0.25, 0.5)
    enabled_terms: tuple[str, ...] = ALL_TERMS
    # evaluate the triplet expression as printed: unhinged, mean(sim(a,p) - sim(a,n) + m)
    paper_literal_triplet: bool = False

    def __post_init__(self):
        self.ce_weights = tuple(self.ce_weights)
        self.enabled_terms = tuple(self.enabled_terms)
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.gamma <= 0 or self.eps <= 0:
            raise ValueError("gamma and eps must be > 0")
        unknown = set(self.enabled_terms) - set(ALL_TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")


@dataclass
class LossBreakdown:
    l_ce: torch.Tensor
    l_t: torch.Tensor
    l_v: torch.Tensor
    total: torch.Tensor
    enabled: tuple[str, ...] = field(default=ALL_TERMS)

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l_ce", "l_t", "l_v", "total")}


def cosine_sim(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last axis.

    A pair where either vector has zero norm scores 0 instead of NaN, and is
    counted in :func:`zero_norm_events`.
    """
    global _zero_norm_events
    uu = (u * u).sum(-1)
    vv = (v * v).sum(-1)
    ok = (uu > 0) & (vv > 0)
    n_bad = int((~ok).sum())
    if n_bad:
        _zero_norm_events += n_bad
    # guard the sqrt so its gradient stays finite at zero
    denom = torch.sqrt(torch.where(ok, uu, torch.ones_like(uu)) * torch.where(ok, vv, torch.ones_like(vv)))
    return torch.where(ok, (u * v).sum(-1) / denom, torch.zeros_like(denom))


def _check_triplet(h_a: torch.Tensor, h_p: torch.Tensor, h_n: torch.Tensor) -> None:
    if not (h_a.shape == h_p.shape == h_n.shape) or h_a.ndim != 2:
        raise ValueError(f"triplet batches must share an (N, d) shape, got {h_a.shape}, {h_p.shape}, {h_n.shape}")


def triplet_loss(
    h_a: torch.Tensor, h_p: torch.Tensor, h_n: torch.Tensor, margin: float = 0.2, paper_literal: bool = False
) -> torch.Tensor:
    """Batch mean of ``max(0, sim(a, n) - sim(a, p) + margin)``.

    Pulls anchors toward the positive (a different real clip) and pushes them
    away from the negative (the same content, upscaled).
    """
    _check_triplet(h_a, h_p, h_n)
    s_ap = cosine_sim(h_a, h_p)
    s_an = cosine_sim(h_a, h_n)
    if paper_literal:
        return (s_ap - s_an + margin).mean()
    return F.relu(s_an - s_ap + margin).mean()


def batch_variance_penalty(h: torch.Tensor, gamma: float = 1.0, eps: float = 1e-4) -> torch.Tensor:
    """Per-dimension hinge on the regularized (population) std, averaged over dimensions."""
    if h.ndim != 2:
        raise ValueError("expected an (N, d) batch")
    if h.shape[0] < 2:
        raise ValueError("variance penalty needs at least 2 rows")
    std = torch.sqrt(h.var(dim=0, unbiased=False) + eps)
    return F.relu(gamma - std).mean()


def variance_loss(h_a: torch.Tensor, h_p: torch.Tensor, h_n: torch.Tensor, gamma: float = 1.0, eps: float = 1e-4) -> torch.Tensor:
    _check_triplet(h_a, h_p, h_n)
    return sum(batch_variance_penalty(h, gamma, eps) for h in (h_a, h_n, h_p))


def bce_with_logits(logits: torch.Tensor, target: float) -> torch.Tensor:
    """Mean binary cross-entropy in the log-sigmoid form (finite for finite logits)."""
    logits = logits.reshape(-1)
    return (F.softplus(logits) - target * logits).mean()


def cross_entropy_loss(
    c_a: torch.Tensor, c_p: torch.Tensor, c_n: torch.Tensor, weights: tuple[float, float, float] = (0.25, 0.25, 0.5)
) -> torch.Tensor:
    """Class-balanced CE: anchors and positives are real (0), negatives are fake (1)."""
    w_a, w_p, w_n = weights
    return w_a * bce_with_logits(c_a, 0.0) + w_p * bce_with_logits(c_p, 0.0) + w_n * bce_with_logits(c_n, 1.0)


def total_loss(
    h_a: torch.Tensor,
    h_p: torch.Tensor,
    h_n: torch.Tensor,
    c_a: torch.Tensor,
    c_p: torch.Tensor,
    c_n: torch.Tensor,
    cfg: LossConfig | None = None,
) -> LossBreakdown:
    """Evaluate all three terms; ``total`` is the plain sum of the enabled ones."""
    cfg = cfg or LossConfig()
    if not cfg.enabled_terms:
        raise ValueError("at least one loss term must be enabled")
    l_ce = cross_entropy_loss(c_a, c_p, c_n, cfg.ce_weights)
    l_t = triplet_loss(h_a, h_p, h_n, cfg.margin, cfg.paper_literal_triplet)
    l_v = variance_loss(h_a, h_p, h_n, cfg.gamma, cfg.eps)
    terms = {CE: l_ce, TRIPLET: l_t, VARIANCE: l_v}
    total = sum(terms[t] for t in ALL_TERMS if t in cfg.enabled_terms)
    return LossBreakdown(l_ce, l_t, l_v, total, cfg.enabled_terms)
