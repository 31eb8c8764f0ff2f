"""Similarity-keeping distillation losses.

A similarity matrix for one tap of one mini-batch is ``M[i, j] = mean_c
sim(F[i, c], F[j, c])`` over flattened channel maps.  The similarity-keeping
(SK) loss is the mean squared difference between teacher and student
matrices, summed over the configured tap pairs.  Everything is written with
torch ops so the student side stays differentiable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .models import TAP_NAMES, TapSet

CRITERIA = ("cosine", "dot", "l2", "plv")
SCOPES = ("batch", "sample")
EPS = 1e-8
DEFAULT_LAYER_PAIRS = (("LF2", "LF2"), ("LF3", "LF3"))


class DistillError(ValueError):
    pass


@dataclass(frozen=True)
class DistillConfig:
    layer_pairs: tuple[tuple[str, str], ...] = DEFAULT_LAYER_PAIRS
    beta: float = 450.0
    alpha: float = 0.9
    temperature: float = 4.0
    criterion: str = "cosine"
    centered: bool = True
    use_logits_loss: bool = False
    centering_scope: str = "batch"

    def __post_init__(self):
        pairs = tuple((str(t).upper(), str(s).upper()) for t, s in self.layer_pairs)
        object.__setattr__(self, "layer_pairs", pairs)
        for t, s in pairs:
            if t not in TAP_NAMES or s not in TAP_NAMES:
                raise DistillError(f"unknown tap in layer pair ({t}, {s})")
        if self.beta < 0:
            raise DistillError("beta must be >= 0")
        if not 0 <= self.alpha <= 1:
            raise DistillError("alpha must lie in [0, 1]")
        if not self.temperature > 0:
            raise DistillError("temperature must be > 0")
        if self.criterion not in CRITERIA:
            raise DistillError(f"criterion must be one of {CRITERIA}")
        if self.centering_scope not in SCOPES:
            raise DistillError(f"centering_scope must be one of {SCOPES}")
        if self.beta > 0 and not pairs:
            raise DistillError("layer_pairs must be nonempty when beta > 0")

    @property
    def is_plain_ce(self) -> bool:
        return self.beta == 0 and not self.use_logits_loss


def layer_pairs_for(label: str) -> tuple[tuple[str, str], ...]:
    """``"LF2+3"`` -> ``(("LF2", "LF2"), ("LF3", "LF3"))``; pairs taps by ordinal."""
    label = label.upper().replace("LF", "")
    return tuple((f"LF{k}", f"LF{k}") for k in label.split("+") if k)


# --------------------------------------------------------------------------
# similarity


def zero_center(f: torch.Tensor, scope: str = "batch") -> torch.Tensor:
    """Subtract the per-channel mean.

    ``scope="batch"`` takes one mean per channel over batch and all spatial
    positions; ``scope="sample"`` one mean per (sample, channel).
    """
    spatial = tuple(range(2, f.ndim))
    if scope == "batch":
        dims = (0, *spatial)
    elif scope == "sample":
        dims = spatial
    else:
        raise DistillError(f"centering scope must be one of {SCOPES}")
    if not dims:
        return f.clone()
    return f - f.mean(dim=dims, keepdim=True)


def analytic_signal(x: torch.Tensor) -> torch.Tensor:
    """FFT-based analytic signal along the last axis (same construction as scipy.signal.hilbert)."""
    n = x.shape[-1]
    h = torch.zeros(n, dtype=x.dtype, device=x.device)
    if n % 2 == 0:
        h[0] = h[n // 2] = 1
        h[1:n // 2] = 2
    else:
        h[0] = 1
        h[1:(n + 1) // 2] = 2
    return torch.fft.ifft(torch.fft.fft(x, dim=-1) * h, dim=-1)


def _unit_phasors(x: torch.Tensor) -> torch.Tensor:
    z = analytic_signal(x)
    return z / torch.clamp(z.abs(), min=EPS)


def _channel_major(f: torch.Tensor) -> torch.Tensor:
    # (N, C, ...) -> (C, N, L)
    return f.reshape(f.shape[0], f.shape[1], -1).transpose(0, 1)


def similarity_values(f: torch.Tensor, criterion: str = "cosine", centered: bool = True,
                      centering_scope: str = "batch") -> torch.Tensor:
    """N x N similarity matrix of a (N, C, ...) activation tensor."""
    if f.ndim < 2:
        raise DistillError("features need at least (batch, channel) dimensions")
    if f.ndim == 2:
        f = f.unsqueeze(-1)
    if centered:
        f = zero_center(f, centering_scope)

    if criterion == "plv":
        # phase is taken along the last (time) axis of every row, then the
        # phase-difference phasors are averaged over all positions of the map
        u = _channel_major(_unit_phasors(f))
        g = u @ u.conj().transpose(1, 2)
        return (g.abs() / u.shape[-1]).mean(0)

    x = _channel_major(f)
    gram = x @ x.transpose(1, 2)
    if criterion == "dot":
        sim = gram
    elif criterion == "cosine":
        norm = torch.linalg.vector_norm(x, dim=-1)
        sim = gram / torch.clamp(norm[:, :, None] * norm[:, None, :], min=EPS)
        # self-similarity is exactly 1 (or the eps-guarded value for a dead map)
        sq = norm * norm
        diag = torch.where(sq >= EPS, torch.ones_like(sq), sq / EPS)
        eye = torch.eye(sim.shape[-1], dtype=torch.bool, device=sim.device)
        sim = torch.where(eye, torch.diag_embed(diag), sim)
    elif criterion == "l2":
        sq_norm = (x * x).sum(-1)
        sq = torch.clamp(sq_norm[:, :, None] + sq_norm[:, None, :] - 2 * gram, min=0)
        off_diag = ~torch.eye(sq.shape[-1], dtype=torch.bool, device=sq.device)
        mask = off_diag & (sq > 0)
        # sqrt only where it is differentiable
        dist = torch.where(mask, torch.sqrt(torch.where(mask, sq, torch.ones_like(sq))),
                           torch.zeros_like(sq))
        sim = -dist
    else:
        raise DistillError(f"criterion must be one of {CRITERIA}")
    return sim.mean(0)


@dataclass
class SimilarityMatrix:
    values: torch.Tensor
    criterion: str
    centered: bool
    tap_name: str = ""

    def numpy(self) -> np.ndarray:
        return self.values.detach().cpu().numpy()


def similarity_matrix(f: torch.Tensor, criterion: str = "cosine", centered: bool = True,
                      tap_name: str = "", centering_scope: str = "batch") -> SimilarityMatrix:
    f = torch.as_tensor(f)
    return SimilarityMatrix(similarity_values(f, criterion, centered, centering_scope),
                            criterion, centered, tap_name)


def plv_similarity(a, b) -> float:
    """Phase locking value between two equally long 1-D series."""
    a = torch.as_tensor(np.asarray(a, dtype=np.float64))
    b = torch.as_tensor(np.asarray(b, dtype=np.float64))
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("plv_similarity takes 1-D series")
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 4:
        raise ValueError("series must have at least 4 samples")
    ua, ub = _unit_phasors(a), _unit_phasors(b)
    return float((ua * ub.conj()).mean().abs())


# --------------------------------------------------------------------------
# losses


def sk_loss(teacher_taps: TapSet, student_taps: TapSet, cfg: DistillConfig) -> torch.Tensor:
    """Sum over tap pairs of mse(M_teacher, M_student); mean over all N*N entries."""
    if teacher_taps.batch_size != student_taps.batch_size:
        raise DistillError(
            f"batch size mismatch: teacher {teacher_taps.batch_size}, student {student_taps.batch_size}"
        )
    total = student_taps.logits.new_zeros(())
    for t_name, s_name in cfg.layer_pairs:
        m_t = similarity_values(teacher_taps[t_name].detach(), cfg.criterion, cfg.centered,
                                cfg.centering_scope)
        m_s = similarity_values(student_taps[s_name], cfg.criterion, cfg.centered,
                                cfg.centering_scope)
        total = total + F.mse_loss(m_s, m_t.to(m_s.dtype))
    return total


def _ce_kl(z_teacher, z_student, y, temperature):
    ce = F.cross_entropy(z_student, y)
    if z_teacher is None:
        return ce, z_student.new_zeros(())
    kl = F.kl_div(
        F.log_softmax(z_student / temperature, dim=1),
        F.log_softmax(z_teacher.detach() / temperature, dim=1),
        reduction="batchmean",
        log_target=True,
    )
    return ce, kl


def hkd_loss(z_teacher: torch.Tensor, z_student: torch.Tensor, y: torch.Tensor,
             alpha: float, temperature: float) -> torch.Tensor:
    """(1 - alpha) * CE(y, softmax(z_S)) + alpha * T^2 * KL(softmax(z_T/T) || softmax(z_S/T))."""
    if z_teacher.shape != z_student.shape:
        raise DistillError(f"logit shapes differ: {tuple(z_teacher.shape)} vs {tuple(z_student.shape)}")
    if not temperature > 0:
        raise DistillError("temperature must be > 0")
    ce, kl = _ce_kl(z_teacher, z_student, y, temperature)
    return (1 - alpha) * ce + alpha * temperature ** 2 * kl


@dataclass
class LossBreakdown:
    total: torch.Tensor
    ce: torch.Tensor
    kl: torch.Tensor
    sk: torch.Tensor
    w_ce: float
    w_kl: float
    beta: float
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        return {
            "total": self.total.item(),
            "ce": self.ce.item(),
            "kl": self.kl.item(),
            "sk": self.sk.item(),
            "w_ce": self.w_ce,
            "w_kl": self.w_kl,
            "beta": self.beta,
            **self.extras,
        }


def loss_weights(cfg: DistillConfig | None) -> tuple[float, float, float]:
    """(ce weight, KL weight, SK weight) of the objective selected by ``cfg``."""
    if cfg is None:
        return 1.0, 0.0, 0.0
    if cfg.use_logits_loss:
        return 1.0 - cfg.alpha, cfg.alpha * cfg.temperature ** 2, cfg.beta
    return 1.0, 0.0, cfg.beta


def combine(ce, kl, sk, cfg: DistillConfig | None):
    w_ce, w_kl, beta = loss_weights(cfg)
    if cfg is None or not cfg.use_logits_loss:
        return w_ce * ce + beta * sk
    return w_ce * ce + w_kl * kl + beta * sk


def total_loss(batch_outputs, cfg: DistillConfig | None) -> LossBreakdown:
    """Objective for one mini-batch.

    ``batch_outputs`` is ``(teacher_taps, student_taps, y)``; ``teacher_taps``
    may be ``None`` when ``cfg`` uses neither SK nor the logits term.  With
    ``cfg.use_logits_loss`` the objective is ``(1-a)CE + a T^2 KL + b SK``,
    otherwise ``CE + b SK``.
    """
    teacher_taps, student_taps, y = batch_outputs
    needs_teacher = cfg is not None and (cfg.beta > 0 or cfg.use_logits_loss)
    if teacher_taps is None and needs_teacher:
        raise DistillError("teacher taps are required for this objective")
    use_kl = cfg is not None and cfg.use_logits_loss
    ce, kl = _ce_kl(teacher_taps.logits if use_kl else None, student_taps.logits, y,
                    cfg.temperature if use_kl else 1.0)
    if teacher_taps is not None and cfg is not None and cfg.layer_pairs and cfg.beta > 0:
        sk = sk_loss(teacher_taps, student_taps, cfg)
    elif teacher_taps is not None and cfg is not None and cfg.layer_pairs:
        # beta == 0: still report the value, keep it out of the graph
        with torch.no_grad():
            sk = sk_loss(teacher_taps, student_taps, cfg)
    else:
        sk = student_taps.logits.new_zeros(())
    w_ce, w_kl, beta = loss_weights(cfg)
    return LossBreakdown(combine(ce, kl, sk, cfg), ce, kl, sk, w_ce, w_kl, beta)
