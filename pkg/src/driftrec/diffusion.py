"""Forward noising, denoiser, training loss, and guided reverse sampling.

The denoiser predicts the clean target embedding directly (x0
parameterization) and is trained with MSE. Inference starts from pure
noise and walks the reverse chain, combining conditional and unconditional
predictions at each step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn


@dataclass
class NoiseSchedule:
    betas: np.ndarray                    # length tau_S, values in (0,1)
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)  # index 0 = step 1

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("betas must lie in (0,1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")

    @property
    def tau_S(self) -> int:
        return len(self.betas)

    def alpha_bar(self, tau_s) -> np.ndarray:
        """Cumulative alpha at step tau_s (1-based); alpha_bar(0) = 1."""
        tau = np.asarray(tau_s)
        return np.where(tau == 0, 1.0, self.alpha_bars[np.maximum(tau, 1) - 1])

    @classmethod
    def linear(cls, tau_S: int, beta_start: float = 1e-4,
               beta_end: float = 0.02) -> "NoiseSchedule":
        return cls(betas=np.linspace(beta_start, beta_end, tau_S))


def forward_noise(e0: torch.Tensor, tau_s, schedule: NoiseSchedule,
                  generator: torch.Generator):
    """Closed-form forward process: sqrt(ab)*e0 + sqrt(1-ab)*eps.

    e0 may be [d] or [B, d]; tau_s a scalar or a [B] array of steps in
    [1, tau_S]. Returns (noised, eps).
    """
    tau = np.asarray(tau_s)
    if np.any(tau < 1) or np.any(tau > schedule.tau_S):
        raise ValueError(f"step out of range [1, {schedule.tau_S}]")
    ab = torch.as_tensor(schedule.alpha_bar(tau), dtype=e0.dtype)
    if e0.dim() > 1:
        ab = ab.reshape(-1, *([1] * (e0.dim() - 1)))
    eps = torch.empty_like(e0).normal_(generator=generator)
    noised = torch.sqrt(ab) * e0 + torch.sqrt(1.0 - ab) * eps
    return noised, eps


def timestep_embedding(tau: torch.Tensor, dim: int,
                       max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal step embedding, [B] -> [B, dim]."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period)
                      * torch.arange(half, dtype=torch.get_default_dtype())
                      / half)
    args = tau.to(freqs.dtype).unsqueeze(-1) * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class Denoiser(nn.Module):
    """Feed-forward x0 predictor over [noised target, guidance, step]."""

    def __init__(self, d: int = 64):
        super().__init__()
        self.d = d
        self.net = nn.Sequential(
            nn.Linear(3 * d, 4 * d),
            nn.SiLU(),
            nn.Linear(4 * d, 4 * d),
            nn.SiLU(),
            nn.Linear(4 * d, d),
        )

    def forward(self, x_t: torch.Tensor, g: torch.Tensor,
                tau: torch.Tensor) -> torch.Tensor:
        squeeze = x_t.dim() == 1
        if squeeze:
            x_t, g = x_t.unsqueeze(0), g.unsqueeze(0)
            tau = tau.reshape(1)
        t_emb = timestep_embedding(tau, self.d).to(x_t.dtype)
        out = self.net(torch.cat([x_t, g, t_emb], dim=-1))
        return out.squeeze(0) if squeeze else out


def diffusion_loss(denoiser, e0: torch.Tensor, g: torch.Tensor,
                   phi: torch.Tensor, schedule: NoiseSchedule,
                   cond_dropout_p: float, generator: torch.Generator,
                   rng: np.random.Generator,
                   fixed_tau=None, fixed_eps=None, fixed_drop=None,
                   drop_counter: dict | None = None) -> torch.Tensor:
    """MSE between the clean target and the denoiser's prediction, with
    uniformly sampled steps and guidance dropped to the null token with
    probability cond_dropout_p (classifier-free training).

    fixed_tau/fixed_eps/fixed_drop pin the sampled quantities for tests.
    """
    B = e0.shape[0]
    tau = (np.asarray(fixed_tau) if fixed_tau is not None
           else rng.integers(1, schedule.tau_S + 1, size=B))
    drop = (np.asarray(fixed_drop) if fixed_drop is not None
            else rng.random(B) < cond_dropout_p)
    if drop_counter is not None:
        drop_counter["dropped"] = drop_counter.get("dropped", 0) + int(drop.sum())
    ab = torch.as_tensor(schedule.alpha_bar(tau), dtype=e0.dtype).unsqueeze(-1)
    eps = (fixed_eps if fixed_eps is not None
           else torch.empty_like(e0).normal_(generator=generator))
    noised = torch.sqrt(ab) * e0 + torch.sqrt(1.0 - ab) * eps
    drop_t = torch.as_tensor(drop, dtype=torch.bool).unsqueeze(-1)
    g_used = torch.where(drop_t, phi.to(e0.dtype).expand_as(g), g)
    pred = denoiser(noised, g_used, torch.as_tensor(tau))
    return ((e0 - pred) ** 2).sum(dim=-1).mean()


def cfg_combine(f_cond: torch.Tensor, f_uncond: torch.Tensor,
                w: float) -> torch.Tensor:
    """(1+w) * conditional - w * unconditional, element-wise."""
    return (1.0 + w) * f_cond - w * f_uncond


@torch.no_grad()
def sample(denoiser, g: torch.Tensor, phi: torch.Tensor,
           schedule: NoiseSchedule, w: float,
           generator: torch.Generator) -> torch.Tensor:
    """Guided ancestral sampling from pure noise.

    g: [B, d] or [d]. At each step the x0 estimate is the guided
    combination of conditional and unconditional predictions, followed by
    the standard posterior step (no noise at the final step).
    """
    squeeze = g.dim() == 1
    if squeeze:
        g = g.unsqueeze(0)
    B, d = g.shape
    phi_b = phi.to(g.dtype).expand(B, d)
    x = torch.empty(B, d, dtype=g.dtype).normal_(generator=generator)
    for t in range(schedule.tau_S, 0, -1):
        tau = torch.full((B,), t)
        x0_hat = cfg_combine(denoiser(x, g, tau), denoiser(x, phi_b, tau), w)
        ab_t = float(schedule.alpha_bar(t))
        ab_prev = float(schedule.alpha_bar(t - 1))
        beta_t = float(schedule.betas[t - 1])
        alpha_t = float(schedule.alphas[t - 1])
        mean = (math.sqrt(ab_prev) * beta_t / (1.0 - ab_t)) * x0_hat \
            + (math.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)) * x
        if t > 1:
            var = beta_t * (1.0 - ab_prev) / (1.0 - ab_t)
            noise = torch.empty_like(x).normal_(generator=generator)
            x = mean + math.sqrt(var) * noise
        else:
            x = mean
    return x.squeeze(0) if squeeze else x
