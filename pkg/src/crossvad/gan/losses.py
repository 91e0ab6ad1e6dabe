"""Adversarial, L1 and cycle-consistency objectives.

All reductions are means, so loss weights do not depend on image size or on
the patch-map size of the discriminator.
"""

from __future__ import annotations

import torch

EPS = 1e-7


class LossError(ValueError):
    pass


def _t(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def _check_probabilities(x: torch.Tensor, name: str) -> None:
    lo, hi = float(x.detach().min()), float(x.detach().max())
    if lo < 0.0 or hi > 1.0:
        raise LossError(f"{name} scores must lie in [0, 1], got range [{lo}, {hi}]")


def vanilla_cgan_loss(d_real, d_fake, eps: float = EPS) -> torch.Tensor:
    """``E[log D(b|a)] + E[log(1 - D(G(a)|a))]`` with scores clamped to ``[eps, 1-eps]``.

    This is the quantity the discriminator maximises; its optimum is 0.
    """
    d_real, d_fake = _t(d_real), _t(d_fake)
    _check_probabilities(d_real, "d_real")
    _check_probabilities(d_fake, "d_fake")
    d_real = d_real.clamp(eps, 1.0 - eps)
    d_fake = d_fake.clamp(eps, 1.0 - eps)
    return torch.log(d_real).mean() + torch.log1p(-d_fake).mean()


def vanilla_generator_loss(d_fake, eps: float = EPS) -> torch.Tensor:
    """Non-saturating generator term ``-E[log D(G(a)|a)]``."""
    d_fake = _t(d_fake)
    _check_probabilities(d_fake, "d_fake")
    return -torch.log(d_fake.clamp(eps, 1.0 - eps)).mean()


def vanilla_discriminator_loss(d_real, d_fake, eps: float = EPS) -> torch.Tensor:
    return -vanilla_cgan_loss(d_real, d_fake, eps)


def lsgan_generator_loss(d_fake) -> torch.Tensor:
    d_fake = _t(d_fake)
    return 0.5 * ((d_fake - 1.0) ** 2).mean()


def lsgan_discriminator_loss(d_real, d_fake) -> torch.Tensor:
    d_real, d_fake = _t(d_real), _t(d_fake)
    return 0.5 * ((d_real - 1.0) ** 2).mean() + 0.5 * (d_fake ** 2).mean()


def l1_loss(generated, target) -> torch.Tensor:
    generated, target = _t(generated), _t(target)
    if generated.shape != target.shape:
        raise LossError(f"shape mismatch: {tuple(generated.shape)} vs {tuple(target.shape)}")
    return (generated - target).abs().mean()


def cycle_consistency_loss(original, reconstructed) -> torch.Tensor:
    """L1 between an input and its round trip through both generators."""
    return l1_loss(reconstructed, original)


def adversarial_generator_loss(variant: str, d_fake) -> torch.Tensor:
    if variant == "vanilla":
        return vanilla_generator_loss(d_fake)
    if variant == "lsgan":
        return lsgan_generator_loss(d_fake)
    raise LossError(f"unknown loss variant {variant!r}")


def discriminator_objective(variant: str, d_real, d_fake) -> torch.Tensor:
    """What the discriminator minimises; for LSGAN it is the bare D term."""
    if variant == "vanilla":
        return vanilla_discriminator_loss(d_real, d_fake)
    if variant == "lsgan":
        return lsgan_discriminator_loss(d_real, d_fake)
    raise LossError(f"unknown loss variant {variant!r}")


def composite_loss(variant: str, adversarial_term, l1_term, cycle_term,
                   lambda_l1: float, lambda_cyc: float):
    """Generator objective ``adv + lambda_l1 * L1 + lambda_cyc * cyc``."""
    if variant not in ("vanilla", "lsgan"):
        raise LossError(f"unknown loss variant {variant!r}")
    if lambda_l1 < 0 or lambda_cyc < 0:
        raise LossError("loss weights must be non-negative")
    total = adversarial_term + lambda_l1 * l1_term
    if lambda_cyc:
        total = total + lambda_cyc * cycle_term
    return total
