"""Conditional GAN translators between frames and flow images."""

from .losses import (LossError, adversarial_generator_loss, composite_loss, cycle_consistency_loss,
                     discriminator_objective, l1_loss, lsgan_discriminator_loss, lsgan_generator_loss,
                     vanilla_cgan_loss, vanilla_discriminator_loss, vanilla_generator_loss)
from .networks import (ArchitectureError, DiscriminatorSpec, GeneratorSpec, PatchDiscriminator,
                       UNetGenerator, build_patchgan_discriminator, build_unet_generator)
from .training import (ConfigError, LossRecord, ModelBundle, TrainConfig, TrainingError,
                       from_network, to_network, train, translate)
