"""Contrastive learning on perturbed fake samples for data-efficient GAN training, at toy scale."""

__version__ = "0.1.0"
