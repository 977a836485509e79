"""partgen: part-level statistical shape models with set-valued latent
diffusion for generating, completing, and editing segmented point clouds."""

__version__ = "0.1.0"
