"""Point-cloud conditioned diffusion policy for spray-coverage trajectories,
plus the geometric metrics used to score them."""

__version__ = "0.1.0"
