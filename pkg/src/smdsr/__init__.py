"""Structure-modulated diffusion super-resolution at desk scale."""
