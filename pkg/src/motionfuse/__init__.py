"""Joint camera and human-motion control for a toy video diffusion transformer."""
