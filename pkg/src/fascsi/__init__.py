"""Low-complexity grant-free channel acquisition for fluid-antenna receivers.

EM-AMP joint activity detection and channel estimation with a
geographical prior-variance clamp, the SOMP-based comparison estimators,
a seeded Monte-Carlo harness and a small CLI.
"""

from .amp import AmpConfig, EstimateResult, run
from .channel import SceneConfig, assemble_scene, build_codebook, synthesize_rx

__all__ = ["AmpConfig", "EstimateResult", "SceneConfig", "assemble_scene", "build_codebook", "run", "synthesize_rx"]
__version__ = "0.1.0"
