"""Contrastive representation learning for co-speech gesture skeletons.

Subpackages: pose (data model + file formats), augment (skeletal views),
diffcore (autodiff engine), towers (encoders/heads), objectives (losses),
trainer (optimization), stats (test kernel), evaluate (intrinsic
evaluation), probing (diagnostic probes), synthgen (synthetic corpora),
cli (command line).
"""

from . import (
    augment,
    cli,
    diffcore,
    evaluate,
    objectives,
    pose,
    probing,
    stats,
    synthgen,
    towers,
    trainer,
)

__version__ = "0.1.0"

__all__ = [
    "augment",
    "cli",
    "diffcore",
    "evaluate",
    "objectives",
    "pose",
    "probing",
    "stats",
    "synthgen",
    "towers",
    "trainer",
    "__version__",
]
