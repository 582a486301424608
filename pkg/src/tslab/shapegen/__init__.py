"""Temporal Shape dataset generator."""
from .dataset import (CANONICAL_COUNTS, NUM_CLASSES, DatasetSplit, generate_role, generate_split,
                      read_tsd, split_paths, tsd_digest, write_tsd)
from .mnist import DigitBank, dump_mnist_idx, load_mnist_idx, resolve_bank
from .perlin import perlin_field
from .render import VideoClip, render_clip
from .trajectories import (CLASS_NAMES, DOMAIN_NAMES, ClipSpec, DomainId, TrajectoryClass,
                           parse_domain, sample_spec, trajectory_points)
from .variations import count_variations
