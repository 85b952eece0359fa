"""Self-paced mix-up for semi-supervised segmentation."""

import json

from . import _core
from ._core import (
    FormatError,
    PreconditionError,
    ShapeError,
    age_lambda,
    evaluate_sample,
    generate_sample,
    mix,
    overlap,
    patch_count,
    self_paced_state,
    solve_mask,
    solve_weight,
    surface_distances,
)

__all__ = [
    "FormatError",
    "PreconditionError",
    "ShapeError",
    "age_lambda",
    "default_config",
    "evaluate_run",
    "evaluate_sample",
    "generate_sample",
    "mix",
    "overlap",
    "patch_count",
    "self_paced_state",
    "solve_mask",
    "solve_weight",
    "surface_distances",
    "train",
]


def default_config():
    return json.loads(_core.default_config())


def normalize_config(config):
    return json.loads(_core.normalize_config(json.dumps(config)))


def train(config, out_dir):
    """Trains one run into out_dir and returns the test-split summary."""
    return _core.train(json.dumps(config), str(out_dir))


def evaluate_run(run_dir, split="test"):
    return _core.evaluate_run(str(run_dir), split)


def mix_plan(*args, **kwargs):
    """Like mix, with the plan decoded from JSON."""
    image, label, confidence, plan = mix(*args, **kwargs)
    return image, label, confidence, json.loads(plan)
