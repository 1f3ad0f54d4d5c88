"""Python bindings for the toy-codec hierarchical TTS core.

Pipeline functions take a config as a dict (``None`` means the desk
defaults) and return the run manifest as a dict.
"""

import json
import os

from . import _core
from ._core import (
    BpeTokenizer,
    CommandError,
    ToyCodec,
    cer,
    eer,
    flux_loss,
    nucleus_distribution,
    nucleus_sample,
    stuck_rate,
    wer,
)

__version__ = _core.__version__

__all__ = [
    "BpeTokenizer",
    "CommandError",
    "Synthesizer",
    "ToyCodec",
    "cer",
    "default_config",
    "eer",
    "evaluate",
    "finetune",
    "flux_loss",
    "gen_data",
    "gradcheck",
    "nucleus_distribution",
    "nucleus_sample",
    "resolve_config",
    "stuck_rate",
    "synth",
    "train",
    "wer",
]


def _dump(config):
    return "" if config is None else json.dumps(config)


def default_config(preset="desk"):
    return json.loads(_core.default_config(preset))


def resolve_config(config_file=None, seed=None, steps=None, preset=None):
    """Flags (keyword arguments) override the file, which overrides the preset defaults."""
    path = None if config_file is None else os.fspath(config_file)
    return json.loads(_core.resolve_config(path, seed, steps, preset))


def gen_data(out, config=None, force=False):
    return json.loads(_core.gen_data(_dump(config), os.fspath(out), force))


def train(data, out, config=None, force=False):
    return json.loads(_core.train(_dump(config), os.fspath(data), os.fspath(out), force))


def finetune(data, ckpt, out, config=None, force=False):
    return json.loads(_core.finetune(_dump(config), os.fspath(data), os.fspath(ckpt), os.fspath(out), force))


def synth(ckpt, data, out, config=None, split="heldout", limit=0, force=False):
    return json.loads(
        _core.synth(_dump(config), os.fspath(ckpt), os.fspath(data), os.fspath(out), split, limit, force)
    )


def evaluate(data, streams, out, config=None, force=False):
    return json.loads(_core.evaluate(_dump(config), os.fspath(data), os.fspath(streams), os.fspath(out), force))


def gradcheck(config=None, probes=50, eps=1e-5):
    """Max relative errors (forward_loss, orpo_loss) of the full-model gradient check."""
    return _core.gradcheck(_dump(config), probes, eps)


class Synthesizer:
    """Loads a checkpoint once and synthesizes single utterances."""

    def __init__(self, ckpt, sample_config=None):
        self._impl = _core.Synthesizer(os.fspath(ckpt), _dump(sample_config))

    def synthesize(self, text, speaker, style="regular", mode="shallow", ref_transcript=None, seed=0):
        return self._impl.synthesize(text, speaker, style, mode, ref_transcript, seed)

    @property
    def model_config(self):
        return json.loads(self._impl.model_config())
