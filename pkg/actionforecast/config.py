"""Run configuration shared by the command-line entry points."""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from .cnn import CnnConfig
from .evaluation import DEFAULT_ALPHAS, DEFAULT_BETAS, DEFAULT_BUCKET_EDGES, OBSERVED_GT
from .exceptions import InputError
from .rnn import RnnConfig

MODEL_RNN = "rnn"
MODEL_CNN = "cnn"
MODEL_GRAMMAR = "grammar"
MODEL_NN = "nn-baseline"
MODEL_KINDS = (MODEL_RNN, MODEL_CNN, MODEL_GRAMMAR, MODEL_NN)
TRAINED_KINDS = (MODEL_RNN, MODEL_CNN)


@dataclass
class RunConfig:
    command: str = ""
    data: Optional[str] = None
    vocab: Optional[str] = None
    splits: Tuple[str, ...] = ()
    decoded: Optional[str] = None
    models: Tuple[str, ...] = (MODEL_GRAMMAR,)
    checkpoints: Tuple[str, ...] = ()
    alphas: Tuple[float, ...] = DEFAULT_ALPHAS
    betas: Tuple[float, ...] = DEFAULT_BETAS
    observed: str = OBSERVED_GT
    seed: int = 0
    out: str = "results"
    metric: str = "moc"
    bucket_edges: Tuple[float, ...] = DEFAULT_BUCKET_EDGES
    workers: int = 1
    rnn: RnnConfig = field(default_factory=RnnConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)

    def __post_init__(self):
        for name in ("splits", "models", "checkpoints", "alphas", "betas", "bucket_edges"):
            setattr(self, name, tuple(getattr(self, name)))
        unknown = [m for m in self.models if m not in MODEL_KINDS]
        if unknown:
            raise InputError(f"Unknown model kind(s) {unknown}; choose from {list(MODEL_KINDS)}")
        if self.workers < 1:
            raise InputError(f"Workers must be >= 1, got {self.workers}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["rnn"] = self.rnn.to_dict()
        data["cnn"] = self.cnn.to_dict()
        for name in ("splits", "models", "checkpoints", "alphas", "betas", "bucket_edges"):
            data[name] = list(data[name])
        data["bucket_edges"] = [e if e != float("inf") else "inf" for e in data["bucket_edges"]]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"Unknown run config keys: {sorted(unknown)}")
        values = dict(data)
        if "rnn" in values:
            values["rnn"] = RnnConfig.from_dict(values["rnn"])
        if "cnn" in values:
            cnn = dict(values["cnn"])
            preset = cnn.pop("preset", None)
            values["cnn"] = CnnConfig.preset(preset, **cnn) if preset else CnnConfig.from_dict(cnn)
        if "bucket_edges" in values:
            values["bucket_edges"] = [float(e) for e in values["bucket_edges"]]
        try:
            return cls(**values)
        except TypeError as e:
            raise InputError(f"Invalid run config: {e}") from None

    def merged(self, **overrides) -> "RunConfig":
        """Copy with every override that is not None (or an empty tuple) applied."""
        changes = {k: v for k, v in overrides.items() if v is not None and v != ()}
        return replace(self, **changes)

    def echo(self) -> str:
        """One-line summary written into the header of every output file."""
        summary = {
            "command": self.command,
            "models": list(self.models),
            "seed": self.seed,
            "alphas": list(self.alphas),
            "betas": list(self.betas),
            "observed": self.observed,
        }
        return json.dumps(summary, sort_keys=True)


def load_run_config(config_json) -> RunConfig:
    """
    Read a RunConfig from a dict or a JSON file path.

    Args:
        config_json: mapping of RunConfig fields, or path to a JSON file
            holding one; ``rnn`` and ``cnn`` hold nested model settings and
            ``cnn`` may name a ``preset``

    Returns:
        RunConfig
    """
    if isinstance(config_json, dict):
        return RunConfig.from_dict(config_json)
    path = Path(config_json)
    try:
        data = json.loads(path.read_text(encoding="utf8"))
    except FileNotFoundError:
        raise InputError(f"Config file not found: {path}") from None
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InputError(f"Failed to read config {path}: {e}") from None
    if not isinstance(data, dict):
        raise InputError(f"Config {path} must hold a JSON object")
    return RunConfig.from_dict(data)
