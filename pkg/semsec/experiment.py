"""
Experiment configuration: an INI file with the sections [channel], [code],
[plan], [agent], [seeds], [data] and [output].

``default_config('desk')`` is the CI-scale setup, ``default_config('full')``
carries the full-scale CIFAR-10 settings. ``load_config()`` reports every problem as
``path:line: section.key: message``.
"""
from __future__ import annotations
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Tuple, Union
import configparser
import pathlib
import re
import logging

import numpy as np

import semsec
from semsec.channel import REDRAW_MODES, ChannelConfig
from semsec.codec import (
    CodecArchitecture, TextCorpus, code_shape, load_images, synthetic_images,
)
from semsec.ddpg import AgentConfig
from semsec.errors import ConfigError
from semsec.system import STREAM_OFFSETS
from semsec.trainer import StagePlan

logger = logging.getLogger(__name__)

PRESETS = ("desk", "full")
SECTIONS = ("channel", "code", "plan", "agent", "seeds", "data", "output")


@dataclass
class DataConfig:
    """
    source is "synthetic" (smoothed random fields) or a path accepted by
    ``codec.load_images()``. An empty corpus means the bundled one.
    """
    source: str = "synthetic"
    height: int = 32
    width: int = 32
    channels: int = 3
    n_train: int = 2000
    n_test: int = 500
    n_eval: int = 256
    corpus: str = ""

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return (self.height, self.width, self.channels)


@dataclass
class SeedConfig:
    master: int = 0
    eval: int = 1000
    offsets: Dict[str, int] = field(default_factory=lambda: dict(STREAM_OFFSETS))


@dataclass
class ExperimentConfig:
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    cu: int = 1
    arch: CodecArchitecture = field(default_factory=CodecArchitecture)
    plan: StagePlan = field(default_factory=StagePlan)
    agent: AgentConfig = field(default_factory=AgentConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    data: DataConfig = field(default_factory=DataConfig)
    out_dir: str = "semsec-out"

    def validate(self) -> ExperimentConfig:
        self.channel.validate()
        code_shape(self.cu, *self.data.image_shape, self.channel.n_m)
        self.plan.validate()
        self.agent.validate()
        return self

    def corpus(self) -> TextCorpus:
        corpus = TextCorpus(self.data.corpus or None, vocab_size=self.arch.vocab)
        corpus.load()
        return corpus


def default_config(preset: str = "desk") -> ExperimentConfig:
    """
    The desk preset: T=60, K=5, agent minibatch 16, stage epochs
    10/10/10/20 and 2000/500/256 train/test/eval images. The full preset:
    T=500, K=15, minibatch 128, 100/100/100/200 epochs.
    """
    if preset not in PRESETS:
        raise ConfigError(f"Unknown preset {preset!r}; choose one of {PRESETS}.")
    cfg = ExperimentConfig()
    if preset == "desk":
        cfg.plan = replace(cfg.plan, epochs1=10, epochs2=10, epochs3=10, epochs5=20, K=5, T=60)
        cfg.agent = replace(cfg.agent, batch_size=16)
    else:
        cfg.agent = replace(cfg.agent, batch_size=128)
        cfg.data = replace(cfg.data, source="cifar-10-batches-bin", n_train=49744, n_test=10000, n_eval=256)
    return cfg


# (section, key, predicate, message) checked with the key's line number.
_RULES = [
    ("channel", "n_m", lambda v: v >= 1, "must be >= 1"),
    ("channel", "n_n", lambda v: v >= 1, "must be >= 1"),
    ("channel", "power", lambda v: v > 0, "must be > 0"),
    ("channel", "redraw", lambda v: v in REDRAW_MODES, f"must be one of {REDRAW_MODES}"),
    ("code", "cu", lambda v: v >= 1, "must be >= 1"),
    ("code", "hidden", lambda v: v >= 1, "must be >= 1"),
    ("code", "jam_hidden", lambda v: v >= 1, "must be >= 1"),
    ("code", "text_tokens", lambda v: v >= 1, "must be >= 1"),
    ("code", "embed_dim", lambda v: v >= 1, "must be >= 1"),
    ("code", "vocab", lambda v: v >= 1, "must be >= 1"),
    ("plan", "lambda_r", lambda v: v >= 0, "must be >= 0"),
    ("agent", "gamma", lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    ("agent", "tau", lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    ("agent", "actor_lr", lambda v: v > 0, "must be > 0"),
    ("agent", "critic_lr", lambda v: v > 0, "must be > 0"),
    ("agent", "weight_decay", lambda v: v >= 0, "must be >= 0"),
    ("agent", "batch_size", lambda v: v >= 1, "must be >= 1"),
    ("agent", "updates_per_step", lambda v: v >= 1, "must be >= 1"),
    ("agent", "noise_decay_fraction", lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
    ("data", "n_train", lambda v: v >= 1, "must be >= 1"),
    ("data", "n_test", lambda v: v >= 1, "must be >= 1"),
    ("data", "n_eval", lambda v: v >= 1, "must be >= 1"),
]
_RULES += [("plan", k, lambda v: v >= 1, "must be >= 1")
           for k in ("epochs1", "epochs2", "epochs3", "epochs5", "k", "t", "batch_size")]
_RULES += [("plan", k, lambda v: v > 0, "must be > 0") for k in ("lr1", "lr2", "lr3", "lr4", "lr5")]


def _section_objects(cfg: ExperimentConfig) -> Dict[str, object]:
    return {"channel": cfg.channel, "plan": cfg.plan, "agent": cfg.agent, "data": cfg.data}


def config_to_parser(cfg: ExperimentConfig) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    objects = _section_objects(cfg)
    for section in SECTIONS:
        if section in objects:
            obj = objects[section]
            parser[section] = {f.name.lower(): str(getattr(obj, f.name)) for f in fields(obj)}
        elif section == "code":
            parser[section] = {"cu": str(cfg.cu), **{f.name: str(getattr(cfg.arch, f.name)) for f in fields(cfg.arch)}}
        elif section == "seeds":
            parser[section] = {"master": str(cfg.seeds.master), "eval": str(cfg.seeds.eval),
                               **{f"offset_{k}": str(v) for k, v in cfg.seeds.offsets.items()}}
        else:
            parser[section] = {"dir": cfg.out_dir}
    return parser


def write_config(cfg: ExperimentConfig, path: Union[str, pathlib.Path]) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        config_to_parser(cfg).write(f)
    logger.info(f"Wrote the configuration to {path}.")
    return path


def load_config(path: Union[str, pathlib.Path]) -> ExperimentConfig:
    """
    Read an experiment configuration. Missing keys keep the desk defaults;
    unknown sections or keys, unparsable values and out-of-range values
    raise ConfigError with a ``path:line: section.key: message`` diagnostic.
    """
    path = pathlib.Path(path)
    if not path.exists():
        raise ConfigError(f"{path}:0: the configuration file does not exist.")
    text = path.read_text()
    lines = _line_index(text)

    def error(section, key, message):
        line = lines.get((section, key), lines.get((section, None), 0))
        where = f"{section}.{key}" if key else section
        return ConfigError(f"{path}:{line}: {where}: {message}")

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as err:
        raise ConfigError(f"{path}:{getattr(err, 'lineno', 0)}: {err.message}") from err

    cfg = default_config("desk")
    defaults = config_to_parser(cfg)
    for section in parser.sections():
        if section not in SECTIONS:
            raise error(section, None, f"unknown section; expected one of {SECTIONS}")
        for key, raw in parser[section].items():
            if key not in defaults[section]:
                raise error(section, key, "unknown key")

    values = {}
    for section in SECTIONS:
        for key, default in defaults[section].items():
            raw = parser.get(section, key, fallback=default)
            try:
                values[(section, key)] = _coerce(raw, default)
            except ValueError:
                raise error(section, key, f"can't parse {raw!r} as {_kind(default)}") from None

    for section, key, ok, message in _RULES:
        if not ok(values[(section, key)]):
            raise error(section, key, f"{message}, got {values[(section, key)]}")
    if values[("channel", "n_m")] != values[("channel", "n_n")]:
        raise error("channel", "n_n", "the antenna counts n_m and n_n must match")
    if values[("agent", "buffer_size")] < values[("agent", "batch_size")]:
        raise error("agent", "buffer_size", "the replay buffer must hold at least one minibatch")
    offsets = {k[len("offset_"):]: v for (s, k), v in values.items() if s == "seeds" and k.startswith("offset_")}
    if len(set(offsets.values())) != len(offsets):
        raise error("seeds", None, "stream offsets must be distinct")

    for section, obj in _section_objects(cfg).items():
        kwargs = {f.name: values[(section, f.name.lower())] for f in fields(obj)}
        if section == "channel":
            cfg.channel = ChannelConfig(**kwargs)
        elif section == "plan":
            cfg.plan = StagePlan(**kwargs)
        elif section == "agent":
            cfg.agent = AgentConfig(**kwargs)
        else:
            cfg.data = DataConfig(**kwargs)
    cfg.cu = values[("code", "cu")]
    cfg.arch = CodecArchitecture(**{f.name: values[("code", f.name)] for f in fields(CodecArchitecture)})
    cfg.seeds = SeedConfig(master=values[("seeds", "master")], eval=values[("seeds", "eval")], offsets=offsets)
    cfg.out_dir = values[("output", "dir")]

    try:
        code_shape(cfg.cu, *cfg.data.image_shape, cfg.channel.n_m)
    except ConfigError as err:
        raise error("code", "cu", str(err)) from None
    return cfg.validate()


def _coerce(raw: str, default: str):
    kind = _kind(default)
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def _kind(default: str) -> str:
    if re.fullmatch(r"-?\d+", default):
        return "int"
    try:
        float(default)
        return "float"
    except ValueError:
        return "str"


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    """1-based line numbers of every section header and key."""
    index = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = re.fullmatch(r"\[(.+)\]", stripped)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = n
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", stripped)
        if m and section is not None:
            index[(section, m.group(1).strip().lower())] = n
    return index


def load_dataset(cfg: ExperimentConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (train, test, eval) image sets of the configured sizes. A file-backed
    source is shuffled with rng before it is split.
    """
    d = cfg.data
    n = d.n_train + d.n_test + d.n_eval
    if d.source == "synthetic":
        images = synthetic_images(n, d.height, d.width, d.channels, rng)
    else:
        source = pathlib.Path(d.source).expanduser()
        if not source.is_absolute() and not source.exists():
            source = semsec.config["data_dir"] / source
        images = load_images(source)
        if images.shape[1:] != d.image_shape:
            raise ConfigError(f"{source} holds {images.shape[1:]} images but [data] asks for {d.image_shape}.")
        if images.shape[0] < n:
            raise ConfigError(f"{source} holds {images.shape[0]} images, fewer than the {n} requested.")
        images = images[rng.permutation(images.shape[0])[:n]]
    return images[:d.n_train], images[d.n_train:d.n_train + d.n_test], images[d.n_train + d.n_test:]


def write_package_config(data_dir: Union[str, pathlib.Path]) -> pathlib.Path:
    """
    Write the package-level config.ini holding the data directory, creating
    the directory if needed.
    """
    data_dir = pathlib.Path(data_dir).expanduser()
    if not data_dir.exists():
        data_dir.mkdir(parents=True)
        logger.info(f"Made the semsec data directory at {data_dir}.")
    else:
        logger.info(f"The semsec data directory at {data_dir} already exists.")
    settings = configparser.ConfigParser()
    settings["Paths"] = {"data_dir": str(data_dir)}
    path = pathlib.Path(semsec.__file__).parent.resolve() / "config.ini"
    with open(path, "w") as f:
        settings.write(f)
    semsec.config["data_dir"] = data_dir
    return path
