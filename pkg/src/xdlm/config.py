"""Run configuration: a sectioned ``key = value`` INI file.

Dialect: Python ``configparser`` defaults with interpolation disabled.
Sections ``[kernel]``, ``[schedule]``, ``[train]`` and ``[sample]`` are all
optional; ``#`` and ``;`` start comment lines; keys are case-insensitive.
Unknown sections or keys are rejected. Relative paths resolve against the
config file's directory.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from xdlm.denoiser import TrainConfig
from xdlm.errors import ConfigError, DomainError
from xdlm.kernel import make_schedule

SCHEMA = {
    "kernel": {"k": float},
    "schedule": {"kind": str, "eps": float},
    "train": {
        "corpus": str, "steps": int, "batch": int, "lr": float, "seq_len": int,
        "seed": int, "t_sampling": str, "momentum": float, "d_model": int,
        "radius": int, "t_eps": float, "log_every": int,
    },
    "sample": {"mode": str, "steps": int, "n": int, "seed": int, "topk_uniform": str},
}


@dataclass
class SampleConfig:
    mode: str = "ancestral"
    steps: int = 32
    n: int = 8
    seed: int = 0
    topk_uniform: list | None = None

    def __post_init__(self):
        if self.mode not in ("ancestral", "confidence"):
            raise DomainError(f"mode must be 'ancestral' or 'confidence', got {self.mode!r}")
        if self.steps < 1 or self.n < 1:
            raise DomainError("steps and n must be >= 1")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    schedule: dict = field(default_factory=lambda: {"kind": "linear"})
    corpus: Path | None = None
    source: Path | None = None


def _line_numbers(text: str) -> dict:
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        head = re.fullmatch(r"\[([^\]]+)\]", line)
        if head:
            section = head.group(1).strip()
            lines[(section, None)] = no
        elif section and line and line[0] not in "#;":
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            lines[(section, key)] = no
    return lines


def parse_config(text: str, source: Path | None = None) -> RunConfig:
    where = str(source) if source else "<config>"
    lines = _line_numbers(text)
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=where)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    def fail(section, key, msg):
        no = lines.get((section, key), lines.get((section, None), "?"))
        label = f"[{section}] {key}" if key else f"[{section}]"
        raise ConfigError(f"{where}:{no}: {label}: {msg}")

    values: dict = {}
    for section in cp.sections():
        if section not in SCHEMA:
            fail(section, None, "unknown section")
        for key, raw in cp.items(section):
            kind = SCHEMA[section].get(key)
            if kind is None:
                fail(section, key, "unknown key")
            try:
                values[(section, key)] = kind(raw.strip())
            except ValueError:
                fail(section, key, f"cannot parse {raw!r} as {kind.__name__}")

    def get(section, key, default):
        return values.get((section, key), default)

    base = source.parent if source else Path.cwd()
    schedule = {"kind": get("schedule", "kind", "linear")}
    if ("schedule", "eps") in values:
        schedule["eps"] = values[("schedule", "eps")]

    train_kwargs = {key: values[("train", key)] for key in SCHEMA["train"]
                    if key != "corpus" and ("train", key) in values}
    if ("kernel", "k") in values:
        train_kwargs["k"] = values[("kernel", "k")]
    train_kwargs["schedule"] = schedule["kind"]
    train_kwargs["schedule_eps"] = schedule.get("eps")
    try:
        train = TrainConfig(**train_kwargs)
    except DomainError as exc:
        first = str(exc).split()[0]
        key = first if first in train_kwargs else None
        section = "kernel" if key == "k" else "train"
        fail(section, key, str(exc))
    try:
        make_schedule(**schedule)
    except DomainError as exc:
        fail("schedule", "kind" if "kind" in str(exc) else "eps", str(exc))

    topk = get("sample", "topk_uniform", None)
    try:
        sample = SampleConfig(
            mode=get("sample", "mode", "ancestral"),
            steps=get("sample", "steps", 32),
            n=get("sample", "n", 8),
            seed=get("sample", "seed", 0),
            topk_uniform=[int(v) for v in topk.split(",")] if topk else None,
        )
    except (DomainError, ValueError) as exc:
        fail("sample", None, str(exc))

    corpus = get("train", "corpus", None)
    return RunConfig(
        train=train, sample=sample, schedule=schedule,
        corpus=(base / corpus) if corpus else None, source=source,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path)
