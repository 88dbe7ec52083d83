"""INI run configuration with defaults and a resolved (fully explicit) echo."""

from __future__ import annotations

import configparser
from pathlib import Path

import numpy as np

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "0", "out": "out"},
    "data": {
        "path": "",
        "label": "y",
        "group": "s",
        "weight": "",
        "score": "",
        "bins": "",
        "drop": "",
        "target": "0",
        "split": "none",
        "holdout": "",
        "population": "",
    },
    "model": {
        "coefficients": "",
        "score_column": "",
        "train_path": "",
        "fit_intercept": "true",
        "threshold": "",
    },
    "metric": {"kind": "FPR"},
    "aux": {"l2_grid": "0.01, 0.1, 1, 10", "folds": "10", "max_iters": "5000", "tolerance": "1e-8"},
    "descent": {
        "step_eps": "0.05",
        "max_iters": "100",
        "patience": "2",
        "resample_count": "",
        "weight_floor": "1e-8",
        "clamp": "1e-6",
        "gap_threshold": "0.01",
        "hard_fail": "false",
        "timing": "false",
    },
    "transport": {
        "cost": "squared-euclidean",
        "immutable": "",
        "penalty": "forbid",
        "pairs": "",
        "max_vars": "10000",
        "counterfactual": "",
    },
    "eval": {"draws": "25", "mode": "randomized", "metrics": ""},
}

PATH_KEYS = (
    ("run", "out"),
    ("data", "path"),
    ("data", "holdout"),
    ("data", "population"),
    ("model", "coefficients"),
    ("model", "train_path"),
    ("transport", "counterfactual"),
)

SPLIT_PRESETS = {"staged": (0.3, 0.5, 0.2)}
STAGES = ("split", "descent", "eval", "synth")


class ConfigError(ValueError):
    pass


class RunConfig:
    """Typed view over an INI file; every key has a default."""

    def __init__(self, parser: configparser.ConfigParser, source: Path | None = None):
        self.cp = parser
        self.source = source

    @classmethod
    def load(cls, path: str | Path | None = None, text: str | None = None) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_dict(DEFAULTS)
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            text = path.read_text()
            base = path.resolve().parent
        user = configparser.ConfigParser(interpolation=None)
        try:
            user.read_string(text or "")
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        for sec in user.sections():
            if sec not in DEFAULTS:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, val in user[sec].items():
                if key not in DEFAULTS[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                cp[sec][key] = val
        for sec, key in PATH_KEYS:
            v = cp[sec][key].strip()
            if v:
                cp[sec][key] = str((base / v).resolve())
        return cls(cp, path)

    def override(self, section: str, key: str, value) -> None:
        if value is None:
            return
        if section == "run" and key == "out":
            value = Path(value).resolve()
        self.cp[section][key] = str(value)

    # typed accessors
    def get(self, section: str, key: str) -> str:
        return self.cp[section][key].strip()

    def opt(self, section: str, key: str) -> str | None:
        return self.get(section, key) or None

    def path(self, section: str, key: str) -> Path | None:
        v = self.get(section, key)
        return Path(v) if v else None

    def integer(self, section: str, key: str) -> int:
        try:
            return int(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer") from None

    def real(self, section: str, key: str) -> float:
        try:
            return float(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number") from None

    def flag(self, section: str, key: str) -> bool:
        try:
            return self.cp.getboolean(section, key)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be true or false") from None

    def items(self, section: str, key: str) -> list[str]:
        return [t.strip() for t in self.get(section, key).split(",") if t.strip()]

    @property
    def seed(self) -> int:
        return self.integer("run", "seed")

    @property
    def out(self) -> Path:
        return Path(self.get("run", "out"))

    def stage_seed(self, stage: str) -> int:
        """Independent integer seed per pipeline stage, derived from the run seed."""
        return int(np.random.SeedSequence([self.seed, STAGES.index(stage)]).generate_state(1)[0])

    def write_resolved(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            self.cp.write(fh)
