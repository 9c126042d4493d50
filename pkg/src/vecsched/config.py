"""Run configuration: flat key=value files plus command-line overrides.

The format is one ``key=value`` per line ('#' comments, blank lines ignored)
so experiment folders diff cleanly. Every key has a default derived from the
default simulated-system parameter table; unknown keys are rejected.
Parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .dag import BITS_PER_KB, DagGenParams
from .fed import FedConfig, region_distributions
from .jsonio import format_float
from .neural.policy import PolicyConfig
from .rl import PpoConfig
from .sim import ScenarioDistribution


class ConfigError(ValueError):
    """Unknown key, malformed line, or out-of-range value."""


@dataclass(frozen=True)
class PolicyDims:
    gat_heads: int = 4
    gat_head_dim: int = 8
    max_neighbors: int = 6
    encoder_hidden: int = 64
    decoder_hidden: int = 64
    attention_dim: int = 64
    action_embed_dim: int = 8


@dataclass(frozen=True)
class FedDims:
    servers: int = 3
    scenarios_per_round: int = 1
    rounds: int = 20
    meta_lr: float = 1.0
    holdout: int = 8
    checkpoint_every: int = 1
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    scenario: ScenarioDistribution = field(default_factory=ScenarioDistribution)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    fed: FedDims = field(default_factory=FedDims)
    policy: PolicyDims = field(default_factory=PolicyDims)
    no_gat: bool = False
    no_fed: bool = False
    adapt_steps: int = 5
    figures: bool = True

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(
            num_channels=self.scenario.num_subchannels,
            num_processors=self.scenario.num_processors,
            gat_heads=self.policy.gat_heads,
            gat_head_dim=self.policy.gat_head_dim,
            max_neighbors=self.policy.max_neighbors,
            encoder_hidden=self.policy.encoder_hidden,
            decoder_hidden=self.policy.decoder_hidden,
            attention_dim=self.policy.attention_dim,
            action_embed_dim=self.policy.action_embed_dim,
            use_gat=not self.no_gat,
        )

    def fed_config(self) -> FedConfig:
        return FedConfig(
            num_servers=self.fed.servers,
            scenarios_per_round=self.fed.scenarios_per_round,
            outer_rounds=self.fed.rounds,
            meta_lr=self.fed.meta_lr,
            ppo=self.ppo,
            server_distributions=region_distributions(self.scenario, self.fed.servers),
            master_seed=self.seed,
            holdout_size=self.fed.holdout,
            checkpoint_every=self.fed.checkpoint_every,
            workers=self.fed.workers,
        )


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    return str(value)


# key -> (path, type); paths address nested dataclass fields, with lo/hi
# addressing the two ends of a range tuple
_SCHEMA: dict[str, tuple[tuple[str, ...], type]] = {
    "seed": (("seed",), int),
    "out_dir": (("out_dir",), str),
    "scn.vehicles": (("scenario", "num_vehicles"), int),
    "scn.subchannels": (("scenario", "num_subchannels"), int),
    "scn.processors": (("scenario", "num_processors"), int),
    "scn.uplink_bw_lo_hz": (("scenario", "uplink_bandwidth_hz", "lo"), float),
    "scn.uplink_bw_hi_hz": (("scenario", "uplink_bandwidth_hz", "hi"), float),
    "scn.downlink_bw_lo_hz": (("scenario", "downlink_bandwidth_hz", "lo"), float),
    "scn.downlink_bw_hi_hz": (("scenario", "downlink_bandwidth_hz", "hi"), float),
    "scn.gain_lo": (("scenario", "gain", "lo"), float),
    "scn.gain_hi": (("scenario", "gain", "hi"), float),
    "scn.noise_mw": (("scenario", "noise_mw"), float),
    "scn.proc_freq_lo_hz": (("scenario", "processor_freq", "lo"), float),
    "scn.proc_freq_hi_hz": (("scenario", "processor_freq", "hi"), float),
    "scn.veh_freq_lo_hz": (("scenario", "vehicle_freq", "lo"), float),
    "scn.veh_freq_hi_hz": (("scenario", "vehicle_freq", "hi"), float),
    "scn.tx_power_lo_mw": (("scenario", "vehicle_tx_power_mw", "lo"), float),
    "scn.tx_power_hi_mw": (("scenario", "vehicle_tx_power_mw", "hi"), float),
    "scn.mec_tx_power_lo_mw": (("scenario", "mec_tx_power_mw", "lo"), float),
    "scn.mec_tx_power_hi_mw": (("scenario", "mec_tx_power_mw", "hi"), float),
    "dag.n": (("scenario", "dag", "n"), int),
    "dag.density": (("scenario", "dag", "density"), float),
    "dag.fat": (("scenario", "dag", "fat"), float),
    "dag.ccr": (("scenario", "dag", "ccr"), float),
    "dag.size_lo_kb": (("scenario", "dag", "size_range_bits", "lo_kb"), float),
    "dag.size_hi_kb": (("scenario", "dag", "size_range_bits", "hi_kb"), float),
    "dag.cycles_lo": (("scenario", "dag", "cycle_range", "lo"), float),
    "dag.cycles_hi": (("scenario", "dag", "cycle_range", "hi"), float),
    "ppo.clip_eps": (("ppo", "clip_eps"), float),
    "ppo.kl_coef": (("ppo", "kl_coef"), float),
    "ppo.gamma": (("ppo", "gamma"), float),
    "ppo.gae_lambda": (("ppo", "gae_lambda"), float),
    "ppo.epochs": (("ppo", "inner_epochs"), int),
    "ppo.lr": (("ppo", "learning_rate"), float),
    "ppo.minibatch": (("ppo", "minibatch_size"), int),
    "ppo.episodes": (("ppo", "episodes_per_scenario"), int),
    "fed.servers": (("fed", "servers"), int),
    "fed.scenarios_per_round": (("fed", "scenarios_per_round"), int),
    "fed.rounds": (("fed", "rounds"), int),
    "fed.meta_lr": (("fed", "meta_lr"), float),
    "fed.holdout": (("fed", "holdout"), int),
    "fed.checkpoint_every": (("fed", "checkpoint_every"), int),
    "fed.workers": (("fed", "workers"), int),
    "policy.gat_heads": (("policy", "gat_heads"), int),
    "policy.gat_head_dim": (("policy", "gat_head_dim"), int),
    "policy.max_neighbors": (("policy", "max_neighbors"), int),
    "policy.encoder_hidden": (("policy", "encoder_hidden"), int),
    "policy.decoder_hidden": (("policy", "decoder_hidden"), int),
    "policy.attention_dim": (("policy", "attention_dim"), int),
    "policy.action_embed_dim": (("policy", "action_embed_dim"), int),
    "train.no_gat": (("no_gat",), bool),
    "train.no_fed": (("no_fed",), bool),
    "train.figures": (("figures",), bool),
    "adapt.steps": (("adapt_steps",), int),
}


def _get(cfg: RunConfig, path: tuple[str, ...]):
    obj = cfg
    for part in path:
        if part == "lo" or part == "lo_kb":
            obj = obj[0] / (BITS_PER_KB if part == "lo_kb" else 1.0)
        elif part == "hi" or part == "hi_kb":
            obj = obj[1] / (BITS_PER_KB if part == "hi_kb" else 1.0)
        else:
            obj = getattr(obj, part)
    return obj


def _rebuild(obj, path: tuple[str, ...], update_leaf):
    name = path[0]
    if len(path) == 1:
        return replace(obj, **{name: update_leaf(getattr(obj, name))})
    return replace(obj, **{name: _rebuild(getattr(obj, name), path[1:], update_leaf)})


def _set(cfg: RunConfig, path: tuple[str, ...], value):
    last = path[-1]
    if last in ("lo", "hi", "lo_kb", "hi_kb"):
        scale = BITS_PER_KB if last.endswith("_kb") else 1.0

        def update(old: tuple[float, float]) -> tuple[float, float]:
            lo, hi = old
            if last.startswith("lo"):
                return (value * scale, hi)
            return (lo, value * scale)

        return _rebuild(cfg, path[:-1], update)
    return _rebuild(cfg, path, lambda _old: value)


def default_config() -> RunConfig:
    return RunConfig()


def apply_setting(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    if key not in _SCHEMA:
        raise ConfigError(f"unknown configuration key {key!r}")
    path, kind = _SCHEMA[key]
    text = raw.strip()
    try:
        if kind is bool:
            value = _parse_bool(text)
        elif kind is int:
            value = int(text)
        elif kind is float:
            value = float(text)
        else:
            value = text
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {err}") from err
    return _set(cfg, path, value)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else default_config()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        cfg = apply_setting(cfg, key.strip(), raw)
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"{key}={_fmt(_get(cfg, path))}" for key, (path, _) in _SCHEMA.items()]
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, raw = item.partition("=")
        cfg = apply_setting(cfg, key.strip(), raw)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    try:
        cfg.scenario.validate()
        cfg.ppo.validate()
        cfg.fed_config().validate()
    except ValueError as err:
        raise ConfigError(str(err)) from err
    if cfg.adapt_steps < 0:
        raise ConfigError("adapt.steps must be >= 0")
