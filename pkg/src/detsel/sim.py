"""Link-level Monte Carlo engine: dataset generation and policy simulation.

Every block draws its bits, channel and noise from seeds derived only from
``(seed, stream, block)``, so runs that differ in policy or SNR see the same
realizations (noise is a fixed draw scaled by sigma).
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelModel, sample_channels, snr_to_sigma2, transmit
from .codec import ParityCheckMatrix, decode_min_sum, encode, load_alist, random_ldpc
from .detectors import (
    DETECTOR_NAMES, ED_ADDS, ED_MULTS, N_DETECTORS, candidate_count, hard_decisions,
    run_detector,
)
from .features import Dataset, detector_correctness, extract_features, label_from_flags
from .mlp import forward_op_count
from .modem import build_constellation, map_bits

log = logging.getLogger(__name__)

STREAM_SIMULATE = 0
STREAM_DATASET = 1

# key -> meaning; anything else in a config file is rejected
CONFIG_KEYS = {
    "modulation": "bits per QAM symbol M (2, 4, 6 or 8)",
    "snr_db": "comma-separated SNR list in dB, or start:stop:step (stop inclusive)",
    "channel": "iid | correlated | tdl",
    "corr_length": "correlation length in REs for the correlated channel",
    "taps": "tdl taps as delay:power pairs separated by commas",
    "fft_size": "tdl FFT size",
    "blocks": "transport blocks per SNR",
    "res_per_block": "resource elements per block",
    "coding": "uncoded | ldpc",
    "ldpc_alist": "parity-check matrix for ldpc coding (alist file)",
    "ldpc_n": "codeword length of the generated code when no alist is given",
    "ldpc_m": "number of checks of the generated code",
    "ldpc_max_iter": "min-sum iterations",
    "ldpc_alpha": "min-sum normalization",
    "policy": "static:<d or name> | dynamic:<model> | twostage:<model> | genie",
    "online_activation": "sigmoid used by the MLP online (pwl | exact | model)",
    "seed": "master seed",
    "workers": "worker processes for block-level parallelism",
    "out": "output path prefix for reports",
}


class ConfigError(ValueError):
    pass


def parse_snr_list(text: str) -> tuple:
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ConfigError(f"snr_db range must be start:stop:step, got {text!r}")
        start, stop, step = parts
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return tuple(float(round(start + i * step, 10)) for i in range(n))
    return tuple(float(s) for s in text.split(",") if s.strip())


@dataclass(frozen=True)
class Policy:
    kind: str
    detector: int | None = None
    model_path: str | None = None

    @classmethod
    def parse(cls, spec: str) -> "Policy":
        kind, _, arg = spec.strip().partition(":")
        if kind == "static":
            names = {v.lower(): k for k, v in DETECTOR_NAMES.items()}
            if arg.lower() in names:
                return cls("static", names[arg.lower()])
            if arg.isdigit() and 1 <= int(arg) <= N_DETECTORS:
                return cls("static", int(arg))
            raise ConfigError(f"bad static detector {arg!r}")
        if kind in ("dynamic", "twostage"):
            if not arg:
                raise ConfigError(f"{kind} policy needs a model path")
            return cls(kind, model_path=arg)
        if kind == "genie" and not arg:
            return cls("genie")
        raise ConfigError(f"unknown policy {spec!r}")

    @property
    def spec(self) -> str:
        if self.kind == "static":
            return f"static:{self.detector}"
        if self.model_path:
            return f"{self.kind}:{self.model_path}"
        return self.kind

    @property
    def uses_mlp(self) -> bool:
        return self.kind in ("dynamic", "twostage")


@dataclass(frozen=True)
class SimConfig:
    modulation: int = 8
    snr_db: tuple = (50.0,)
    channel: str = "iid"
    corr_length: float = 1.0
    taps: tuple = ()
    fft_size: int = 2048
    blocks: int = 2000
    res_per_block: int = 1024
    coding: str = "uncoded"
    ldpc_alist: str | None = None
    ldpc_n: int = 1024
    ldpc_m: int = 128
    ldpc_max_iter: int = 50
    ldpc_alpha: float = 0.75
    policy: str = "static:5"
    online_activation: str = "pwl"
    seed: int = 0
    workers: int = 1
    out: str | None = None
    source: str = field(default="", compare=False)

    def __post_init__(self):
        if self.modulation not in (2, 4, 6, 8):
            raise ConfigError(f"unsupported modulation {self.modulation}")
        if not self.snr_db:
            raise ConfigError("snr_db is empty")
        for k in ("blocks", "res_per_block", "workers", "ldpc_max_iter", "fft_size"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        if self.coding not in ("uncoded", "ldpc"):
            raise ConfigError(f"unknown coding {self.coding!r}")
        if self.online_activation not in ("pwl", "exact", "model"):
            raise ConfigError(f"unknown online_activation {self.online_activation!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        Policy.parse(self.policy)
        self.channel_model()

    def channel_model(self) -> ChannelModel:
        try:
            return ChannelModel(self.channel, self.corr_length, self.taps, self.fft_size)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @property
    def policy_obj(self) -> Policy:
        return Policy.parse(self.policy)

    def replace(self, **kw) -> "SimConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return SimConfig(**d)

    def echo(self) -> dict:
        d = asdict(self)
        d["snr_db"] = list(self.snr_db)
        d["taps"] = [list(t) for t in self.taps]
        return d


def parse_config(text: str) -> SimConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string("[sim]\n" + text)
    except configparser.Error as e:
        raise ConfigError(f"config syntax: {e}".replace("\n", " ")) from None
    kw = {}
    for key, raw in cp["sim"].items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            if key == "snr_db":
                kw[key] = parse_snr_list(raw)
            elif key == "taps":
                kw[key] = tuple(tuple(float(v) for v in p.split(":")) for p in raw.split(",") if p.strip())
            elif key in ("modulation", "fft_size", "blocks", "res_per_block", "ldpc_n", "ldpc_m",
                         "ldpc_max_iter", "seed", "workers"):
                kw[key] = int(raw)
            elif key in ("corr_length", "ldpc_alpha"):
                kw[key] = float(raw)
            else:
                kw[key] = raw.strip()
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return SimConfig(**kw, source=text)


def load_config(path) -> SimConfig:
    return parse_config(Path(path).read_text())


# ----------------------------------------------------------------------------
# Block realizations


def block_seeds(seed: int, stream: int, block: int):
    """Independent (bits, channel, noise) seeds for one block."""
    return np.random.SeedSequence([seed, stream, block]).spawn(3)


@dataclass
class BlockRealization:
    bits: np.ndarray   # (R, 2, M)
    H: np.ndarray      # (R, 2, 2)
    y: np.ndarray      # (R, 2)
    sigma2: float
    info: list | None = None  # per-codeword info bits in ldpc mode


def _code(cfg: SimConfig) -> ParityCheckMatrix | None:
    if cfg.coding != "ldpc":
        return None
    if cfg.ldpc_alist:
        return load_alist(cfg.ldpc_alist)
    return random_ldpc(cfg.ldpc_n, cfg.ldpc_m, seed=cfg.seed)


def realize_block(cfg: SimConfig, snr_db: float, block: int, stream: int = STREAM_SIMULATE,
                  code: ParityCheckMatrix | None = None) -> BlockRealization:
    c = build_constellation(cfg.modulation)
    R, M = cfg.res_per_block, cfg.modulation
    sb, sc, sn = block_seeds(cfg.seed, stream, block)
    rng = np.random.default_rng(sb)
    info = None
    if code is None:
        bits = rng.integers(0, 2, size=(R, 2, M), dtype=np.uint8)
    else:
        total = 2 * R * M
        if total % code.n:
            raise ConfigError(f"block carries {total} bits, not a multiple of code length {code.n}")
        info = rng.integers(0, 2, size=(total // code.n, code.k), dtype=np.uint8)
        bits = encode(code, info).reshape(R, 2, M)
    H = sample_channels(cfg.channel_model(), R, sc)
    sigma2 = snr_to_sigma2(snr_db)
    # unit-variance noise scaled by sigma keeps realizations paired across SNR
    noise = transmit(np.zeros_like(H), np.zeros((R, 2)), 1.0, np.random.default_rng(sn))
    y = (H @ map_bits(c, bits)[..., None])[..., 0] + np.sqrt(sigma2) * noise
    return BlockRealization(bits, H, y, sigma2, info)


# ----------------------------------------------------------------------------
# Policies


def _load_policy_model(policy: Policy):
    from .model import load_model

    if not policy.uses_mlp:
        return None
    try:
        return load_model(policy.model_path)
    except FileNotFoundError:
        raise ConfigError(f"model file not found: {policy.model_path}") from None


def select_detectors(policy: Policy, rb: BlockRealization, c, model=None,
                     activation: str = "pwl") -> np.ndarray:
    n = len(rb.y)
    if policy.kind == "static":
        return np.full(n, policy.detector, dtype=np.int64)
    if policy.kind == "genie":
        z = label_from_flags(detector_correctness(rb.y, rb.H, rb.sigma2, rb.bits, c))
        return np.where(z == 0, N_DETECTORS, z)
    act = None if activation == "model" else activation
    feats = extract_features(rb.y, rb.H, rb.sigma2)
    return model.select(feats, two_stage=policy.kind == "twostage", activation=act)


@dataclass
class BlockResult:
    block_error: bool
    re_errors: int
    usage: np.ndarray     # REs per detector (5,)
    ed_total: int         # EDs per layer summed over REs
    decoder_iters: int = 0


def simulate_block(cfg: SimConfig, snr_db: float, block: int, model=None,
                   code: ParityCheckMatrix | None = None) -> BlockResult:
    c = build_constellation(cfg.modulation)
    policy = cfg.policy_obj
    rb = realize_block(cfg, snr_db, block, STREAM_SIMULATE, code)
    sel = select_detectors(policy, rb, c, model, cfg.online_activation)
    llr = np.zeros(rb.bits.shape)
    usage = np.zeros(N_DETECTORS, dtype=np.int64)
    ed = 0
    for d in range(1, N_DETECTORS + 1):
        idx = np.flatnonzero(sel == d)
        usage[d - 1] = len(idx)
        if len(idx):
            llr[idx] = run_detector(d, rb.y[idx], rb.H[idx], rb.sigma2, c).llr
            ed += len(idx) * candidate_count(d, c)
    hard = hard_decisions(llr)
    re_err = int(np.count_nonzero(np.any(hard != rb.bits, axis=(1, 2))))
    if code is None:
        return BlockResult(re_err > 0, re_err, usage, ed)
    words = llr.reshape(-1, code.n)
    err, iters = False, 0
    for w, info in zip(words, rb.info):
        dec = decode_min_sum(code, w, cfg.ldpc_max_iter, cfg.ldpc_alpha, true_info=info)
        err |= dec.block_error
        iters += dec.iterations
    return BlockResult(err, re_err, usage, ed, iters)


def _worker(args):
    cfg, snr_db, blocks = args
    model = _load_policy_model(cfg.policy_obj)
    code = _code(cfg)
    return [simulate_block(cfg, snr_db, b, model, code) for b in blocks]


def _chunks(n: int, k: int):
    step = -(-n // k)
    return [range(i, min(i + step, n)) for i in range(0, n, step)]


# ----------------------------------------------------------------------------
# Reports

REPORT_COLUMNS = (
    "policy", "snr_db", "blocks", "res", "block_errors", "bler", "re_errors", "re_error_rate",
    "util_mmse", "util_icr16", "util_icr32", "util_icr64", "util_drml",
    "avg_ed_per_layer", "avg_mults", "avg_adds", "mlp_mults", "mlp_adds",
)


@dataclass
class SnrPoint:
    policy: str
    snr_db: float
    blocks: int
    res: int
    block_errors: int
    re_errors: int
    usage: list
    ed_total: int
    mlp_mults: int
    mlp_adds: int
    decoder_iters: int = 0

    @property
    def bler(self) -> float:
        return self.block_errors / self.blocks

    @property
    def re_error_rate(self) -> float:
        return self.re_errors / self.res

    @property
    def utilization(self) -> list:
        return [u / self.res for u in self.usage]

    @property
    def avg_ed_per_layer(self) -> float:
        return self.ed_total / self.res

    @property
    def avg_mults(self) -> float:
        return (self.ed_total * ED_MULTS + self.res * self.mlp_mults) / self.res

    @property
    def avg_adds(self) -> float:
        return (self.ed_total * ED_ADDS + self.res * self.mlp_adds) / self.res

    def as_dict(self) -> dict:
        return {
            "policy": self.policy, "snr_db": self.snr_db, "blocks": self.blocks, "res": self.res,
            "block_errors": self.block_errors, "bler": self.bler, "re_errors": self.re_errors,
            "re_error_rate": self.re_error_rate, "usage": list(self.usage),
            "utilization": self.utilization, "ed_total": self.ed_total,
            "avg_ed_per_layer": self.avg_ed_per_layer, "avg_mults": self.avg_mults,
            "avg_adds": self.avg_adds, "mlp_mults": self.mlp_mults, "mlp_adds": self.mlp_adds,
            "decoder_iters": self.decoder_iters,
        }


@dataclass
class SimReport:
    config: dict
    points: list

    @property
    def totals(self) -> dict:
        res = sum(p.res for p in self.points)
        usage = np.sum([p.usage for p in self.points], axis=0).tolist()
        return {
            "blocks": sum(p.blocks for p in self.points),
            "res": res,
            "block_errors": sum(p.block_errors for p in self.points),
            "re_errors": sum(p.re_errors for p in self.points),
            "usage": usage,
            "utilization": [u / res for u in usage],
            "avg_ed_per_layer": sum(p.ed_total for p in self.points) / res,
        }

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "per_snr": [p.as_dict() for p in self.points],
                           "totals": self.totals}, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        return rows_to_csv([point_row(p.as_dict()) for p in self.points])


def point_row(d: dict) -> list:
    return [d["policy"], d["snr_db"], d["blocks"], d["res"], d["block_errors"], d["bler"],
            d["re_errors"], d["re_error_rate"], *d["utilization"], d["avg_ed_per_layer"],
            d["avg_mults"], d["avg_adds"], d["mlp_mults"], d["mlp_adds"]]


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def simulate(cfg: SimConfig) -> SimReport:
    policy = cfg.policy_obj
    model = _load_policy_model(policy)
    ops = forward_op_count(model.params.sizes) if model is not None else None
    code = _code(cfg)
    points = []
    for snr in cfg.snr_db:
        if cfg.workers > 1:
            jobs = [(cfg, snr, ch) for ch in _chunks(cfg.blocks, cfg.workers)]
            with ProcessPoolExecutor(cfg.workers) as ex:
                results = [r for part in ex.map(_worker, jobs) for r in part]
        else:
            results = [simulate_block(cfg, snr, b, model, code) for b in range(cfg.blocks)]
        pt = SnrPoint(
            policy=policy.spec, snr_db=snr, blocks=cfg.blocks, res=cfg.blocks * cfg.res_per_block,
            block_errors=sum(r.block_error for r in results),
            re_errors=sum(r.re_errors for r in results),
            usage=np.sum([r.usage for r in results], axis=0).tolist(),
            ed_total=sum(r.ed_total for r in results),
            mlp_mults=ops.mults if ops else 0, mlp_adds=ops.adds if ops else 0,
            decoder_iters=sum(r.decoder_iters for r in results),
        )
        log.info("%s snr=%.2f bler=%.4g re_err=%.3g avg_ed=%.3f", policy.spec, snr, pt.bler,
                 pt.re_error_rate, pt.avg_ed_per_layer)
        points.append(pt)
    return SimReport(cfg.echo(), points)


# ----------------------------------------------------------------------------
# Dataset generation


@dataclass
class GenerationStats:
    total: int
    excluded: int

    @property
    def retained(self) -> int:
        return self.total - self.excluded


def generate_dataset(cfg: SimConfig) -> tuple[Dataset, GenerationStats]:
    """Simulate blocks at every configured SNR and keep REs that DR-ML gets right."""
    c = build_constellation(cfg.modulation)
    parts, total, excluded = [], 0, 0
    for si, snr in enumerate(cfg.snr_db):
        for b in range(cfg.blocks):
            gb = si * cfg.blocks + b
            rb = realize_block(cfg, snr, gb, STREAM_DATASET)
            feats = extract_features(rb.y, rb.H, rb.sigma2)
            flags = detector_correctness(rb.y, rb.H, rb.sigma2, rb.bits, c)
            z = label_from_flags(flags)
            keep = np.flatnonzero(z > 0)
            total += len(z)
            excluded += len(z) - len(keep)
            parts.append(Dataset(np.full(len(keep), gb), keep, np.full(len(keep), snr),
                                 feats[keep], z[keep], flags[keep]))
    stats = GenerationStats(total, excluded)
    log.info("generated %d REs, excluded %d where DR-ML erred", total, excluded)
    return Dataset.concatenate(parts), stats
