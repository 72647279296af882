"""Experiment configuration, Monte-Carlo execution, metrics, and export.

A trial draws one channel population, one pilot set and one unit-variance
noise panel from counter-split seed streams, then replays every requested
SNR point by rescaling the same noise (common random numbers across the
sweep) and runs every selected algorithm on the same observation.
"""

import csv
import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .channel import (AntennaArray, ChannelConfig, build_channel,
                      phased_pilot_operator, sample_paths)
from .errors import DomainError, OtfsraError, ShapeError
from .frame import OtfsGrid, build_pilot_operator, generate_pilots
from .gamp import GampConfig, run_convsbl_gamp
from .measurement import awgn, theta_for_snr
from .sbl import TdsblConfig, run_tdsbl_cf

ALGORITHMS = ("tdsbl", "conv2d", "conv1d", "delta")
_GAMP_KERNELS = {"conv2d": "2d", "conv1d": "1d", "delta": "delta"}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment point (SNR values form the only built-in sweep)."""

    # frame geometry
    M: int = 32
    N: int = 8
    M_cp: int = 8
    delta_f: float = 330e3
    carrier_hz: float = 2e9
    m_tau: Optional[int] = 10          # wins over `overhead` when set
    overhead: Optional[float] = None
    # array and population
    n_y: int = 2
    n_z: int = 2
    U: int = 4
    U_a: int = 2
    # protocol
    snr_db: tuple = (10.0,)
    algorithms: tuple = ("conv2d",)
    trials: int = 10
    seed: int = 0
    phase_mode: str = "all-ones"       # "all-ones" | "known"
    workers: int = 1
    profile: str = "desk"
    # component knobs
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    tdsbl: TdsblConfig = field(default_factory=TdsblConfig)
    gamp: GampConfig = field(default_factory=GampConfig)

    def __post_init__(self):
        if self.m_tau is None and self.overhead is None:
            raise DomainError("set either m_tau or overhead")
        if self.overhead is not None and not 0.0 < self.overhead <= 1.0:
            raise DomainError("overhead must lie in (0, 1]")
        if self.phase_mode not in ("all-ones", "known"):
            raise DomainError(f"unknown phase mode {self.phase_mode!r}")
        for algo in self.algorithms:
            if algo not in ALGORITHMS:
                raise DomainError(f"unknown algorithm {algo!r}")
        if not 1 <= self.U_a <= self.U:
            raise DomainError("need 1 <= U_a <= U for defined metrics")
        if self.trials < 1:
            raise DomainError("need at least one trial")

    def grid(self) -> OtfsGrid:
        m_tau = self.m_tau if self.m_tau is not None \
            else max(1, int(round(self.overhead * self.M)))
        return OtfsGrid(M=self.M, N=self.N, M_cp=self.M_cp,
                        delta_f=self.delta_f, M_tau=m_tau)

    def array(self) -> AntennaArray:
        return AntennaArray(self.n_y, self.n_z)

    def hash(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def desk_profile(**overrides) -> ExperimentConfig:
    """Small frame for fast studies: M=32, N=8, CP 8, pilot window 10."""
    return replace(ExperimentConfig(), profile="desk", **overrides)


def table1_profile(**overrides) -> ExperimentConfig:
    """Full-scale frame: M=256, N=15, CP 85, subcarrier spacing 330 kHz."""
    base = ExperimentConfig(M=256, N=15, M_cp=85, delta_f=330e3,
                            m_tau=None, overhead=0.3, n_y=8, n_z=8,
                            U=50, U_a=10, profile="table1")
    return replace(base, **overrides)


@dataclass
class TrialResult:
    algorithm: str
    snr_db: float
    n_antennas: int
    overhead: float
    U: int
    U_a: int
    trial: int
    nmse: float
    nmse_db: float
    pe: float
    lam_hat: tuple
    iterations: int
    runtime_s: float
    seed: int
    converged: bool = True
    failed: bool = False
    error: str = ""


def compute_metrics(H, H_hat, lam, lam_hat):
    """NMSE (linear) and activity error probability."""
    H = np.asarray(H)
    H_hat = np.asarray(H_hat)
    lam = np.asarray(lam)
    lam_hat = np.asarray(lam_hat)
    if H.shape != H_hat.shape or lam.shape != lam_hat.shape:
        raise ShapeError("estimate shapes do not match the truth")
    denom = np.linalg.norm(H) ** 2
    if denom == 0:
        raise DomainError("NMSE undefined: true channel has zero energy "
                          "(no active device)")
    nmse = float(np.linalg.norm(H - H_hat) ** 2 / denom)
    pe = float(np.mean(np.abs(lam - lam_hat)))
    return nmse, pe


def _trial_streams(seed: int, trial: int):
    ss = np.random.SeedSequence((seed, trial))
    vals = ss.generate_state(4)
    return (int(vals[0]), int(vals[1]), int(vals[2]), int(vals[3]))


def _run_single_algorithm(algo, sensing, y, cfg, probe_seed):
    if algo == "tdsbl":
        res = run_tdsbl_cf(sensing, y, cfg.tdsbl, rng=probe_seed)
        return res.H_hat, res.lam_hat, res.iterations, res.converged
    gamp_cfg = replace(cfg.gamp, kernel=_GAMP_KERNELS[algo], coupling=None)
    res = run_convsbl_gamp(sensing, y, gamp_cfg)
    return res.H_hat, res.lam_hat, res.iterations, res.converged


def run_trial(cfg: ExperimentConfig, trial: int):
    """All (snr, algorithm) results for one channel/pilot/noise draw."""
    grid, array = cfg.grid(), cfg.array()
    s_chan, s_noise, s_probe, s_pilot = _trial_streams(cfg.seed, trial)

    paths = sample_paths(cfg.U, cfg.U_a, grid, array, cfg.channel, s_chan)
    cm = build_channel(paths, grid, array)
    pilots = np.stack([generate_pilots(u, grid, s_pilot) for u in range(cfg.U)])
    X = build_pilot_operator(pilots)
    X_phys = phased_pilot_operator(X, paths, grid)
    sensing = X if cfg.phase_mode == "all-ones" else X_phys

    y_clean = X_phys.matmat(cm.H)
    z_unit = awgn(y_clean.shape, 1.0, s_noise)

    results = []
    for snr in cfg.snr_db:
        theta = theta_for_snr(snr, grid)
        y = y_clean + z_unit / math.sqrt(theta)
        for algo in cfg.algorithms:
            tic = time.perf_counter()
            try:
                h_hat, lam_hat, iters, conv = _run_single_algorithm(
                    algo, sensing, y, cfg, s_probe)
                nmse, pe = compute_metrics(cm.H, h_hat, cm.lam, lam_hat)
                results.append(TrialResult(
                    algorithm=algo, snr_db=snr, n_antennas=array.n_a,
                    overhead=grid.overhead, U=cfg.U, U_a=cfg.U_a, trial=trial,
                    nmse=nmse, nmse_db=10.0 * math.log10(max(nmse, 1e-300)),
                    pe=pe, lam_hat=tuple(int(v) for v in lam_hat),
                    iterations=iters, runtime_s=time.perf_counter() - tic,
                    seed=cfg.seed, converged=conv))
            except OtfsraError as exc:   # keep the sweep alive, count it
                results.append(TrialResult(
                    algorithm=algo, snr_db=snr, n_antennas=array.n_a,
                    overhead=grid.overhead, U=cfg.U, U_a=cfg.U_a, trial=trial,
                    nmse=math.nan, nmse_db=math.nan, pe=math.nan,
                    lam_hat=(), iterations=0,
                    runtime_s=time.perf_counter() - tic, seed=cfg.seed,
                    converged=False, failed=True, error=str(exc)))
    return results


def run_experiment(cfg: ExperimentConfig):
    """Monte-Carlo run over all trials and SNR points.

    Trials are independent, reproducible from (seed, trial index), and may
    execute on a process pool; collection order never affects results.
    """
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(run_trial, [cfg] * cfg.trials,
                                   range(cfg.trials)))
    else:
        chunks = [run_trial(cfg, t) for t in range(cfg.trials)]
    out = []
    for chunk in chunks:
        out.extend(chunk)
    return out


def aggregate(results):
    """Mean linear NMSE (reported in dB) and mean Pe per sweep point."""
    groups = {}
    for r in results:
        key = (r.algorithm, r.snr_db, r.n_antennas, r.overhead, r.U, r.U_a)
        groups.setdefault(key, []).append(r)
    rows = []
    for key in sorted(groups):
        rs = groups[key]
        good = [r for r in rs if not r.failed]
        mean_nmse = float(np.mean([r.nmse for r in good])) if good else math.nan
        rows.append({
            "algorithm": key[0], "snr_db": key[1], "n_antennas": key[2],
            "overhead": key[3], "U": key[4], "U_a": key[5],
            "trials": len(rs), "failures": len(rs) - len(good),
            "nmse_db": 10.0 * math.log10(mean_nmse) if good and mean_nmse > 0
                       else math.nan,
            "pe": float(np.mean([r.pe for r in good])) if good else math.nan,
        })
    return rows


CSV_COLUMNS = ("algorithm", "snr_db", "n_antennas", "overhead", "U", "U_a",
               "trial", "nmse_db", "pe", "iters", "runtime_ms", "seed")


def export_results(results, path, cfg: Optional[ExperimentConfig] = None):
    """Write per-trial rows as CSV plus a JSON sidecar with the full
    configuration (every defaulted hyperparameter included)."""
    path = str(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in results:
                writer.writerow([
                    r.algorithm, repr(r.snr_db), r.n_antennas,
                    repr(r.overhead), r.U, r.U_a, r.trial,
                    repr(r.nmse_db), repr(r.pe), r.iterations,
                    repr(r.runtime_s * 1e3), r.seed,
                ])
        if cfg is not None:
            meta = dataclasses.asdict(cfg)
            meta["config_hash"] = cfg.hash()
            meta["n_results"] = len(results)
            with open(path + ".meta.json", "w") as fh:
                json.dump(meta, fh, indent=2, default=str)
    except OSError as exc:
        raise OSError(f"cannot write results to {path!r}: {exc}") from exc
    return path
