"""Monte-Carlo orchestration.

One trial is the whole pipeline: sample sources, modulate, cross the
channel, detect per slot, cluster, assign, predict, score.  A sweep is a
Cartesian grid over simulation parameters times a trial count, persisted as
plot-ready CSV plus a JSON manifest.  Every random draw is tied to
(master_seed, trial, stage) through counter-based SeedSequence spawning, so
any row can be reproduced bit-exactly in isolation.
"""

import csv
import dataclasses
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .source import SourceModel, fit_markov, gen_markov_sources, load_corpus, random_markov
from .phy import SimConfig, equivalent_channel, gen_channels, gen_codebook, transmit_frame
from .detector import DetectorConfig, amp_iterate, detect_tokens
from .assignment import (compute_score_threshold, coarse_assign, kmeanspp_cluster,
                         refine_assignment, score_matrix)
from .predictor import MarkovPredictor, ExternalPredictor, MaskedSequence, predict_masked, random_fill
from .metrics import (DeviceMatching, LatencyModel, MetricsRecord, latency_orth,
                      latency_todma, match_devices, nmse, orth_token_errors, tder, ter)

# stage ids for seed derivation; order is frozen for reproducibility
STAGE_MODEL = 0
STAGE_SOURCE = 1
STAGE_CODEBOOK = 2
STAGE_CHANNELS = 3
STAGE_NOISE = 4
STAGE_CLUSTER = 5
STAGE_NONORTH = 6
STAGE_ORTH = 7
STAGE_PREDICT = 8

CSV_FIELDS = ["trial", "K", "L", "M", "Q", "N", "snr_db", "tder", "nmse_db",
              "ter_todma", "ter_nonorth", "ter_orth", "latency_todma_s",
              "latency_orth_s", "seed"]

SWEEPABLE = {"K", "L", "M", "Q", "N", "snr_db"}

DEFAULTS = {
    "sim": {"K_T": 400, "K": 20, "M": 256, "L": None, "Q": 1024, "N": 256,
            "snr_db": 25.0},
    "detector": {"T0": 30, "Th_r": 0.5, "damping": 0.0, "early_stop_tol": 1e-6,
                 "gamma_init": 0.5, "known_k": None},
    "source": {"kind": "random", "concentration": 0.3},
    "predictor": {"kind": "markov"},
    "latency": {"bandwidth_hz": 1e7, "ber": 1e-3, "snr_linear": None},
    "sweep": {},
    "trials": 1,
    "master_seed": 0,
    "output_dir": "out",
    "orth_ber": 0.0,
}


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage it happened in."""

    def __init__(self, stage, err):
        super().__init__(f"[{stage}] {err}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    sim: dict
    detector: dict
    source: dict
    predictor: dict
    latency: dict
    sweep: dict
    trials: int
    master_seed: int
    output_dir: str
    orth_ber: float = 0.0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for key, values in self.sweep.items():
            if key not in SWEEPABLE:
                raise ValueError(f"cannot sweep over {key!r}")
            if not values:
                raise ValueError(f"sweep grid for {key!r} is empty")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        merged = {}
        for key, default in DEFAULTS.items():
            if isinstance(default, dict) and key != "sweep":
                sub = dict(default)
                sub.update(raw.get(key, {}))
                merged[key] = sub
            else:
                merged[key] = raw.get(key, default)
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**merged)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def apply_override(self, dotted: str, value: str):
        """Set a config field from a --set key=value string; the value is
        parsed as JSON when possible, kept as a string otherwise."""
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        parts = dotted.split(".")
        target = self.to_dict()
        node = target
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise KeyError(f"no config section {dotted!r}")
            node = node[p]
        node[parts[-1]] = parsed
        fresh = ExperimentConfig.from_dict(target)
        for f in dataclasses.fields(self):
            setattr(self, f.name, getattr(fresh, f.name))


def _trial_seed(master_seed: int, trial: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial + 1,))
    return int(ss.generate_state(1, np.uint64)[0])


def stage_rng(master_seed: int, trial: int, stage: int) -> np.random.Generator:
    """Independent stream for one (trial, stage); trial -1 addresses
    experiment-level stages shared by all trials."""
    return np.random.default_rng(np.random.SeedSequence(master_seed,
                                                        spawn_key=(trial + 1, stage)))


def build_source_model(cfg: ExperimentConfig, Q: int) -> SourceModel:
    src = cfg.source
    if src["kind"] == "random":
        rng = stage_rng(cfg.master_seed, -1, STAGE_MODEL)
        return random_markov(Q, rng, concentration=src.get("concentration", 0.3))
    if src["kind"] == "corpus":
        corpus = load_corpus(src["path"])
        return fit_markov(corpus, Q, smoothing=src.get("smoothing", 1e-3),
                          order=src.get("order", 1))
    raise ValueError(f"unknown source kind {src['kind']!r}")


def _sim_config(cfg: ExperimentConfig, overrides: dict = None) -> SimConfig:
    sim = dict(cfg.sim)
    if overrides:
        sim.update(overrides)
    if sim.get("L") is None:
        sim["L"] = sim["K"] + 1   # default codeword length rule
    sim.setdefault("seed", cfg.master_seed)
    if sim["K_T"] < sim["K"]:
        sim["K_T"] = sim["K"]
    return SimConfig(**sim)


def _latency_model(cfg: ExperimentConfig, snr_db: float) -> LatencyModel:
    lat = dict(cfg.latency)
    if lat.get("snr_linear") is None:
        lat["snr_linear"] = 10.0 ** (snr_db / 10.0)
    return LatencyModel(**lat)


def _build_predictor(cfg: ExperimentConfig, model: SourceModel, Q: int):
    kind = cfg.predictor["kind"]
    if kind == "markov":
        return MarkovPredictor(model)
    if kind == "random":
        return None   # handled by random_fill in the trial loop
    if kind == "external":
        return ExternalPredictor.connect(cfg.predictor["endpoint"], Q,
                                         timeout=cfg.predictor.get("timeout", 30.0))
    raise ValueError(f"unknown predictor kind {kind!r}")


def run_trial(cfg: ExperimentConfig, trial_index: int, sim_overrides: dict = None) -> MetricsRecord:
    """Execute one end-to-end trial and score ToDMA against both baselines.

    The non-orthogonal baseline shares this trial's detection and coarse
    assignment and random-fills the undetermined cells; the orthogonal
    baseline is scored analytically (latency) plus an independent
    token-corruption channel at `orth_ber`.
    """
    try:
        sim = _sim_config(cfg, sim_overrides)
        det_cfg = DetectorConfig(**cfg.detector)
    except Exception as err:
        raise StageError("config", err) from err
    seed = cfg.master_seed

    def rng(stage):
        return stage_rng(seed, trial_index, stage)

    try:
        model = build_source_model(cfg, sim.Q)
        batch = gen_markov_sources(model, sim.K, sim.N, rng(STAGE_SOURCE))
    except Exception as err:
        raise StageError("source", err) from err

    try:
        cb = gen_codebook(sim.L, sim.Q, rng(STAGE_CODEBOOK))
        channels = gen_channels(sim.K, sim.M, rng(STAGE_CHANNELS))
        frame = transmit_frame(cb, batch, channels, sim.noise_variance, rng(STAGE_NOISE))
    except Exception as err:
        raise StageError("phy", err) from err

    try:
        detections = []
        ratio_sum = 0.0
        empty_slots = 0
        for n in range(sim.N):
            state = amp_iterate(frame.slots[n], cb, sim.noise_variance, det_cfg)
            det = detect_tokens(state, det_cfg.Th_r, known_k=det_cfg.known_k)
            detections.append(det)
            empty_slots += det.is_empty
            H_true = equivalent_channel(batch, channels, n).dense(sim.Q, sim.M)
            # same unsquared ratio as metrics.nmse, accumulated slotwise to
            # keep paper-scale memory flat
            ratio_sum += np.linalg.norm(det.h_hat_full - H_true) / np.linalg.norm(H_true)
        nmse_db = float(10.0 * np.log10(ratio_sum / sim.N))
        tder_val = tder([d.active_set for d in detections], batch.active_sets(), sim.K)
    except Exception as err:
        raise StageError("detector", err) from err

    try:
        F_hat = [(n, tok, det.csi[tok]) for n, det in enumerate(detections)
                 for tok in sorted(det.active_set)]
        cm = kmeanspp_cluster(F_hat, sim.K, rng(STAGE_CLUSTER))
        st = coarse_assign(cm, detections)
        B_coarse = st.B_hat.copy()
        score_matrix(st, cm)
        refine_assignment(st, compute_score_threshold(cm))
    except Exception as err:
        raise StageError("assignment", err) from err

    try:
        predictor = _build_predictor(cfg, model, sim.Q)
        pred_rng = rng(STAGE_PREDICT)
        todma_seqs = []
        for k in range(sim.K):
            tokens = [int(t) if t >= 0 else None for t in st.B_hat[k]]
            cands = {n: set(st.candidates[n]) for n in range(sim.N)
                     if tokens[n] is None and n in st.candidates}
            seq = MaskedSequence(tokens=tokens, candidates=cands)
            if predictor is None:
                todma_seqs.append(random_fill(seq, sim.Q, pred_rng))
            else:
                todma_seqs.append(predict_masked(seq, predictor))
        if isinstance(predictor, ExternalPredictor):
            predictor.close()

        nonorth_rng = rng(STAGE_NONORTH)
        nonorth_seqs = []
        for k in range(sim.K):
            tokens = [int(t) if t >= 0 else None for t in B_coarse[k]]
            nonorth_seqs.append(random_fill(MaskedSequence(tokens=tokens), sim.Q, nonorth_rng))
    except Exception as err:
        raise StageError("predictor", err) from err

    try:
        matching = match_devices(cm.centroids, channels)
        ter_todma = ter(todma_seqs, batch, matching)
        ter_nonorth = ter(nonorth_seqs, batch, matching)
        orth_batch = orth_token_errors(batch, cfg.orth_ber, rng(STAGE_ORTH))
        identity = DeviceMatching({i: i for i in range(sim.K)})
        ter_orth = ter(orth_batch.sequences, batch, identity)
        lat = _latency_model(cfg, sim.snr_db)
        latency_t = latency_todma(sim.L, sim.N, lat.bandwidth_hz)
        latency_o = latency_orth(sim.K, sim.N, sim.Q, lat)
    except Exception as err:
        raise StageError("metrics", err) from err

    deviations = {
        "demoted_tokens": int(sum(len(v) for v in st.demoted.values())),
        "empty_detection_slots": int(empty_slots),
        "masked_after_refine": int(st.masked.sum()),
    }
    return MetricsRecord(
        trial=trial_index, K=sim.K, L=sim.L, M=sim.M, Q=sim.Q, N=sim.N,
        snr_db=float(sim.snr_db), tder=tder_val, nmse_db=nmse_db,
        ter_todma=ter_todma, ter_nonorth=ter_nonorth, ter_orth=ter_orth,
        latency_todma_s=latency_t, latency_orth_s=latency_o,
        seed=_trial_seed(cfg.master_seed, trial_index),
        config={"sim": dataclasses.asdict(sim), "detector": dict(cfg.detector),
                "Th_s": float(st.Th_s)},
        deviations=deviations,
    )


def _format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def record_to_row(rec: MetricsRecord) -> list:
    return [_format_value(getattr(rec, f)) for f in CSV_FIELDS]


def _combos(cfg: ExperimentConfig) -> list:
    keys = sorted(cfg.sweep.keys())
    if not keys:
        return [{}]
    return [dict(zip(keys, values))
            for values in itertools.product(*(cfg.sweep[k] for k in keys))]


def _run_job(args) -> MetricsRecord:
    cfg_dict, overrides, trial = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return run_trial(cfg, trial, sim_overrides=overrides)


def run_sweep(cfg: ExperimentConfig, workers: int = 1, resume: bool = True):
    """Cartesian sweep times trials; appends rows to results.csv in a fixed
    job order and skips rows already present, so an interrupted run resumed
    lands on the identical file.  Returns (records, manifest)."""
    out_dir = cfg.output_dir
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as err:
        raise StageError("output", f"output dir {out_dir!r} not writable: {err}") from None

    csv_path = os.path.join(out_dir, "results.csv")
    done = set()
    have_header = False
    if resume and os.path.exists(csv_path) and os.path.getsize(csv_path) > 0:
        with open(csv_path, newline="", encoding="utf-8") as fh:
            have_header = True
            for row in csv.DictReader(fh):
                done.add((row["trial"], row["K"], row["L"], row["M"], row["Q"],
                          row["N"], row["snr_db"]))
    elif os.path.exists(csv_path):
        os.remove(csv_path)

    jobs = []
    for overrides in _combos(cfg):
        sim = _sim_config(cfg, overrides)
        for trial in range(cfg.trials):
            key = (str(trial), str(sim.K), str(sim.L), str(sim.M), str(sim.Q),
                   str(sim.N), repr(float(sim.snr_db)))
            if key not in done:
                jobs.append((overrides, trial))

    started = time.time()
    records = []
    cfg_dict = cfg.to_dict()
    job_args = [(cfg_dict, overrides, trial) for overrides, trial in jobs]

    with open(csv_path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if not have_header and fh.tell() == 0:
            writer.writerow(CSV_FIELDS)
            fh.flush()

        def consume(rec):
            records.append(rec)
            writer.writerow(record_to_row(rec))
            fh.flush()

        if workers > 1 and len(job_args) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for rec in pool.map(_run_job, job_args):
                    consume(rec)
        else:
            for args in job_args:
                consume(_run_job(args))

    manifest = {
        "version": __version__,
        "config": cfg_dict,
        "master_seed": cfg.master_seed,
        "resumed_rows_skipped": len(done),
        "trials_run": len(jobs),
        "trial_seeds": {str(t): _trial_seed(cfg.master_seed, t)
                        for t in range(cfg.trials)},
        "wall_clock_s": time.time() - started,
        "mean_trial_s": (time.time() - started) / max(len(jobs), 1),
        "deviation_flags": _aggregate_deviations(records),
        "snr_convention": "SNR = 1/sigma^2 per symbol per antenna, unit-power devices",
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return records, manifest


def _aggregate_deviations(records: list) -> dict:
    agg: dict = {}
    for rec in records:
        for key, val in rec.deviations.items():
            agg[key] = agg.get(key, 0) + val
    return agg


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def report_csv(csv_path: str) -> list:
    """Aggregate a results file: group rows by configuration columns and
    average the metric columns over trials.  Returns printable row dicts."""
    group_cols = ["K", "L", "M", "Q", "N", "snr_db"]
    metric_cols = ["tder", "nmse_db", "ter_todma", "ter_nonorth", "ter_orth",
                   "latency_todma_s", "latency_orth_s"]
    groups: dict = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = tuple(row[c] for c in group_cols)
            groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups, key=lambda k: tuple(float(x) for x in k)):
        rows = groups[key]
        agg = dict(zip(group_cols, key))
        agg["trials"] = len(rows)
        for col in metric_cols:
            agg[col] = sum(float(r[col]) for r in rows) / len(rows)
        out.append(agg)
    return out
