"""``ndns`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import AudioClip, WavError, read_wav, write_wav
from .dataset import Manifest, SynthConfig, list_wavs, load_triple, synthesize_dataset
from .metrics import (
    CSV_COLUMNS,
    Dnsmos,
    EvalReport,
    LatencyBreakdown,
    buffer_latency,
    cap_db,
    encdec_latency,
    improvements_from_means,
    network_latency,
    power_proxy,
    qualification,
    si_snr,
)
from .sdnn import (
    DEFAULT_TOPOLOGY,
    ModelFormatError,
    OpsCounter,
    SdnnNetwork,
    count_params,
    denoise,
    load_model,
    model_size_bytes,
    param_breakdown,
    save_model,
)
from .stft_codec import StftConfig, frame_roundtrip
from .toy_corpus import make_toy_corpus
from .training import ConfigError, TrainConfig, train

log = logging.getLogger("ndns")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
RUN_MANIFEST_NAME = "run_manifest.json"
OPS_NAME = "ops.json"


class UsageError(Exception):
    """Bad flag combination detected after parsing."""


# ---------------------------------------------------------------- run manifest


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    tool_version: str = __version__
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def hash_inputs(self, paths) -> None:
        for p in paths:
            self.inputs[str(p)] = sha256_file(p)

    def write(self, run_dir) -> Path:
        path = Path(run_dir) / RUN_MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


class _Timer:
    def __init__(self):
        self.started = datetime.now(timezone.utc)
        self.t0 = time.perf_counter()

    def finish(self) -> dict:
        return {
            "started_utc": self.started.isoformat(),
            "finished_utc": datetime.now(timezone.utc).isoformat(),
            "wall_s": time.perf_counter() - self.t0,
        }


def _jobs(value: int | None) -> int:
    return max(1, value if value is not None else int(os.environ.get("NDNS_JOBS", "1")))


def _stft_config(args) -> StftConfig:
    try:
        return StftConfig(args.window, args.hop)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    try:
        cfg = SynthConfig((args.snr_min, args.snr_max), args.segment_s, count=args.count, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    timer = _Timer()
    manifest = synthesize_dataset(cfg, args.clean_dir, args.noise_dir, args.out, jobs=_jobs(args.jobs))
    run = RunManifest("synth", {**asdict(cfg), "jobs": _jobs(args.jobs)})
    run.hash_inputs(list_wavs(args.clean_dir) + list_wavs(args.noise_dir))
    run.outputs = [str(manifest)]
    run.timings = timer.finish()
    run.write(args.out)
    print(f"wrote {cfg.count} triples and {manifest}")
    return EXIT_OK


def cmd_make_toy_corpus(args) -> int:
    clean_dir, noise_dir = make_toy_corpus(args.out, args.n_clean, args.n_noise, args.duration_s, args.seed)
    print(f"clean sources: {clean_dir}\nnoise sources: {noise_dir}")
    return EXIT_OK


# -------------------------------------------------------------------- denoise


def _load_net(args) -> SdnnNetwork | None:
    if args.mask_bypass:
        return None
    if args.model is None:
        raise UsageError("--model is required unless --mask-bypass is given")
    return load_model(args.model)


def _write_ops(counter: OpsCounter, path) -> None:
    Path(path).write_text(json.dumps(counter.to_dict(), indent=2, sort_keys=True) + "\n")


def cmd_denoise(args) -> int:
    cfg = _stft_config(args)
    single = args.input is not None or args.output is not None
    batch = args.manifest is not None or args.out_dir is not None
    if single == batch:
        raise UsageError("give either --input/--output or --manifest/--out-dir")
    if single and (args.input is None or args.output is None):
        raise UsageError("--input and --output go together")
    if batch and (args.manifest is None or args.out_dir is None):
        raise UsageError("--manifest and --out-dir go together")
    if args.net_delay_steps < 0:
        raise UsageError("--net-delay-steps must be nonnegative")
    net = _load_net(args)
    timer = _Timer()

    if single:
        out, counter = denoise(net, read_wav(args.input), cfg, args.net_delay_steps, args.mask_bypass)
        write_wav(out, args.output)
        if args.ops_json:
            _write_ops(counter, args.ops_json)
        print(f"{args.output}: {len(out)} samples, synops={counter.synops}, neuronops={counter.neuronops}")
        return EXIT_OK

    manifest = Manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(i: int):
        rec = manifest.records[i]
        clip = read_wav(manifest.resolve(rec.noisy_path))
        out, counter = denoise(net, clip, cfg, args.net_delay_steps, args.mask_bypass)
        path = out_dir / Path(rec.noisy_path).name
        write_wav(out, path)
        return path, counter

    with ThreadPoolExecutor(_jobs(args.jobs)) as pool:
        results = list(pool.map(work, range(len(manifest))))
    total = OpsCounter(timestep_s=cfg.timestep_s)
    for _, c in results:
        total = total + c
    ops_path = Path(args.ops_json) if args.ops_json else out_dir / OPS_NAME
    _write_ops(total, ops_path)

    run = RunManifest("denoise", {
        "net_delay_steps": args.net_delay_steps, "mask_bypass": args.mask_bypass,
        "window": cfg.window_length, "hop": cfg.hop_length,
    })
    run.hash_inputs([args.manifest] + ([args.model] if net is not None else []))
    run.outputs = [str(p) for p, _ in results] + [str(ops_path)]
    run.timings = timer.finish()
    run.write(out_dir)
    print(f"denoised {len(results)} files into {out_dir}; ops in {ops_path}")
    return EXIT_OK


# ----------------------------------------------------------------------- eval


def _aligned(est: AudioClip, clean: AudioClip, lag: int) -> float:
    n = min(len(clean), len(est)) - lag
    return si_snr(est.samples[lag : lag + n], clean.samples[:n])


def _read_dnsmos(path) -> Dnsmos:
    data = json.loads(Path(path).read_text())
    return Dnsmos(*(None if data.get(k) is None else float(data[k]) for k in ("ovrl", "sig", "bak")))


def evaluate(manifest: Manifest, denoised_dir, bypass_dir, counter: OpsCounter, cfg: StftConfig,
             net: SdnnNetwork | None = None, encdec_s: float | None = None, dnsmos: Dnsmos | None = None,
             name: str = "SDNN") -> EvalReport:
    """Score denoised and codec-only outputs against the manifest's clean references.

    Each output is aligned to its clean reference at the cross-correlation
    lag before SI-SNR is taken; the reported network latency is the largest
    lag over utterances.
    """
    denoised_dir, bypass_dir = Path(denoised_dir), Path(bypass_dir)
    full, encdec, data, lags, per_utt = [], [], [], [], []
    for i, rec in enumerate(manifest.records):
        clean, _, noisy, _ = load_triple(manifest, i)
        fname = Path(rec.noisy_path).name
        den = read_wav(denoised_dir / fname)
        byp = read_wav(bypass_dir / fname)
        lag_s = network_latency(clean, den)
        lag = int(round(lag_s * clean.sample_rate_hz))
        byp_lag = int(round(network_latency(clean, byp) * clean.sample_rate_hz))
        f, e, d = (cap_db(_aligned(den, clean, lag)), cap_db(_aligned(byp, clean, byp_lag)),
                   cap_db(si_snr(noisy, clean)))
        full.append(f)
        encdec.append(e)
        data.append(d)
        lags.append(lag_s)
        per_utt.append({"index": rec.index, "file": fname, "si_snr_db": f, "si_snr_encdec_db": e,
                        "si_snr_data_db": d, "lag_s": lag_s})
    if not full:
        raise ValueError("manifest is empty")
    full_db, encdec_db, data_db = (float(np.mean(v)) for v in (full, encdec, data))
    snri_data, snri_encdec = improvements_from_means(full_db, encdec_db, data_db)

    if encdec_s is None:
        rng = np.random.default_rng(0)
        windows = [rng.standard_normal(cfg.window_length) for _ in range(8)]
        encdec_s = encdec_latency(lambda w: frame_roundtrip(w, cfg), windows)
    latency = LatencyBreakdown(buffer_latency(cfg), encdec_s, max(lags))
    return EvalReport(
        si_snr_db=full_db,
        si_snri_data_db=snri_data,
        si_snri_encdec_db=snri_encdec,
        latency=latency,
        power_proxy_mops_s=power_proxy(counter),
        param_count=count_params(net) if net is not None else 0,
        model_size_bytes=model_size_bytes(net) if net is not None else 0,
        dnsmos=dnsmos or Dnsmos(),
        name=name,
        per_utterance=tuple(per_utt),
    )


def cmd_eval(args) -> int:
    cfg = _stft_config(args)
    timer = _Timer()
    manifest = Manifest(args.manifest)
    counter = OpsCounter.from_dict(json.loads(Path(args.ops_json).read_text()))
    net = load_model(args.model) if args.model else None
    dnsmos = _read_dnsmos(args.dnsmos_file) if args.dnsmos_file else None
    encdec_s = None if args.encdec_latency_ms is None else args.encdec_latency_ms / 1e3
    report = evaluate(manifest, args.denoised_dir, args.bypass_dir, counter, cfg, net, encdec_s, dnsmos, args.name)
    verdict = qualification(report)

    print(" | ".join(CSV_COLUMNS))
    print(report.table_row())
    print("qualification: " + ("PASS" if verdict.passed else "FAIL"))
    for reason in verdict.reasons:
        print(f"  - {reason}")

    outputs = []
    if args.out:
        doc = report.to_dict()
        doc["qualification"] = {"passed": verdict.passed, "reasons": list(verdict.reasons)}
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
        outputs.append(args.out)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
        outputs.append(args.csv)
    if args.run_dir:
        Path(args.run_dir).mkdir(parents=True, exist_ok=True)
        run = RunManifest("eval", {"name": args.name, "window": cfg.window_length, "hop": cfg.hop_length,
                                   "encdec_latency_ms": args.encdec_latency_ms})
        run.hash_inputs([args.manifest, args.ops_json] + ([args.model] if args.model else []))
        run.outputs = [str(p) for p in outputs]
        run.timings = timer.finish()
        run.write(args.run_dir)
    return EXIT_OK


# ---------------------------------------------------------------------- train


def _parse_topology(text: str) -> tuple[int, ...]:
    try:
        topo = tuple(int(t) for t in text.replace("x", ",").split(","))
    except ValueError as exc:
        raise UsageError(f"bad topology {text!r}") from exc
    if len(topo) < 2 or min(topo) < 1:
        raise UsageError(f"bad topology {text!r}")
    return topo


def _weight_bits(text: str) -> int | None:
    return None if text.lower() in ("float", "none", "0") else int(text)


def cmd_train(args) -> int:
    overrides = {"epochs": args.epochs, "seed": args.seed}
    if args.config:
        cfg = TrainConfig.from_file(args.config, **overrides)
    else:
        cfg = TrainConfig.from_dict({k: v for k, v in overrides.items() if v is not None}, "flags")
    run_dir = Path(args.run_dir)
    if args.init_model:
        net = load_model(args.init_model)
    else:
        net = SdnnNetwork.initialize(_parse_topology(args.topology), weight_bits=args.weight_bits,
                                     seed=cfg.seed, timestep_s=cfg.stft.timestep_s)
    timer = _Timer()
    trained, history = train(net, args.manifest, cfg, run_dir=run_dir, resume=args.resume)
    run_dir.mkdir(parents=True, exist_ok=True)
    model_path = run_dir / "model.ndns"
    save_model(trained, model_path)

    run = RunManifest("train", {**cfg.to_dict(), "topology": list(trained.topology),
                                "resume": args.resume})
    run.hash_inputs([args.manifest] + [p for p in (args.config, args.init_model) if p])
    run.outputs = [str(model_path), str(run_dir / "history.json")]
    run.timings = timer.finish()
    run.write(run_dir)
    for h in history:
        extra = f" val_si_snri_data {h['val_si_snri_data_db']:.2f} dB" if "val_si_snri_data_db" in h else ""
        print(f"epoch {h['epoch']:3d} loss {h['loss']:.4f}{extra}")
    print(f"model written to {model_path}")
    return EXIT_OK


def cmd_init_model(args) -> int:
    net = SdnnNetwork.initialize(_parse_topology(args.topology), weight_bits=args.weight_bits, seed=args.seed)
    save_model(net, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


# ----------------------------------------------------------------- model-info


def model_info(net: SdnnNetwork) -> dict:
    b = param_breakdown(net)
    return {
        "topology": list(net.topology),
        "weights": b.weights,
        "delays": b.delays,
        "thresholds": b.thresholds,
        "params": count_params(net),
        "model_size_bytes": model_size_bytes(net),
        "weight_bits": [l.weight_bits for l in net.layers],
        "input_threshold": net.input_threshold,
        "layer_thresholds": [l.threshold for l in net.layers],
    }


def cmd_model_info(args) -> int:
    info = model_info(load_model(args.model))
    if args.json:
        print(json.dumps(info, indent=2))
        return EXIT_OK
    print(f"topology: {'-'.join(str(n) for n in info['topology'])}")
    print(f"params: {info['params']}")
    print(f"weights: {info['weights']}")
    print(f"delays: {info['delays']}")
    print(f"thresholds: {info['thresholds']}")
    print(f"model size: {info['model_size_bytes']} bytes ({info['model_size_bytes'] / 1e3:.1f} KB)")
    print(f"weight bits: {', '.join('float' if b is None else str(b) for b in info['weight_bits'])}")
    return EXIT_OK


# --------------------------------------------------------------------- parser


def _add_codec_flags(p) -> None:
    p.add_argument("--window", type=int, default=512, help="STFT window length in samples")
    p.add_argument("--hop", type=int, default=128, help="STFT hop length in samples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ndns", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize clean/noise/noisy triples and a manifest")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--noise-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=SynthConfig.count)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--segment-s", type=float, default=SynthConfig.segment_s)
    p.add_argument("--snr-min", type=float, default=SynthConfig.snr_db_range[0])
    p.add_argument("--snr-max", type=float, default=SynthConfig.snr_db_range[1])
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default $NDNS_JOBS or 1)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("make-toy-corpus", help="write synthetic speech-like and noise sources")
    p.add_argument("--out", required=True)
    p.add_argument("--n-clean", type=int, default=8)
    p.add_argument("--n-noise", type=int, default=6)
    p.add_argument("--duration-s", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy_corpus)

    p = sub.add_parser("denoise", help="run the denoiser on a WAV file or a whole manifest")
    p.add_argument("--model")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--manifest")
    p.add_argument("--out-dir")
    p.add_argument("--net-delay-steps", type=int, default=2)
    p.add_argument("--mask-bypass", action="store_true", help="unit mask: encoder and decoder only")
    p.add_argument("--ops-json", help="where to write the ops counter (default <out-dir>/ops.json)")
    p.add_argument("--jobs", type=int, default=None)
    _add_codec_flags(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="score denoised outputs and check the qualification gates")
    p.add_argument("--manifest", required=True)
    p.add_argument("--denoised-dir", required=True)
    p.add_argument("--bypass-dir", required=True)
    p.add_argument("--ops-json", required=True)
    p.add_argument("--model", help="model file, for parameter count and size")
    p.add_argument("--dnsmos-file", help="JSON with ovrl/sig/bak scores")
    p.add_argument("--out", help="write the report as JSON")
    p.add_argument("--csv", help="write the report as a CSV row")
    p.add_argument("--run-dir", help="directory for the run manifest")
    p.add_argument("--name", default="SDNN")
    p.add_argument("--encdec-latency-ms", type=float, default=None,
                   help="use this encoder+decoder latency instead of timing it")
    _add_codec_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train a denoiser on a synthesized manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--config", help="TOML or JSON training config")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--init-model", help="start from this model instead of a random one")
    p.add_argument("--topology", default=",".join(map(str, DEFAULT_TOPOLOGY)))
    p.add_argument("--weight-bits", type=_weight_bits, default=8, help="integer or 'float'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("init-model", help="write a randomly initialized model")
    p.add_argument("--out", required=True)
    p.add_argument("--topology", default=",".join(map(str, DEFAULT_TOPOLOGY)))
    p.add_argument("--weight-bits", type=_weight_bits, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init_model)

    p = sub.add_parser("model-info", help="print parameter count, size and topology")
    p.add_argument("--model", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_model_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"ndns {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelFormatError, WavError, OSError, ValueError, IndexError) as exc:
        print(f"ndns {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
