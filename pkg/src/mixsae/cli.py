"""Command-line entry point.

Subcommands: synth (generate embedding files), cluster (label an embedding
file), diarize (embeddings or audio+extractor to RTTM), score (DER report),
gradcheck (finite-difference oracle suite). Every run prints a JSON config
echo with all resolved flag values and writes it next to its outputs, so a
run is reproducible from the echo alone.

Exit codes: 0 success, 2 usage error, 3 data error, 4 missing capability.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shlex
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import embeddings as eio
from . import metrics, pipeline
from .mix import MixSae
from .nn import (
    BatchNorm,
    Dense,
    LeakyRelu,
    max_relative_error,
    numeric_gradient,
    zero_grads,
)
from .sae import SaeArchitecture, SparseAutoencoder, SparsityConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MISSING = 4

OUT_DIR_ENV = "MIXSAE_OUT_DIR"


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(args, out_dir: Path) -> dict:
    resolved = {k: (str(v) if isinstance(v, Path) else v)
                for k, v in sorted(vars(args).items()) if k != "func"}
    text = json.dumps(resolved, sort_keys=True)
    print(text)
    (out_dir / f"{args.command}_config.json").write_text(text + "\n")
    return resolved


def _add_common(sub):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out-dir", default=None,
                     help=f"output directory (default: ${OUT_DIR_ENV} or '.')")


def _add_hyper_flags(sub):
    sub.add_argument("--rho", type=float, default=0.2)
    sub.add_argument("--beta", type=float, default=0.01)
    sub.add_argument("--alpha", type=float, default=1.0)
    sub.add_argument("--tau", type=int, default=10)
    sub.add_argument("--batch", type=int, default=16)
    sub.add_argument("--lr", type=float, default=0.001)
    sub.add_argument("--wd", type=float, default=5e-4)
    sub.add_argument("--pre-epochs", type=int, default=50)
    sub.add_argument("--per-cluster-epochs", type=int, default=20)
    sub.add_argument("--main-epochs", type=int, default=20)
    sub.add_argument("--hidden", type=int, nargs="+", default=[256, 128, 64, 32],
                     help="encoder hidden widths (decoder mirrors them)")
    sub.add_argument("--latent-dim", type=int, default=None,
                     help="latent width (default: k)")
    sub.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    sub.add_argument("--gate-hidden", type=int, nargs="?", const=128, default=None,
                     help="use a one-hidden-layer gate (default width 128)")
    sub.add_argument("--rec-reduction", choices=["sum", "mean"], default="sum",
                     help="squared-error reduction inside the kernel")


def _mix_overrides(args) -> dict:
    return {
        "encoder_hidden": tuple(args.hidden),
        "latent_dim": args.latent_dim,
        "sparsity": SparsityConfig(rho=args.rho, beta=args.beta),
        "alpha": args.alpha,
        "tau": args.tau,
        "main_epochs": args.main_epochs,
        "pretrain_epochs": args.pre_epochs,
        "per_cluster_epochs": args.per_cluster_epochs,
        "batch_size": args.batch,
        "lr": args.lr,
        "weight_decay": args.wd,
        "optimizer": args.optimizer,
        "gate_hidden_dim": args.gate_hidden,
        "rec_reduction": args.rec_reduction,
    }


# -- synth -------------------------------------------------------------------------


def cmd_synth(args, parser) -> int:
    out_dir = _out_dir(args)
    _echo_config(args, out_dir)
    if args.conversation:
        spec = eio.ConversationSpec(
            k=args.k, dim=args.dim, separation=args.sep, seed=args.seed,
            duration_s=args.duration, mean_turn_s=args.mean_turn,
            silence_prob=args.silence_prob, window_s=args.w)
        conv = eio.synth_conversation(spec)
        stem = Path(args.out or "conversation.sdeb").stem
        sdeb = out_dir / f"{stem}.sdeb"
        eio.write_embeddings(conv.embeddings, sdeb)
        ref_path = out_dir / f"{stem}_ref.csv"
        with open(ref_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["start", "end", "speaker"])
            for t in conv.reference.turns:
                writer.writerow([f"{t.start:.6f}", f"{t.end:.6f}", t.speaker])
        labels_path = out_dir / f"{stem}_labels.csv"
        _write_labels_csv(labels_path, conv.embeddings, conv.window_labels)
        print(f"wrote {sdeb}, {ref_path}, {labels_path}")
    else:
        spec = eio.SynthSpec(k=args.k, dim=args.dim, points_per_cluster=args.points,
                             separation=args.sep, seed=args.seed)
        es, labels = eio.synth_embeddings(spec)
        stem = Path(args.out or "synth.sdeb").stem
        sdeb = out_dir / f"{stem}.sdeb"
        eio.write_embeddings(es, sdeb)
        labels_path = out_dir / f"{stem}_labels.csv"
        _write_labels_csv(labels_path, es, labels)
        print(f"wrote {sdeb}, {labels_path}")
    return EXIT_OK


def _write_labels_csv(path, es, labels) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "start", "end", "label"])
        for i, lab in enumerate(labels):
            if es.timings is not None:
                start, end = f"{es.timings[i, 0]:.6f}", f"{es.timings[i, 1]:.6f}"
            else:
                start = end = ""
            writer.writerow([i, start, end, int(lab)])


# -- cluster -----------------------------------------------------------------------


def cmd_cluster(args, parser) -> int:
    out_dir = _out_dir(args)
    _echo_config(args, out_dir)
    try:
        es = eio.read_embeddings(args.embeddings)
    except (OSError, ValueError) as exc:
        print(f"cannot read embeddings: {exc}", file=sys.stderr)
        return EXIT_DATA
    if es.n < args.k:
        print(f"{es.n} embeddings cannot form {args.k} clusters", file=sys.stderr)
        return EXIT_DATA
    prefix = args.out_prefix
    if args.method == "mixsae":
        if args.k < 2:
            print(f"mixsae needs k >= 2, got {args.k}", file=sys.stderr)
            return EXIT_DATA
        mix = MixSae(input_dim=es.dim, k=args.k, seed=args.seed,
                     **_mix_overrides(args))
        pseudo = mix.pretrain(es.vectors)
        main_log = mix.main_train(es.vectors, pseudo)
        labels = mix.infer_labels(es.vectors)
        mix.pretrain_log.write_csv(out_dir / f"{prefix}_pretrain_log.csv")
        main_log.write_csv(out_dir / f"{prefix}_train_log.csv")
        mix.save(out_dir / f"{prefix}_model.msae")
    elif args.method == "kmeans":
        from .cluster import kmeans_fit
        _, labels = kmeans_fit(es.vectors.astype(np.float64), args.k, seed=args.seed)
    else:
        from .cluster import AhcConfig, ahc_fit
        labels = ahc_fit(es.vectors.astype(np.float64),
                         AhcConfig(target_clusters=args.k))
    _write_labels_csv(out_dir / f"{prefix}_labels.csv", es, labels)
    print(f"wrote {out_dir / (prefix + '_labels.csv')}")
    return EXIT_OK


# -- diarize -----------------------------------------------------------------------


def _run_extractor(template: str, audio: str, w: float, out_path: str) -> None:
    if "{out}" not in template or "{audio}" not in template:
        raise ValueError("extractor command must contain {audio} and {out} "
                         "placeholders (and may use {w})")
    command = shlex.split(template.format(audio=audio, w=w, out=out_path))
    proc = subprocess.run(command, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"extractor failed ({proc.returncode}): "
                           f"{proc.stderr.strip()[:500]}")


def _vad_filter(es, audio_path, args):
    audio = pipeline.load_wav(audio_path)
    config = pipeline.VadConfig(abs_floor=args.vad_abs_floor,
                                rel_frac=args.vad_rel_frac,
                                min_speech_fraction=args.vad_min_speech)
    threshold = pipeline.vad_threshold(audio, config)
    rate = audio.sample_rate
    n = audio.samples.shape[0]
    keep = []
    for i in range(es.n):
        a = min(int(round(es.timings[i, 0] * rate)), n)
        b = min(int(round(es.timings[i, 1] * rate)), n)
        seg = pipeline.SegmentSpec(a / rate, b / rate, a, b)
        keep.append(b > a and pipeline.energy_vad(audio, seg, config, threshold))
    keep = np.asarray(keep)
    return eio.EmbeddingSet(es.vectors[keep], timings=es.timings[keep],
                            recording_id=es.recording_id, source_tag=es.source_tag)


def cmd_diarize(args, parser) -> int:
    out_dir = _out_dir(args)
    _echo_config(args, out_dir)
    for w in args.w:
        if not (0 < w <= 30):
            parser.error(f"--w must be in (0, 30], got {w}")
    if args.embeddings is None and args.audio is None:
        parser.error("give --embeddings, or --audio with --extractor-cmd")
    if args.embeddings is None and args.extractor_cmd is None:
        print("raw audio given but no extractor is configured; this component "
              "does not compute acoustic embeddings (use --embeddings, or pass "
              "--extractor-cmd)", file=sys.stderr)
        return EXIT_MISSING

    jobs: list[tuple[float, object]] = []
    if args.embeddings is not None:
        try:
            es = eio.read_embeddings(args.embeddings)
        except (OSError, ValueError) as exc:
            print(f"cannot read embeddings: {exc}", file=sys.stderr)
            return EXIT_DATA
        if es.timings is None:
            print("embedding file has no timings; cannot diarize", file=sys.stderr)
            return EXIT_DATA
        if args.audio is not None:
            es = _vad_filter(es, args.audio, args)
        jobs.append((args.w[0], es))
    else:
        for w in args.w:
            with tempfile.NamedTemporaryFile(suffix=".sdeb", delete=False) as tmp:
                tmp_path = tmp.name
            try:
                _run_extractor(args.extractor_cmd, args.audio, w, tmp_path)
                es = eio.read_embeddings(tmp_path)
            except (OSError, ValueError, RuntimeError) as exc:
                print(f"extractor run failed for w={w}: {exc}", file=sys.stderr)
                return EXIT_MISSING
            finally:
                if os.path.exists(tmp_path):
                    os.unlink(tmp_path)
            if es.timings is None:
                print(f"extractor output for w={w} has no timings", file=sys.stderr)
                return EXIT_DATA
            jobs.append((w, es))

    overrides = _mix_overrides(args) if args.method == "mixsae" else None
    for w, es in jobs:
        if es.n < args.k:
            print(f"w={w}: {es.n} speech windows cannot form {args.k} clusters",
                  file=sys.stderr)
            return EXIT_DATA
        result = pipeline.run_pipeline(es, k=args.k, method=args.method,
                                       seed=args.seed, mix_overrides=overrides)
        path = out_dir / f"{es.recording_id}_{args.method}_w{w:g}.rttm"
        result.write_rttm(path)
        print(f"wrote {path} ({len(result.turns)} turns)")
    return EXIT_OK


# -- score -------------------------------------------------------------------------


def cmd_score(args, parser) -> int:
    out_dir = _out_dir(args)
    _echo_config(args, out_dir)
    if len(args.ref) != len(args.hyp):
        parser.error(f"{len(args.ref)} references vs {len(args.hyp)} hypotheses")
    reports = []
    for ref_path, hyp_path in zip(args.ref, args.hyp):
        try:
            ref = metrics.load_annotation(ref_path)
            hyp = metrics.load_annotation(hyp_path)
            report = metrics.der(ref, hyp, collar_s=args.collar,
                                 strict_no_overlap=args.strict)
        except (OSError, ValueError) as exc:
            print(f"cannot score {hyp_path} against {ref_path}: {exc}",
                  file=sys.stderr)
            return EXIT_DATA
        reports.append(report)

    header = f"{'recording':<24}{'DER':>8}{'FA':>9}{'MS':>9}{'CE':>9}{'scored':>9}"
    print(header)
    for r in reports:
        print(f"{r.recording_id:<24}{100 * r.der:>7.2f}%{r.fa_s:>9.3f}"
              f"{r.ms_s:>9.3f}{r.ce_s:>9.3f}{r.scored_total_s:>9.3f}")
    mean_der = float(np.mean([r.der for r in reports]))
    print(f"{'MEAN':<24}{100 * mean_der:>7.2f}%  (collar {args.collar:g}s, "
          f"{len(reports)} recording(s))")

    csv_path = Path(args.out) if args.out else out_dir / "der_report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording_id", "fa_s", "ms_s", "ce_s",
                         "scored_total_s", "der", "collar_s"])
        for r in reports:
            writer.writerow([r.recording_id, f"{r.fa_s:.6f}", f"{r.ms_s:.6f}",
                             f"{r.ce_s:.6f}", f"{r.scored_total_s:.6f}",
                             f"{r.der:.6f}", f"{r.collar_s:g}"])
    print(f"wrote {csv_path}")
    return EXIT_OK


# -- gradcheck ---------------------------------------------------------------------


def _gradcheck_cases(seed: int):
    """Small deterministic instances covering every differentiable piece."""
    rng = np.random.default_rng(seed)

    def dense_chain():
        d1 = Dense(4, 5, rng, dtype=np.float64, name="d1")
        act = LeakyRelu()
        d2 = Dense(5, 3, rng, dtype=np.float64, name="d2")
        x = rng.standard_normal((6, 4))
        target = rng.standard_normal((6, 3))

        def loss_fn():
            params = d1.parameters() + d2.parameters()
            zero_grads(params)
            out = d2.forward(act.forward(d1.forward(x)))
            diff = out - target
            loss = 0.5 * float((diff * diff).sum()) / x.shape[0]
            d1.backward(act.backward(d2.backward(diff / x.shape[0])))
            return loss

        return "dense+leaky_relu mse", loss_fn, d1.parameters() + d2.parameters()

    def batchnorm_chain():
        # no dense bias: the batch norm's mean subtraction would cancel it,
        # leaving a structurally zero gradient the numeric check cannot see
        d = Dense(4, 5, rng, dtype=np.float64, name="d", use_bias=False)
        bn = BatchNorm(5)
        bn.training = True
        x = rng.standard_normal((8, 4))
        target = rng.standard_normal((8, 5))

        def loss_fn():
            params = d.parameters() + bn.parameters()
            zero_grads(params)
            out = bn.forward(d.forward(x), update_running=False)
            diff = out - target
            loss = 0.5 * float((diff * diff).sum()) / x.shape[0]
            d.backward(bn.backward(diff / x.shape[0]))
            return loss

        return "dense+batchnorm mse", loss_fn, d.parameters() + bn.parameters()

    def sae_loss_case():
        arch = SaeArchitecture(input_dim=6, latent_dim=2, encoder_hidden=(5, 4))
        sae = SparseAutoencoder(arch, SparsityConfig(), seed=seed, dtype=np.float64)
        sae.set_training(True)
        x = rng.standard_normal((8, 6))

        def loss_fn():
            params = sae.parameters()
            zero_grads(params)
            losses = sae.loss_backward(x, update_running=False)
            return losses.total

        return "sparse autoencoder objective", loss_fn, sae.parameters()

    def mix_loss_case():
        mix = MixSae(input_dim=6, k=2, encoder_hidden=(4,), latent_dim=2,
                     dtype=np.float64, seed=seed)
        mix.set_training(True)
        x = rng.standard_normal((5, 6))
        labels = rng.integers(0, 2, size=5)

        def loss_fn():
            params = mix.parameters()
            zero_grads(params)
            losses = mix.main_loss_backward(x, labels, update_running=False)
            return losses.total

        return "mixture main objective", loss_fn, mix.parameters()

    return [dense_chain(), batchnorm_chain(), sae_loss_case(), mix_loss_case()]


def _max_err(loss_fn, params, step: float, flip_first: bool) -> float:
    loss_fn()
    analytic = [p.grad.copy() for p in params]
    if flip_first:
        analytic[0] = -analytic[0]
    worst = 0.0
    for p, a in zip(params, analytic):
        numeric = numeric_gradient(loss_fn, p, step=step)
        worst = max(worst, max_relative_error(a, numeric))
    return worst


def cmd_gradcheck(args, parser) -> int:
    out_dir = _out_dir(args)
    _echo_config(args, out_dir)
    failed = False
    for seed in range(args.seeds):
        for name, loss_fn, params in _gradcheck_cases(seed):
            err = _max_err(loss_fn, params, args.step,
                           flip_first=args.inject_sign_error)
            ok = err < args.tol
            failed = failed or not ok
            print(f"[{'PASS' if ok else 'FAIL'}] seed {seed} {name}: "
                  f"max rel err {err:.3e} (tol {args.tol:g})")
    return EXIT_OK if not failed else 1


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixsae",
        description="deep-clustering speaker diarization toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate synthetic embedding files")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--points", type=int, default=200, help="points per cluster")
    p.add_argument("--sep", type=float, default=6.0)
    p.add_argument("--conversation", action="store_true",
                   help="emit a timed conversation instead of a blob cloud")
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--mean-turn", type=float, default=2.0)
    p.add_argument("--silence-prob", type=float, default=0.0)
    p.add_argument("--w", type=float, default=1.0, help="window seconds")
    p.add_argument("--out", default=None, help="output file name (in out dir)")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("cluster", help="cluster an embedding file")
    p.add_argument("embeddings")
    p.add_argument("--method", choices=["mixsae", "kmeans", "ahc"], default="mixsae")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out-prefix", default="cluster")
    _add_hyper_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_cluster)

    p = subs.add_parser("diarize", help="embeddings or audio to RTTM turns")
    p.add_argument("--embeddings", default=None)
    p.add_argument("--audio", default=None)
    p.add_argument("--extractor-cmd", default=None,
                   help="template with {audio} {w} {out} placeholders invoked "
                        "to produce embeddings from audio")
    p.add_argument("--w", type=float, nargs="+", default=[1.0])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--method", choices=["mixsae", "kmeans", "ahc"], default="mixsae")
    p.add_argument("--vad-abs-floor", type=float, default=1e-4)
    p.add_argument("--vad-rel-frac", type=float, default=0.1)
    p.add_argument("--vad-min-speech", type=float, default=0.5)
    _add_hyper_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_diarize)

    p = subs.add_parser("score", help="DER of hypothesis vs reference")
    p.add_argument("--ref", nargs="+", required=True)
    p.add_argument("--hyp", nargs="+", required=True)
    p.add_argument("--collar", type=float, default=0.0)
    p.add_argument("--strict", action="store_true",
                   help="reject references with overlapping speakers")
    p.add_argument("--out", default=None, help="CSV report path")
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = subs.add_parser("gradcheck", help="finite-difference oracle suite")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--inject-sign-error", action="store_true",
                   help=argparse.SUPPRESS)
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args, parser)


if __name__ == "__main__":
    sys.exit(main())
