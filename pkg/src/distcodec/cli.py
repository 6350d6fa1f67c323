"""Command-line entry point: gen-data, fit, train, compress, decompress, analyze-gap.

Configuration is a flat key=value text file (``#`` starts a comment) plus
``--set key=value`` overrides. Unknown keys are rejected. Keys and defaults:

    spec.y_min=-63  spec.y_max=64  spec.bins=128      (bins must equal y_max - y_min + 1)
    model.kind=learned  model.K_g=1  model.N_q=32  model.M_q=16  model.kernel=15  model.groups=8
    train.lr=1e-4  train.batch=16  train.seed=0  train.lambda_q=1.0  train.max_steps=2000
    train.plateau_patience=10  train.eval_every=50  train.max_decays=2  train.val_images=0
    corpus.channels=32  corpus.images=64  corpus.height=32  corpus.width=32  corpus.seed=0
    corpus.first_image=0  corpus.downscale=16

Exit codes: 0 success, 2 usage error, 3 data error, 4 model or training error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .coder import pack_stream, unpack_stream
from .core import HistogramSpec, PmfBank, decode_ltf, encode_ltf, read_latent, write_latent
from .dist_codecs import (
    GmmModel,
    LearnedModel,
    StaticModel,
    codec_compress,
    codec_decompress,
    encode_model,
    load_model,
    save_model,
)
from .errors import BadShape, CodecError, Diverged
from .eval import SyntheticCorpusSpec, gap_report, generate_corpus
from .histogram import latent_histograms
from .nn import TrainConfig, TransformConfig, train

log = logging.getLogger("distcodec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 2, 3, 4

DEFAULTS = {
    "spec.y_min": -63, "spec.y_max": 64, "spec.bins": 128,
    "model.kind": "learned", "model.K_g": 1, "model.N_q": 32, "model.M_q": 16,
    "model.kernel": 15, "model.groups": 8,
    "train.lr": 1e-4, "train.batch": 16, "train.seed": 0, "train.lambda_q": 1.0,
    "train.max_steps": 2000, "train.plateau_patience": 10, "train.eval_every": 50,
    "train.max_decays": 2, "train.val_images": 0,
    "corpus.channels": 32, "corpus.images": 64, "corpus.height": 32, "corpus.width": 32,
    "corpus.seed": 0, "corpus.first_image": 0, "corpus.downscale": 16,
}

PMF_SUFFIX = ".pmf.ltf"


class UsageError(Exception):
    pass


# --- configuration ----------------------------------------------------------------

def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"config line {n}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def resolve_config(path=None, overrides=()) -> dict:
    """Defaults, then the config file, then ``--set`` overrides, each value coerced to its default's type."""
    raw = parse_config_text(Path(path).read_text()) if path else {}
    raw.update(parse_config_text("\n".join(overrides)))
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    cfg = dict(DEFAULTS)
    for key, value in raw.items():
        try:
            cfg[key] = type(DEFAULTS[key])(value)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {value!r}") from exc
    if cfg["spec.bins"] != cfg["spec.y_max"] - cfg["spec.y_min"] + 1:
        raise UsageError("spec.bins must equal spec.y_max - spec.y_min + 1")
    log.info("resolved config: %s", " ".join(f"{k}={cfg[k]}" for k in sorted(cfg)))
    return cfg


def config_spec(cfg) -> HistogramSpec:
    return HistogramSpec(cfg["spec.y_min"], cfg["spec.y_max"])


def corpus_spec(cfg) -> SyntheticCorpusSpec:
    return SyntheticCorpusSpec(
        channels=cfg["corpus.channels"], images=cfg["corpus.images"], height=cfg["corpus.height"],
        width=cfg["corpus.width"], seed=cfg["corpus.seed"], y_min=cfg["spec.y_min"], y_max=cfg["spec.y_max"],
        downscale=cfg["corpus.downscale"], first_image=cfg["corpus.first_image"],
    )


def transform_config(cfg, channels: int) -> TransformConfig:
    return TransformConfig(channels=channels, bins=cfg["spec.bins"], n_q=cfg["model.N_q"], m_q=cfg["model.M_q"],
                           kernel=cfg["model.kernel"], groups=cfg["model.groups"])


def train_config(cfg) -> TrainConfig:
    return TrainConfig(lr=cfg["train.lr"], batch=cfg["train.batch"], seed=cfg["train.seed"],
                       lambda_q=cfg["train.lambda_q"], max_steps=cfg["train.max_steps"],
                       plateau_patience=cfg["train.plateau_patience"], eval_every=cfg["train.eval_every"],
                       max_decays=cfg["train.max_decays"])


# --- data helpers ---------------------------------------------------------------

def latent_files(data_dir) -> list:
    files = sorted(p for p in Path(data_dir).glob("*.ltf") if not p.name.endswith(PMF_SUFFIX))
    if not files:
        raise FileNotFoundError(f"no .ltf latents in {data_dir}")
    return files


def load_latents(data_dir):
    files = latent_files(data_dir)
    return [f.stem for f in files], [read_latent(f) for f in files]


def write_pmf_sidecar(path, bank: PmfBank):
    Path(path).write_bytes(encode_ltf(bank.mass[:, None, :].astype(np.float32), bank.spec, 1))


def read_pmf_sidecar(path) -> PmfBank:
    data, spec, _ = decode_ltf(Path(path).read_bytes())
    mass = data[:, 0, :].astype(np.float64)
    return PmfBank(mass / mass.sum(axis=1, keepdims=True), spec)


def _verify_model(path, model):
    if encode_model(load_model(path)) != encode_model(model):
        raise CodecError(f"verify failed: {path} does not reload to the same model")


# --- commands ---------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = resolve_config(args.config, args.set)
    cs = corpus_spec(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    latents, truths = generate_corpus(cs)
    for i, (latent, bank) in enumerate(zip(latents, truths), cs.first_image):
        path = out / f"img_{i:04d}.ltf"
        write_latent(path, latent)
        write_pmf_sidecar(out / f"img_{i:04d}{PMF_SUFFIX}", bank)
        if read_latent(path) != latent:
            raise CodecError(f"verify failed: {path}")
    print(f"wrote {len(latents)} latents to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = resolve_config(args.config, args.set)
    kind = args.kind or cfg["model.kind"]
    if kind == "static":
        _, latents = load_latents(args.data)
        model = StaticModel.fit(latent_histograms(x) for x in latents)
    elif kind == "gmm":
        model = GmmModel(args.components or cfg["model.K_g"])
    else:
        raise UsageError(f"fit supports static and gmm, not {kind!r}")
    save_model(model, args.out)
    _verify_model(args.out, model)
    print(f"wrote {kind} model to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.set)
    _, latents = load_latents(args.data)
    spec = config_spec(cfg)
    banks = [latent_histograms(x) for x in latents]
    for b in banks:
        if b.spec != spec:
            raise BadShape(f"data spec {b.spec} differs from config spec {spec}")
    tcfg = transform_config(cfg, banks[0].channels)
    n_val = cfg["train.val_images"]
    if not 0 <= n_val < len(banks):
        raise UsageError("train.val_images must leave at least one training image")
    p = np.stack([b.mass for b in banks])
    pixels = np.array([x.elements_per_channel for x in latents], dtype=np.float64)
    split = len(banks) - n_val
    p_val, pix_val = (p[split:], pixels[split:]) if n_val else (None, None)
    rows = []
    model = LearnedModel.initialize(tcfg, spec, seed=cfg["train.seed"])
    result = train(model.params, tcfg, p[:split], pixels[:split], train_config(cfg), p_val, pix_val,
                   on_eval=rows.append)
    model = LearnedModel(tcfg, spec, result.params)
    save_model(model, args.out)
    _verify_model(args.out, model)
    if args.log:
        with open(args.log, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step", "lr", "loss_bits", "rate_y_bits", "rate_q_bits",
                                                    "val_loss_bits"], lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    print(f"trained {result.steps} steps ({result.decays} lr decays); wrote {args.out}")
    return EXIT_OK


def cmd_compress(args) -> int:
    model = load_model(args.model)
    latent = read_latent(args.inp)
    stream = codec_compress(latent, model)
    data = stream.to_bytes()
    Path(args.out).write_bytes(data)
    if codec_decompress(unpack_stream(Path(args.out).read_bytes()), model) != latent:
        raise CodecError(f"verify failed: {args.out} does not decode to the input")
    bpp = stream.payload_bits / latent.num_pixels
    print(f"side_bits={stream.side_bits} latent_bits={stream.latent_bits} bpp={bpp:.6f}")
    return EXIT_OK


def cmd_decompress(args) -> int:
    model = load_model(args.model)
    latent = codec_decompress(unpack_stream(Path(args.inp).read_bytes()), model)
    write_latent(args.out, latent)
    if read_latent(args.out) != latent:
        raise CodecError(f"verify failed: {args.out}")
    print(f"wrote {args.out}")
    return EXIT_OK


def dump_nll(out_dir, name, latent, model, baseline):
    """Per-channel-per-bin code lengths (bits) of the image pmf, the default and the model's pmf."""
    from .core import floor_pmf

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    true = latent_histograms(latent)
    _, ours = model.encode_bank(latent)
    default = floor_pmf(baseline.default_bank.mass)
    with open(out / f"{name}.nll.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["channel", "bin", "value", "true_nll", "default_nll", "model_nll"])
        for c in range(true.channels):
            for i, v in enumerate(true.spec.centers):
                writer.writerow([c, i, int(v), -np.log2(floor_pmf(true.mass[c])[i]),
                                 -np.log2(default[c, i]), -np.log2(ours.mass[c, i])])


def cmd_analyze_gap(args) -> int:
    baseline = load_model(args.baseline)
    if not isinstance(baseline, StaticModel):
        raise UsageError("--baseline must be a static model")
    model = load_model(args.model)
    names, latents = load_latents(args.data)
    report = gap_report(latents, model, baseline, names)
    Path(args.out).write_text(report.to_csv())
    if args.dump_nll:
        for name, latent in zip(names, latents):
            dump_nll(args.dump_nll, name, latent, model, baseline)
    print(report.to_table())
    return EXIT_OK


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distcodec", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
        return p

    p = with_config(sub.add_parser("gen-data", help="write a synthetic latent corpus"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = with_config(sub.add_parser("fit", help="fit a static or GMM model"))
    p.add_argument("--kind", choices=["static", "gmm"])
    p.add_argument("--components", type=int, help="GMM components (overrides model.K_g)")
    p.add_argument("--data", help="directory of .ltf latents (static only)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = with_config(sub.add_parser("train", help="train the learned distribution compressor"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="loss-curve CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="compress one latent")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decompress one stream")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("analyze-gap", help="potential vs achieved savings over a corpus")
    p.add_argument("--baseline", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-nll", metavar="DIR", help="write per-image NLL grids as CSV")
    p.set_defaults(func=cmd_analyze_gap)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "fit" and (args.kind or "") == "static" and not args.data:
        parser.error("fit --kind static needs --data")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Diverged as exc:
        print(f"Diverged: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (CodecError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
