"""Command-line front end.

Subcommands: extract | gen | fit | eval | transfer | report.  Options may
come from a TOML config file (sections per module); explicit flags
override file values.  Every output artifact embeds the effective config
and seed, and reruns with identical config and seed are byte-identical.

Exit codes: 0 success, 1 usage, 2 data/format error, 3 network error.
"""

from __future__ import annotations

import argparse
import json
import sys

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import requests

from . import __version__
from .benchmark import (
    ALL_SUBSETS,
    DEFAULT_SIGMA,
    UnknownSubsetError,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .compose import WeightTriplet, load_triplet, save_triplet, transfer_triplet
from .encoder import Encoder, EncoderConfig, EncoderConfigError, init_encoder
from .evaluation import (
    EvalMode,
    EvalSettings,
    evaluate,
    format_markdown_table,
    read_report_csv,
    write_report_csv,
)
from .extraction import (
    ExtractionTransportError,
    LlmClientConfig,
    ReplyFormatError,
    default_lexicon,
    default_prompt,
    extract_llm,
    extract_rule_based,
    load_lexicon,
)
from .fitting import FitConfig, FitError, fit, write_trace_csv
from .masks import RestrictAxis
from .tokens import Flavor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NETWORK = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as f:
        return tomllib.load(f)


def _merged(section: dict, args: argparse.Namespace, names: dict) -> dict:
    """File values overlaid with explicitly given flags."""
    out = dict(section)
    for key, attr in names.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    return out


def _encoder_config(file_cfg: dict, args, fallback: dict | None = None) -> EncoderConfig:
    section = dict(fallback or {})
    section.update(file_cfg.get("encoder", {}))
    section = _merged(section, args, {
        "flavor": "flavor", "d_model": "d_model", "n_layers": "n_layers",
        "n_heads": "n_heads", "seq_len": "seq_len", "seed": "encoder_seed",
    })
    defaults = {"flavor": "causal", "d_model": 32, "n_layers": 2, "n_heads": 4,
                "seq_len": 16, "seed": 0}
    defaults.update(section)
    return EncoderConfig(
        flavor=Flavor(defaults["flavor"]),
        d_model=int(defaults["d_model"]),
        n_layers=int(defaults["n_layers"]),
        n_heads=int(defaults["n_heads"]),
        seq_len=int(defaults["seq_len"]),
        seed=int(defaults["seed"]),
    )


def _add_encoder_flags(parser):
    parser.add_argument("--flavor", choices=[f.value for f in Flavor])
    parser.add_argument("--d-model", dest="d_model", type=int)
    parser.add_argument("--n-layers", dest="n_layers", type=int)
    parser.add_argument("--n-heads", dest="n_heads", type=int)
    parser.add_argument("--seq-len", dest="seq_len", type=int)
    parser.add_argument("--encoder-seed", dest="encoder_seed", type=int)


def _provenance(command: str, seed: int, **sections) -> dict:
    return {
        "package": f"attrilight {__version__}",
        "command": command,
        "seed": seed,
        **sections,
    }


def _seed(file_cfg: dict, args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(file_cfg.get("seed", 0))


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_extract(args, file_cfg) -> int:
    if args.backend == "lexicon":
        lexicon = load_lexicon(args.lexicon) if args.lexicon else default_lexicon()
        attrs = extract_rule_based(args.caption, lexicon)
    else:
        section = _merged(file_cfg.get("llm", {}), args, {
            "endpoint_url": "endpoint", "model_name": "model",
            "timeout": "timeout", "max_retries": "max_retries",
            "temperature": "temperature",
        })
        if "endpoint_url" not in section:
            print("error: llm backend needs --endpoint or [llm] config",
                  file=sys.stderr)
            return EXIT_USAGE
        cfg = LlmClientConfig(
            endpoint_url=section["endpoint_url"],
            model_name=section.get("model_name", "default"),
            timeout=float(section.get("timeout", 30.0)),
            max_retries=int(section.get("max_retries", 2)),
            temperature=float(section.get("temperature", 0.0)),
        )
        attrs = extract_llm(args.caption, default_prompt(), cfg)
    print(attrs.format())
    return EXIT_OK


def cmd_gen(args, file_cfg) -> int:
    seed = _seed(file_cfg, args)
    enc_config = _encoder_config(file_cfg, args)
    section = _merged(file_cfg.get("dataset", {}), args, {
        "sigma": "sigma", "objects_per_instance": "objects_per_instance",
    })
    sigma = float(section.get("sigma", DEFAULT_SIGMA))
    objects_per_instance = int(section.get("objects_per_instance", 2))

    enc = init_encoder(enc_config)
    instances = generate_dataset(args.subset, args.n, seed, enc, sigma=sigma,
                                 objects_per_instance=objects_per_instance)
    provenance = _provenance(
        "gen", seed,
        subset=args.subset.lower(), n_instances=args.n, sigma=sigma,
        objects_per_instance=objects_per_instance, encoder=enc_config.to_dict(),
    )
    save_dataset(instances, args.out, provenance)
    print(f"wrote {len(instances)} instances to {args.out}")
    return EXIT_OK


def _load_with_encoder(args, file_cfg):
    """Open a dataset; the encoder comes from its provenance unless
    flags/config override (which must then match the file)."""
    instances, provenance = load_dataset(args.dataset)
    recorded = provenance.get("encoder")
    if recorded is None:
        raise ValueError("dataset file lacks encoder provenance")
    enc_config = _encoder_config(file_cfg, args, fallback=recorded)
    enc = init_encoder(enc_config)
    instances, provenance = load_dataset(args.dataset, enc)
    return instances, provenance, enc


def cmd_fit(args, file_cfg) -> int:
    seed = _seed(file_cfg, args)
    instances, data_prov, enc = _load_with_encoder(args, file_cfg)
    section = _merged(file_cfg.get("fit", {}), args, {
        "learning_rate": "lr", "epochs": "epochs", "l2": "l2",
    })
    init = WeightTriplet.identity()
    if args.init is not None:
        parts = [float(x) for x in args.init.split(",")]
        if len(parts) != 3:
            raise ValueError("--init expects 'w_global,w_attri,bias'")
        init = WeightTriplet(*parts)
    cfg = FitConfig(
        learning_rate=float(section.get("learning_rate", 1e-2)),
        epochs=int(section.get("epochs", 200)),
        init=init,
        seed=seed,
        l2=float(section.get("l2", 0.0)),
    )
    axis = RestrictAxis(args.restrict_axis) if args.restrict_axis else RestrictAxis.QUERIES
    extractor = _lexicon_extractor(args)
    trace = fit(instances, enc, extractor, cfg, restrict_axis=axis)
    provenance = _provenance(
        "fit", seed,
        dataset=data_prov, learning_rate=cfg.learning_rate, epochs=cfg.epochs,
        l2=cfg.l2, init=cfg.init.to_dict(), restrict_axis=axis.value,
        encoder=enc.config.to_dict(),
    )
    save_triplet(trace.final, args.out, source_model=enc.config.flavor.value,
                 provenance=provenance)
    if args.trace:
        write_trace_csv(trace, args.trace, provenance)
    print(f"final loss {trace.losses[-1]:.6f}; "
          f"triplet ({trace.final.w_global:.4f}, {trace.final.w_attri:.4f}, "
          f"{trace.final.bias:.4f}) written to {args.out}")
    return EXIT_OK


def _lexicon_extractor(args):
    lexicon = load_lexicon(args.lexicon) if getattr(args, "lexicon", None) \
        else default_lexicon()
    return lambda caption: extract_rule_based(caption, lexicon)


def cmd_eval(args, file_cfg) -> int:
    seed = _seed(file_cfg, args)
    instances, data_prov, enc = _load_with_encoder(args, file_cfg)
    section = _merged(file_cfg.get("eval", {}), args, {
        "iou_thr": "iou_thr", "nms_iou": "nms_iou", "n_proposals": "n_proposals",
        "jitter": "jitter", "restrict_axis": "restrict_axis",
        "n_workers": "workers",
    })
    settings = EvalSettings(
        iou_thr=float(section.get("iou_thr", 0.5)),
        nms_iou=float(section.get("nms_iou", 0.5)),
        n_proposals=int(section.get("n_proposals", 3)),
        jitter=float(section.get("jitter", 0.08)),
        seed=seed,
        restrict_axis=RestrictAxis(section.get("restrict_axis", "queries")),
        n_workers=int(section.get("n_workers", 1)),
    )
    triplet = load_triplet(args.triplet) if args.triplet else WeightTriplet.identity()
    mode = EvalMode(args.mode)
    extractor = _lexicon_extractor(args)
    report = evaluate(instances, enc, extractor, triplet, mode, settings)
    provenance = _provenance(
        "eval", seed,
        dataset=data_prov, mode=mode.value, triplet=triplet.to_dict(),
        iou_thr=settings.iou_thr, nms_iou=settings.nms_iou,
        n_proposals=settings.n_proposals, jitter=settings.jitter,
        restrict_axis=settings.restrict_axis.value, encoder=enc.config.to_dict(),
    )
    write_report_csv([report], args.out, provenance)
    if args.markdown:
        with open(args.markdown, "w", encoding="utf-8") as f:
            f.write(f"<!-- provenance: {json.dumps(provenance, sort_keys=True)} -->\n")
            f.write(format_markdown_table([report]))
    for subset, value in report.per_subset.items():
        print(f"{subset}: mAP {value:.4f}")
    print(f"average: {report.average:.4f}")
    return EXIT_OK


def cmd_transfer(args, file_cfg) -> int:
    triplet = load_triplet(args.input)
    transferred = transfer_triplet(triplet)
    provenance = _provenance("transfer", 0, source=str(args.input),
                             original=triplet.to_dict())
    save_triplet(transferred, args.out, provenance=provenance)
    print(f"wrote bias-zeroed triplet to {args.out}")
    return EXIT_OK


def cmd_report(args, file_cfg) -> int:
    reports = []
    for path in args.inputs:
        reports.extend(read_report_csv(path))
    if not reports:
        raise ValueError("no report rows found in inputs")
    table = format_markdown_table(reports)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(table)
    else:
        print(table, end="")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="attrilight",
                     description="attribute-highlighted text embeddings and "
                                 "the synthetic detection benchmark")
    parser.add_argument("--config", help="TOML config file; flags override it")
    parser.add_argument("--seed", type=int, help="global seed (default 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract attribute words from a caption")
    p.add_argument("caption")
    p.add_argument("--backend", choices=["lexicon", "llm"], default="lexicon")
    p.add_argument("--lexicon", help="word<TAB>type lexicon file")
    p.add_argument("--endpoint", help="chat-completion endpoint URL")
    p.add_argument("--model", help="model name sent to the endpoint")
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--temperature", type=float)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("gen", help="generate a synthetic benchmark subset")
    p.add_argument("--subset", required=True,
                   help=f"one of {', '.join(ALL_SUBSETS)}")
    p.add_argument("-n", type=int, required=True, help="number of instances")
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--objects-per-instance", dest="objects_per_instance", type=int)
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="fit the composition triplet on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output triplet JSON")
    p.add_argument("--trace", help="output per-epoch trace CSV")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--init", help="initial 'w_global,w_attri,bias' (default 1,0,0)")
    p.add_argument("--restrict-axis", dest="restrict_axis",
                   choices=[a.value for a in RestrictAxis])
    p.add_argument("--lexicon")
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluate a dataset under one mode")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=[m.value for m in EvalMode], required=True)
    p.add_argument("--triplet", help="triplet JSON (default identity 1,0,0)")
    p.add_argument("--out", required=True, help="output report CSV")
    p.add_argument("--markdown", help="also write a markdown table")
    p.add_argument("--iou-thr", dest="iou_thr", type=float)
    p.add_argument("--nms-iou", dest="nms_iou", type=float)
    p.add_argument("--n-proposals", dest="n_proposals", type=int)
    p.add_argument("--jitter", type=float)
    p.add_argument("--restrict-axis", dest="restrict_axis",
                   choices=[a.value for a in RestrictAxis])
    p.add_argument("--workers", type=int)
    p.add_argument("--lexicon")
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="zero a triplet's bias for reuse "
                                        "on another encoder")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("report", help="render report CSVs as a markdown table")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        file_cfg = _load_config_file(args.config)
        return args.func(args, file_cfg)
    except (ExtractionTransportError, requests.RequestException) as exc:
        print(f"network error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except (ReplyFormatError, UnknownSubsetError, EncoderConfigError, FitError,
            json.JSONDecodeError, tomllib.TOMLDecodeError, ValueError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
