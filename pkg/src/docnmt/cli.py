"""``docnmt`` command line.

Exit codes: 0 success, 1 config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .bpe import bpe_train
from .data import CorpusError, load_corpus_prefix

log = logging.getLogger("docnmt")


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _overrides(args):
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ex.ConfigError("config", f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value)
    for flag, key in (("arch", "arch"), ("context_mode", "context_mode"), ("output_dir", "output_dir"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def _spec(args):
    if args.config:
        return ex.load_spec(args.config, _overrides(args))
    raw = {}
    for key, value in _overrides(args).items():
        ex.set_dotted(raw, key, value)
    try:
        return ex.ExperimentSpec.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise ex.ConfigError("config", str(e)) from e


def _emit(reports, fmt):
    if fmt == "json":
        for r in reports:
            print(json.dumps(r.to_dict(), sort_keys=True))
    else:
        sys.stdout.write(ex.render_table(reports))


# ---------------------------------------------------------------------------
# subcommands


def cmd_bpe_train(args):
    texts = []
    for prefix in args.corpus:
        try:
            corpus = load_corpus_prefix(prefix)
        except (OSError, CorpusError) as e:
            raise ex.DataError("bpe-train", f"{prefix}: {e}") from e
        texts += corpus.sentences("source") + corpus.sentences("target")
    for path in args.text or []:
        try:
            texts += Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise ex.DataError("bpe-train", str(e)) from e
    if not texts:
        raise ex.ConfigError("bpe-train", "no training text given (use --corpus or --text)")
    try:
        vocab = bpe_train(texts, args.size)
    except ValueError as e:
        raise ex.ConfigError("bpe-train", str(e)) from e
    vocab.save(args.output)
    print(f"wrote {len(vocab)} subwords to {args.output}")


def cmd_train(args):
    spec = _spec(args)
    ex.run_training(spec)
    print(f"trained {spec.system_name}; artifacts in {spec.output_dir}")


def cmd_run(args):
    spec = _spec(args)
    _emit([ex.run_experiment(spec)], args.format)


def cmd_decode(args):
    spec, model, vocab = ex.load_run(args.run_dir)
    if args.test:
        spec.test_data = args.test
    out = ex.decode_run(spec, model, vocab, args.out or args.run_dir)
    print(f"wrote hypotheses to {Path(out) / 'test.hyp'}")


def cmd_eval(args):
    run_dir = Path(args.run_dir)
    toggles = ex.EvalToggles()
    system = args.system
    seed = args.seed or 0
    if (run_dir / "spec.json").exists():
        spec = ex.ExperimentSpec.from_dict(json.loads((run_dir / "spec.json").read_text(encoding="utf-8")))
        toggles, system = spec.eval, system or spec.system_name
        seed = spec.seed if args.seed is None else args.seed
    if args.baseline:
        toggles.baseline_hyps = args.baseline
    if args.bootstrap_n:
        toggles.bootstrap_n = args.bootstrap_n
    if args.pronouns_src:
        toggles.apt = True
        toggles.pronouns_src = args.pronouns_src
        toggles.pronouns_tgt = args.pronouns_tgt
        toggles.pronoun_classes = args.pronoun_classes
    _emit([ex.evaluate_files(system or run_dir.name, run_dir, toggles, seed)], args.format)


def cmd_probe_random(args):
    _emit([ex.probe_random_context(args.run_dir, args.test, args.seed, args.out)], args.format)


def cmd_probe_self(args):
    _emit([ex.probe_self_context(args.run_dir, args.test, args.seed, args.out)], args.format)


def cmd_table(args):
    try:
        reports = [ex.read_report(p) for p in args.reports]
    except (OSError, ValueError, TypeError) as e:
        raise ex.DataError("table", str(e)) from e
    _emit(reports, args.format)


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="docnmt", description="Document-level NMT experiments on CPU.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def spec_args(p):
        p.add_argument("--config", help="JSON or YAML ExperimentSpec")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a spec field (dotted keys, JSON values)")
        p.add_argument("--arch")
        p.add_argument("--context-mode", dest="context_mode")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--seed", type=int)

    def fmt_arg(p):
        p.add_argument("--format", choices=("text", "json"), default="text")

    p = sub.add_parser("bpe-train", help="learn a subword vocabulary")
    p.add_argument("--corpus", action="append", default=[], help="corpus prefix (.src/.tgt[/.docs])")
    p.add_argument("--text", action="append", help="plain text file, one sentence per line")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_bpe_train)

    p = sub.add_parser("train", help="build vocab and triplets, then train")
    spec_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="train, decode the test set and evaluate")
    spec_args(p)
    fmt_arg(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("decode", help="translate the test set with a trained run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--test", help="corpus prefix (defaults to the run's test set)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score the hypothesis files of a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--system")
    p.add_argument("--baseline", help="baseline hypotheses for paired bootstrap")
    p.add_argument("--bootstrap-n", type=int)
    p.add_argument("--pronouns-src")
    p.add_argument("--pronouns-tgt")
    p.add_argument("--pronoun-classes")
    p.add_argument("--seed", type=int)
    fmt_arg(p)
    p.set_defaults(func=cmd_eval)

    for name, func, text in (
        ("probe-random", cmd_probe_random, "decode with random contexts"),
        ("probe-self", cmd_probe_self, "decode with the source as its own context"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--run-dir", required=True)
        p.add_argument("--test")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        fmt_arg(p)
        p.set_defaults(func=func)

    p = sub.add_parser("table", help="render report.json files as one table")
    p.add_argument("reports", nargs="+")
    fmt_arg(p)
    p.set_defaults(func=cmd_table)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ex.ExperimentError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FloatingPointError as e:
        print(f"error: [numeric] {e}", file=sys.stderr)
        return 3
    except CorpusError as e:
        print(f"error: [data] {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
