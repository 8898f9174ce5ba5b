"""Experiment pipeline: vocab -> triplets -> train -> decode -> evaluate, plus context probes.

A run directory holds every artifact needed to recompute its report::

    spec.json          resolved ExperimentSpec
    vocab.bpe          subword vocabulary
    checkpoint.npz     best checkpoint (see models.save_checkpoint)
    history.jsonl      one record per epoch
    test.src/.ref/.hyp detokenized source, reference and hypotheses
    test.docs          document sizes of the evaluated sentences
    test.recon         greedy reconstructions (cascade models)
    report.json/.txt   EvalReport and its aligned-text rendering
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import evaluation as ev
from .blocks import BlockConfig
from .bpe import EOS, SubwordVocab, bpe_train
from .data import ContextMode, CorpusError, build_triplets, load_corpus_prefix, make_random_context, with_context
from .inference import reconstruct, translate
from .models import Model, ModelConfig, load_checkpoint, save_checkpoint
from .training import NumericError, TrainConfig, train

log = logging.getLogger(__name__)


class ExperimentError(Exception):
    exit_code = 1

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class ConfigError(ExperimentError):
    exit_code = 1


class DataError(ExperimentError):
    exit_code = 2


class NumericFailure(ExperimentError):
    exit_code = 3


@dataclass
class EvalToggles:
    s_bleu: bool = True
    d_bleu: bool = True
    recon_bleu: bool = True
    apt: bool = False
    pronouns_src: str | None = None
    pronouns_tgt: str | None = None
    pronoun_classes: str | None = None
    baseline_hyps: str | None = None
    bootstrap_n: int = 1000


@dataclass
class ExperimentSpec:
    arch: str = "cascade_mtl"
    context_mode: str = "P2_SRC"
    aux_objective: str = "re_src"
    train_data: str = ""
    valid_data: str = ""
    test_data: str = ""
    vocab_path: str | None = None
    vocab_size: int = 32000
    train: TrainConfig = field(default_factory=TrainConfig)
    block: dict = field(default_factory=dict)
    eval: EvalToggles = field(default_factory=EvalToggles)
    beam: int = 4
    length_penalty: float = 0.6
    max_src: int = 140
    max_concat: int = 160
    min_position_in_doc: int = 0
    output_dir: str = "runs/experiment"
    name: str = ""
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if isinstance(self.eval, dict):
            self.eval = EvalToggles(**self.eval)
        self.context_mode = ContextMode.parse(self.context_mode).value
        self.train.seed = self.seed
        self.train.max_concat = self.max_concat

    @property
    def system_name(self):
        if self.name:
            return self.name
        if self.arch == "vanilla_sent":
            return "vanilla_sent"
        return f"{self.arch}:{self.context_mode}"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError("config", f"unknown spec keys: {sorted(unknown)}")
        return cls(**d)


def load_spec(path, overrides=None):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("config", str(e)) from e
    try:
        raw = parse_config_text(text, path.suffix)
    except ValueError as e:
        raise ConfigError("config", f"{path}: {e}") from e
    for key, value in (overrides or {}).items():
        set_dotted(raw, key, value)
    try:
        return ExperimentSpec.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError("config", str(e)) from e


def parse_config_text(text, suffix):
    if suffix in (".yaml", ".yml"):
        import yaml

        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ValueError(str(e)) from e
    else:
        raw = json.loads(text)
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ValueError("config must be a mapping")
    return raw


def write_spec(spec, out_dir):
    path = Path(out_dir) / "spec.json"
    path.write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def set_dotted(d, key, value):
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


# ---------------------------------------------------------------------------
# helpers


def document_sizes(triplets):
    """Sizes of consecutive runs of triplets sharing a document."""
    sizes = []
    prev = object()
    for t in triplets:
        if t.doc_index != prev:
            sizes.append(0)
            prev = t.doc_index
        sizes[-1] += 1
    return sizes


def _write_lines(path, lines):
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _read_lines(path):
    return Path(path).read_text(encoding="utf-8").split("\n")[:-1]


def format_delta(value, base):
    """``value (+d)`` or ``value (\u2212d)`` with one decimal, as in the probe tables."""
    diff = round(value, 1) - round(base, 1)
    sign = "+" if diff > 0 else ("\u2212" if diff < 0 else "")
    return f"{value:.1f} ({sign}{abs(diff):.1f})"


def _load_data(spec, vocab, prefix, mode=None):
    try:
        corpus = load_corpus_prefix(prefix)
    except (OSError, CorpusError) as e:
        raise DataError("data", f"{prefix}: {e}") from e
    try:
        triplets = build_triplets(corpus, mode or spec.context_mode, vocab, spec.max_src, spec.max_concat, seed=spec.seed)
    except ValueError as e:
        raise DataError("data", f"{prefix}: {e}") from e
    if spec.min_position_in_doc:
        triplets = [t for t in triplets if t.position_in_doc >= spec.min_position_in_doc]
    return corpus, triplets


def build_model(spec, vocab):
    block = BlockConfig(**{**spec.block, "vocab_size": len(vocab)})
    config = ModelConfig(spec.arch, block, spec.train.alpha, spec.aux_objective)
    return Model(config, seed=spec.seed)


# ---------------------------------------------------------------------------
# stages


def prepare_vocab(spec, out_dir):
    if spec.vocab_path:
        return SubwordVocab.load(spec.vocab_path)
    try:
        corpus = load_corpus_prefix(spec.train_data)
    except (OSError, CorpusError) as e:
        raise DataError("vocab", f"{spec.train_data}: {e}") from e
    vocab = bpe_train(corpus.sentences("source") + corpus.sentences("target"), spec.vocab_size)
    vocab.save(Path(out_dir) / "vocab.bpe")
    return vocab


def run_training(spec):
    """Vocab, triplets and training; writes spec, vocab, checkpoint and history."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_spec(spec, out)
    try:
        ContextMode.parse(spec.context_mode)
        vocab = prepare_vocab(spec, out)
        if spec.vocab_path:
            vocab.save(out / "vocab.bpe")
        model = build_model(spec, vocab)
        spec.block = model.cfg.to_dict()
        write_spec(spec, out)
    except ValueError as e:
        raise ConfigError("config", str(e)) from e
    _, train_t = _load_data(spec, vocab, spec.train_data)
    _, valid_t = _load_data(spec, vocab, spec.valid_data)
    try:
        result = train(model, train_t, valid_t, spec.train, out / "checkpoint.npz", out / "history.jsonl")
    except NumericError as e:
        raise NumericFailure("train", str(e)) from e
    if not (out / "checkpoint.npz").exists():
        save_checkpoint(out / "checkpoint.npz", result.model)
    return result.model, vocab


def load_run(run_dir):
    run_dir = Path(run_dir)
    try:
        spec = ExperimentSpec.from_dict(json.loads((run_dir / "spec.json").read_text(encoding="utf-8")))
        vocab = SubwordVocab.load(run_dir / "vocab.bpe")
        model, _, _ = load_checkpoint(run_dir / "checkpoint.npz")
    except (OSError, ValueError, KeyError) as e:
        raise DataError("load", str(e)) from e
    return spec, model, vocab


def decode_test(spec, model, vocab, triplets):
    return [vocab.decode(h) for h in translate(model, triplets, spec.beam, spec.length_penalty)]


def decode_run(spec, model, vocab, out_dir=None):
    """Decode the test set and write source, reference, hypothesis and document files."""
    out = Path(out_dir or spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, test_t = _load_data(spec, vocab, spec.test_data)
    _write_lines(out / "test.hyp", decode_test(spec, model, vocab, test_t))
    _write_lines(out / "test.ref", [vocab.decode(t.target) for t in test_t])
    _write_lines(out / "test.src", [vocab.decode(t.source) for t in test_t])
    _write_lines(out / "test.docs", [str(n) for n in document_sizes(test_t)])
    if spec.eval.recon_bleu and model.config.is_cascade:
        _write_lines(out / "test.recon", [vocab.decode(h) for h in reconstruct(model, test_t)])
        gold = [vocab.decode(model.cascade_inputs(t.context, t.source)[1]) for t in test_t]
        _write_lines(out / "test.recon.ref", gold)
    return out


def evaluate_files(system, out_dir, toggles=None, seed=0):
    """Build an EvalReport from the files written by :func:`decode_run` alone."""
    out = Path(out_dir)
    tog = toggles or EvalToggles()
    try:
        hyps = _read_lines(out / "test.hyp")
        refs = _read_lines(out / "test.ref")
        srcs = _read_lines(out / "test.src")
        sizes = [int(n) for n in _read_lines(out / "test.docs")]
    except (OSError, ValueError) as e:
        raise DataError("eval", str(e)) from e
    report = ev.EvalReport(system)
    try:
        if tog.s_bleu:
            report.metrics["s_bleu"] = ev.corpus_bleu(hyps, refs)
        if tog.d_bleu:
            report.metrics["d_bleu"] = ev.doc_bleu(hyps, refs, sizes)
        if tog.recon_bleu and (out / "test.recon").exists():
            report.metrics["recon_bleu"] = ev.corpus_bleu(_read_lines(out / "test.recon"), _read_lines(out / "test.recon.ref"))
        if tog.apt:
            if not tog.pronouns_src:
                raise ConfigError("eval", "APT requested without a source pronoun list")
            lists = ev.PronounLists.from_files(tog.pronouns_src, tog.pronouns_tgt, tog.pronoun_classes)
            report.metrics["apt"] = ev.apt_score(srcs, hyps, refs, lists)
        if tog.baseline_hyps:
            base = _read_lines(tog.baseline_hyps)
            report.metrics["bootstrap_p"] = ev.paired_bootstrap(hyps, base, refs, tog.bootstrap_n, seed=seed)
            report.notes["bootstrap"] = "fraction of resamples where the baseline BLEU >= this system's; ties favour the baseline"
    except OSError as e:
        raise DataError("eval", str(e)) from e
    except ValueError as e:
        raise DataError("eval", str(e)) from e
    write_report(report, out / "report")
    return report


def evaluate_run(spec, model, vocab, out_dir=None):
    out = decode_run(spec, model, vocab, out_dir)
    return evaluate_files(spec.system_name, out, spec.eval, spec.seed)


def run_experiment(spec):
    model, vocab = run_training(spec)
    return evaluate_run(spec, model, vocab)


# ---------------------------------------------------------------------------
# probes


def _require_context_model(model, what):
    if not model.config.uses_context:
        raise ConfigError(what, f"{model.config.arch} consumes no context; {what} is unsupported")


def random_contexts(corpus, triplets, vocab, seed, max_src=140):
    from .data import truncate_left

    import numpy as np

    rng = np.random.default_rng(seed)
    out = []
    for t in triplets:
        text = make_random_context(corpus, rng, current=(t.doc_index, t.position_in_doc))
        ids, _ = truncate_left(vocab.encode(text), max_src - 1)
        out.append(ids + [EOS])
    return out


def probe_random_context(run_dir, test_data=None, seed=None, out_dir=None):
    """s-BLEU with every test context replaced by two random corpus sentences, vs matched context."""
    spec, model, vocab = load_run(run_dir)
    _require_context_model(model, "probe-random")
    seed = spec.seed if seed is None else seed
    if test_data:
        spec.test_data = test_data
    out = Path(out_dir or Path(run_dir) / "probe_random")
    out.mkdir(parents=True, exist_ok=True)
    corpus, test_t = _load_data(spec, vocab, spec.test_data)
    refs = [vocab.decode(t.target) for t in test_t]
    matched = ev.corpus_bleu(decode_test(spec, model, vocab, test_t), refs)
    rand_t = with_context(test_t, random_contexts(corpus, test_t, vocab, seed, spec.max_src))
    hyps = decode_test(spec, model, vocab, rand_t)
    _write_lines(out / "test.hyp", hyps)
    _write_lines(out / "test.ref", refs)
    _write_lines(out / "test.ctx", [vocab.decode(t.context) for t in rand_t])
    score = ev.corpus_bleu(hyps, refs)
    report = ev.EvalReport(spec.system_name, {
        "s_bleu_matched": matched,
        "s_bleu_random": score,
        "delta": round(score, 1) - round(matched, 1),
        "display": format_delta(score, matched),
    }, notes={"probe": "random context", "seed": seed})
    write_report(report, out / "report")
    return report


def probe_self_context(run_dir, test_data=None, seed=None, out_dir=None):
    """s-BLEU with the current source sentence as its own context, vs the random-context run."""
    spec, model, vocab = load_run(run_dir)
    _require_context_model(model, "probe-self")
    if ContextMode.parse(spec.context_mode) not in (ContextMode.P2_SRC, ContextMode.PN_SRC):
        raise ConfigError(
            "probe-self",
            f"model trained with {spec.context_mode} context; self-context probing is limited to source-side "
            "contexts because a target-side context would need the current target sentence, which is unavailable at test time",
        )
    seed = spec.seed if seed is None else seed
    if test_data:
        spec.test_data = test_data
    out = Path(out_dir or Path(run_dir) / "probe_self")
    out.mkdir(parents=True, exist_ok=True)
    corpus, test_t = _load_data(spec, vocab, spec.test_data)
    refs = [vocab.decode(t.target) for t in test_t]
    rand_t = with_context(test_t, random_contexts(corpus, test_t, vocab, seed, spec.max_src))
    random_score = ev.corpus_bleu(decode_test(spec, model, vocab, rand_t), refs)
    self_t = with_context(test_t, [list(t.source) for t in test_t])
    hyps = decode_test(spec, model, vocab, self_t)
    _write_lines(out / "test.hyp", hyps)
    _write_lines(out / "test.ref", refs)
    score = ev.corpus_bleu(hyps, refs)
    report = ev.EvalReport(spec.system_name, {
        "s_bleu_self": score,
        "s_bleu_random": random_score,
        "delta": round(score, 1) - round(random_score, 1),
        "display": format_delta(score, random_score),
    }, notes={"probe": "self context", "seed": seed})
    write_report(report, out / "report")
    return report


# ---------------------------------------------------------------------------
# reports and tables

_COLUMNS = [
    ("s_bleu", "s-BLEU"),
    ("d_bleu", "d-BLEU"),
    ("recon_bleu", "Recon"),
    ("apt", "APT"),
    ("bootstrap_p", "p"),
    ("s_bleu_matched", "matched"),
    ("s_bleu_self", "self"),
    ("s_bleu_random", "random"),
    ("display", "probe"),
]


def _cell(key, value):
    if value is None:
        return "-"
    if isinstance(value, str):
        return value
    if key == "apt":
        return f"{value:.2f}"
    if key == "bootstrap_p":
        return f"{value:.3f}"
    return f"{value:.1f}"


def render_table(reports):
    """Aligned plain-text table, one row per report."""
    cols = [(k, h) for k, h in _COLUMNS if any(k in r.metrics for r in reports)]
    rows = [["System"] + [h for _, h in cols]]
    for r in reports:
        rows.append([r.system] + [_cell(k, r.metrics.get(k)) for k, _ in cols])
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for n, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines.append(f"BLEU signature: {ev.BLEU_SIGNATURE}")
    return "\n".join(lines) + "\n"


def write_report(report, stem):
    stem = Path(stem)
    stem.with_suffix(".json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    stem.with_suffix(".txt").write_text(render_table([report]), encoding="utf-8")


def read_report(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return ev.EvalReport(**d)
