"""The five model graphs and the checkpoint container.

All architectures expose the same interface through :class:`Model`:
``forward(batch)`` for teacher-forced training/scoring, and
``encode`` / ``decode_logits`` for incremental decoding.

Architectures
-------------
``vanilla_sent``      encoder(source) -> decoder(target)
``concat_context``    encoder(context <concat> source) -> decoder(target)
``inside_context``    encoder_s(source), encoder_c(context); each decoder layer
                      sums cross-attention over both encoders
``cascade_mtl``       encoder(context) -> intermediate decoder(source) ->
                      final decoder(target) attending to the intermediate states
``cascade_residual``  as cascade_mtl, but the final decoder attends to
                      ReLU(W [enc ; inter] + b) over the Z + S positions
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import (
    BlockConfig,
    decoder_stack,
    encoder_stack,
    init_decoder,
    init_encoder,
    init_linear,
    padding_mask,
)

ARCHITECTURES = ("vanilla_sent", "concat_context", "inside_context", "cascade_mtl", "cascade_residual")
CASCADES = ("cascade_mtl", "cascade_residual")
AUX_OBJECTIVES = ("re_src", "re_cntx")
CHECKPOINT_FORMAT = "docnmt-checkpoint"
CHECKPOINT_VERSION = 1


class UnsupportedOperation(RuntimeError):
    pass


@dataclass
class ModelConfig:
    arch: str
    block: BlockConfig
    alpha: float = 0.5
    aux_objective: str = "re_src"

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        if self.aux_objective not in AUX_OBJECTIVES:
            raise ValueError(f"unknown aux_objective {self.aux_objective!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def is_cascade(self):
        return self.arch in CASCADES

    @property
    def uses_context(self):
        return self.arch != "vanilla_sent"

    def to_dict(self):
        d = asdict(self)
        d["block"] = self.block.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["block"] = BlockConfig(**d["block"])
        return cls(**d)


@dataclass
class CascadeOutput:
    translation_logits: Tensor
    reconstruction_logits: Tensor | None = None


@dataclass
class DecodeState:
    """Everything the target-side decoder needs besides the target prefix."""

    memories: list = field(default_factory=list)  # (name, memory Tensor [B, Lk, d], key_valid [B, Lk])
    reconstruction_logits: Tensor | None = None

    def repeat(self, n):
        """Broadcast a single-example state to ``n`` hypotheses (no gradient)."""
        mems = []
        for name, mem, valid in self.memories:
            mems.append((name, Tensor(np.repeat(mem.data, n, axis=0)), np.repeat(valid, n, axis=0)))
        return DecodeState(mems, None)


class Model:
    """Configuration plus named parameters."""

    def __init__(self, config, params=None, seed=0):
        self.config = config
        self.seed = seed
        self.params = params if params is not None else init_params(config, np.random.default_rng(seed))

    @property
    def cfg(self):
        return self.config.block

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self):
        return {k: p.grad for k, p in self.params.items()}

    def copy(self):
        return Model(self.config, {k: ad.parameter(p.data.copy(), dtype=p.dtype) for k, p in self.params.items()}, self.seed)

    # -- inputs ---------------------------------------------------------------

    def cascade_inputs(self, context, source):
        """Apply the Re-Cntx role swap: the intermediate decoder then rebuilds the context."""
        if self.config.aux_objective == "re_cntx":
            return source, context
        return context, source

    # -- training / scoring ---------------------------------------------------

    def forward(self, batch, rng=None):
        arch = self.config.arch
        if arch == "vanilla_sent":
            return CascadeOutput(vanilla_forward(self.params, self.cfg, batch.source, batch.target_in, rng))
        if arch == "concat_context":
            return CascadeOutput(concat_context_forward(self.params, self.cfg, batch.concat, batch.target_in, rng))
        if arch == "inside_context":
            return CascadeOutput(inside_context_forward(self.params, self.cfg, batch.context, batch.source, batch.target_in, rng))
        enc_in, inter_seq = self.cascade_inputs(batch.context, batch.source)
        inter_in = batch.shift_right(inter_seq)
        fn = cascade_mtl_forward if arch == "cascade_mtl" else cascade_residual_forward
        return fn(self.params, self.cfg, enc_in, inter_in, batch.target_in, rng)

    # -- decoding -------------------------------------------------------------

    def encode(self, batch):
        """Run every part of the graph that does not depend on the target prefix."""
        p, cfg, arch = self.params, self.cfg, self.config.arch
        if arch == "vanilla_sent":
            mem = encoder_stack(batch.source, p, "enc", cfg)
            return DecodeState([("cross", mem, padding_mask(batch.source))])
        if arch == "concat_context":
            mem = encoder_stack(batch.concat, p, "enc", cfg)
            return DecodeState([("cross", mem, padding_mask(batch.concat))])
        if arch == "inside_context":
            src = encoder_stack(batch.source, p, "enc_src", cfg)
            ctx = encoder_stack(batch.context, p, "enc_ctx", cfg)
            return DecodeState([
                ("cross_src", src, padding_mask(batch.source)),
                ("cross_ctx", ctx, padding_mask(batch.context)),
            ])
        enc_in, inter_seq = self.cascade_inputs(batch.context, batch.source)
        inter_in = batch.shift_right(inter_seq)
        enc, hidden, recon = intermediate_forward(p, cfg, enc_in, inter_in)
        if arch == "cascade_mtl":
            return DecodeState([("cross", hidden, padding_mask(inter_in))], recon)
        mem, valid = residual_memory(p, enc, hidden, padding_mask(enc_in), padding_mask(inter_in))
        return DecodeState([("cross", mem, valid)], recon)

    def decode_logits(self, state, target_in):
        """Logits ``[B, T, V]`` for every position of the target prefix."""
        h = decoder_stack(target_in, state.memories, self.params, "dec", self.cfg)
        return output_projection(h, self.params, "dec_out")


# ---------------------------------------------------------------------------
# parameters


def init_params(config, rng):
    cfg = config.block
    params = {}
    if cfg.share_embeddings:
        params["shared.tok"] = ad.parameter(rng.normal(0.0, cfg.init_std, size=(cfg.vocab_size, cfg.d_model)))
    arch = config.arch
    if arch in ("vanilla_sent", "concat_context"):
        init_encoder(params, "enc", cfg, rng)
        init_decoder(params, "dec", cfg, rng)
    elif arch == "inside_context":
        init_encoder(params, "enc_src", cfg, rng)
        init_encoder(params, "enc_ctx", cfg, rng)
        init_decoder(params, "dec", cfg, rng, cross=("cross_src", "cross_ctx"))
    else:
        init_encoder(params, "enc", cfg, rng)
        init_decoder(params, "inter", cfg, rng)
        init_linear(params, "inter_out", cfg.d_model, cfg.vocab_size, rng, cfg.init_std)
        init_decoder(params, "dec", cfg, rng)
        if arch == "cascade_residual":
            init_linear(params, "combine", cfg.d_model, cfg.d_model, rng, cfg.init_std)
    init_linear(params, "dec_out", cfg.d_model, cfg.vocab_size, rng, cfg.init_std)
    for name, p in params.items():
        p.name = name
    return params


def output_projection(h, params, prefix):
    return h @ params[f"{prefix}.w"] + params[f"{prefix}.b"]


# ---------------------------------------------------------------------------
# forward graphs (batched; token arrays are [B, L] padded with 0)


def vanilla_forward(params, cfg, source, target_in, rng=None):
    mem = encoder_stack(source, params, "enc", cfg, rng)
    h = decoder_stack(target_in, [("cross", mem, padding_mask(source))], params, "dec", cfg, rng)
    return output_projection(h, params, "dec_out")


def concat_context_forward(params, cfg, concat_input, target_in, rng=None):
    """``concat_input`` is the already assembled ``context <concat> source`` sequence."""
    return vanilla_forward(params, cfg, concat_input, target_in, rng)


def inside_context_forward(params, cfg, context, source, target_in, rng=None):
    src = encoder_stack(source, params, "enc_src", cfg, rng)
    ctx = encoder_stack(context, params, "enc_ctx", cfg, rng)
    memories = [("cross_src", src, padding_mask(source)), ("cross_ctx", ctx, padding_mask(context))]
    h = decoder_stack(target_in, memories, params, "dec", cfg, rng)
    return output_projection(h, params, "dec_out")


def intermediate_forward(params, cfg, enc_input, inter_in, rng=None):
    """Encoder over ``enc_input`` and the teacher-forced intermediate decoder.

    Returns (encoder states, intermediate last-layer states, reconstruction logits).
    """
    enc = encoder_stack(enc_input, params, "enc", cfg, rng)
    hidden = decoder_stack(inter_in, [("cross", enc, padding_mask(enc_input))], params, "inter", cfg, rng)
    return enc, hidden, output_projection(hidden, params, "inter_out")


def cascade_mtl_forward(params, cfg, enc_input, inter_in, target_in, rng=None):
    _, hidden, recon = intermediate_forward(params, cfg, enc_input, inter_in, rng)
    h = decoder_stack(target_in, [("cross", hidden, padding_mask(inter_in))], params, "dec", cfg, rng)
    return CascadeOutput(output_projection(h, params, "dec_out"), recon)


def residual_memory(params, enc, hidden, enc_valid, inter_valid):
    """Position-wise ReLU(W x + b) over encoder states followed by intermediate states."""
    mem = ad.relu(ad.concat([enc, hidden], axis=1) @ params["combine.w"] + params["combine.b"])
    return mem, np.concatenate([enc_valid, inter_valid], axis=1)


def cascade_residual_forward(params, cfg, enc_input, inter_in, target_in, rng=None):
    enc, hidden, recon = intermediate_forward(params, cfg, enc_input, inter_in, rng)
    mem, valid = residual_memory(params, enc, hidden, padding_mask(enc_input), padding_mask(inter_in))
    h = decoder_stack(target_in, [("cross", mem, valid)], params, "dec", cfg, rng)
    return CascadeOutput(output_projection(h, params, "dec_out"), recon)


# ---------------------------------------------------------------------------
# checkpoints
#
# A checkpoint is an uncompressed ``.npz`` archive:
#   meta              0-d unicode array holding a JSON object with keys
#                     format, version, model_config, seed, train_state
#   param/<name>      parameter arrays
#   adam_m/<name>     first moments (optional)
#   adam_v/<name>     second moments (optional)


def save_checkpoint(path, model, adam_state=None, train_state=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "seed": model.seed,
        "dtype": str(next(iter(model.params.values())).dtype),
        "adam_step": adam_state.step if adam_state is not None else 0,
        "train_state": train_state or {},
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for name, p in model.params.items():
        arrays[f"param/{name}"] = p.data
    if adam_state is not None:
        for name, m in adam_state.m.items():
            arrays[f"adam_m/{name}"] = m
            arrays[f"adam_v/{name}"] = adam_state.v[name]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(model, adam_state, meta)``."""
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        config = ModelConfig.from_dict(meta["model_config"])
        params = {}
        m, v = {}, {}
        for key in z.files:
            kind, _, name = key.partition("/")
            if kind == "param":
                params[name] = ad.parameter(z[key], name=name, dtype=z[key].dtype)
            elif kind == "adam_m":
                m[name] = z[key]
            elif kind == "adam_v":
                v[name] = z[key]
    model = Model(config, params, seed=meta.get("seed", 0))
    adam_state = ad.AdamState(step=meta.get("adam_step", 0), m=m, v=v)
    return model, adam_state, meta
