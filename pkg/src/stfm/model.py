"""Encoder/decoder composition of set attention blocks into full models.

An encoder is an input embedding followed by a stack of blocks; a decoder
pools the encoded set and applies a row-wise output head.  The rFFp blocks
pair a linear projection with the scalar equivariant activation so their
dimensionality chains like every other block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import blocks as B
from . import tensor as T
from .rng import Rng
from .tensor import Parameter, Tensor

ENCODER_KINDS = ("rff", "rff_linear", "rffp-mean", "rffp-max", "sab", "isab")
POOLING_KINDS = ("mean", "sum", "max", "dotprod", "pma")


@dataclass(frozen=True)
class EncoderConfig:
    blocks: tuple[str, ...]  # e.g. ("sab", "sab") or ("isab:16", "isab:16")
    dim: int = 64
    heads: int = 4

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ValueError(
                f"bad encoder dims: dim={self.dim} heads={self.heads}")
        for b in self.blocks:
            kind, _ = _parse_block(b)
            if kind not in ENCODER_KINDS:
                raise ValueError(f"unknown encoder block {b!r}")


@dataclass(frozen=True)
class DecoderConfig:
    pooling: str = "pma:1"          # mean | sum | max | dotprod | pma:k
    post_sabs: int = 0              # SABs after PMA (requires pma pooling)
    head: tuple[int, ...] = (1,)    # FC widths; ReLU on all but the last

    def __post_init__(self):
        kind, _ = _parse_block(self.pooling)
        if kind not in POOLING_KINDS:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.post_sabs and kind != "pma":
            raise ValueError("post-pooling SABs require PMA pooling")
        if not self.head:
            raise ValueError("decoder head needs at least one layer")

    @property
    def num_outputs(self) -> int:
        kind, arg = _parse_block(self.pooling)
        return arg if kind == "pma" else 1


def _parse_block(spec: str) -> tuple[str, int]:
    """'isab:16' -> ('isab', 16); 'sab' -> ('sab', 0)."""
    if ":" in spec:
        kind, arg = spec.split(":", 1)
        return kind, int(arg)
    return spec, 0


class SetModel:
    """A permutation-invariant set-to-vectors model.

    forward() maps an n x in_dim array to a k x head[-1] tensor, where k is
    the PMA seed count (1 for the simple pooling decoders).
    """

    def __init__(self, in_dim: int, encoder: EncoderConfig,
                 decoder: DecoderConfig, seed: int | Rng = 0):
        rng = seed if isinstance(seed, Rng) else Rng(seed)
        self.in_dim = in_dim
        self.encoder = encoder
        self.decoder = decoder
        d, h = encoder.dim, encoder.heads

        self.embed_w = Parameter("embed.w", B.xavier_uniform(rng, in_dim, d))
        self.embed_b = Parameter("embed.b", np.zeros((1, d)))

        self.enc_blocks: list[tuple[str, object]] = []
        for i, spec in enumerate(encoder.blocks):
            kind, arg = _parse_block(spec)
            name = f"enc{i}.{kind}"
            if kind in ("rff", "rff_linear"):
                p = (Parameter(f"{name}.w", B.xavier_uniform(rng, d, d)),
                     Parameter(f"{name}.b", np.zeros((1, d))))
            elif kind in ("rffp-mean", "rffp-max"):
                p = (Parameter(f"{name}.w", B.xavier_uniform(rng, d, d)),
                     Parameter(f"{name}.b", np.zeros((1, d))),
                     B.RFFPParams.create(name))
            elif kind == "sab":
                p = B.MABParams.create(name, d, h, rng)
            elif kind == "isab":
                p = B.ISABParams.create(name, d, h, arg, rng)
            self.enc_blocks.append((spec, p))

        kind, arg = _parse_block(decoder.pooling)
        self.pool_params: object = None
        if kind == "pma":
            self.pool_params = B.PMAParams.create("dec.pma", d, h, arg, rng)
        elif kind == "dotprod":
            self.pool_params = Parameter("dec.dotprod.w", np.zeros((1, d)))
        self.post_sabs = [B.MABParams.create(f"dec.sab{i}", d, h, rng)
                          for i in range(decoder.post_sabs)]

        self.head_layers: list[tuple[Parameter, Parameter]] = []
        prev = d
        for i, w in enumerate(decoder.head):
            self.head_layers.append(
                (Parameter(f"dec.head{i}.w", B.xavier_uniform(rng, prev, w)),
                 Parameter(f"dec.head{i}.b", np.zeros((1, w)))))
            prev = w

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        out = [self.embed_w, self.embed_b]
        for spec, p in self.enc_blocks:
            kind, _ = _parse_block(spec)
            if kind in ("rff", "rff_linear"):
                out += list(p)
            elif kind in ("rffp-mean", "rffp-max"):
                out += [p[0], p[1], *p[2].parameters()]
            else:
                out += p.parameters()
        if isinstance(self.pool_params, B.PMAParams):
            out += self.pool_params.parameters()
        elif isinstance(self.pool_params, Parameter):
            out.append(self.pool_params)
        for s in self.post_sabs:
            out += s.parameters()
        for w, b in self.head_layers:
            out += [w, b]
        names = [p.name for p in out]
        assert len(names) == len(set(names)), "duplicate parameter names"
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- forward ------------------------------------------------------------

    def encode(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        z = T.add(T.matmul(x, self.embed_w), T.broadcast_row(self.embed_b, n))
        for spec, p in self.enc_blocks:
            kind, _ = _parse_block(spec)
            if kind == "rff":
                z = B._rff(z, p[0], p[1])
            elif kind == "rff_linear":
                z = T.add(T.matmul(z, p[0]), T.broadcast_row(p[1], n))
            elif kind in ("rffp-mean", "rffp-max"):
                lin = T.add(T.matmul(z, p[0]), T.broadcast_row(p[1], n))
                z = B.rffp_layer(lin, p[2], kind.split("-")[1])
            elif kind == "sab":
                z = B.sab(z, p)
            elif kind == "isab":
                z = B.isab(z, p)
        return z

    def decode(self, z: Tensor) -> Tensor:
        kind, _ = _parse_block(self.decoder.pooling)
        if kind == "mean":
            pooled = T.mean_rows(z)
        elif kind == "sum":
            pooled = T.sum_rows(z)
        elif kind == "max":
            pooled = T.max_rows(z)
        elif kind == "dotprod":
            pooled = B.dotprod_pool(z, self.pool_params)
        else:
            pooled = B.pma(z, self.pool_params)
            for s in self.post_sabs:
                pooled = B.sab(pooled, s)
        out = pooled
        last = len(self.head_layers) - 1
        for i, (w, b) in enumerate(self.head_layers):
            out = T.add(T.matmul(out, w), T.broadcast_row(b, out.shape[0]))
            if i != last:
                out = T.relu(out)
        return out

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.in_dim:
            raise T.ShapeError(
                f"model expects n x {self.in_dim} input, got {x.shape}")
        return self.decode(self.encode(x))

    __call__ = forward

    # -- config (de)serialization ------------------------------------------

    def config_dict(self) -> dict[str, str]:
        return {
            "in_dim": str(self.in_dim),
            "dim": str(self.encoder.dim),
            "heads": str(self.encoder.heads),
            "encoder": ",".join(self.encoder.blocks),
            "pooling": self.decoder.pooling,
            "post_sabs": str(self.decoder.post_sabs),
            "head": ",".join(str(w) for w in self.decoder.head),
        }

    def config_text(self) -> str:
        d = self.config_dict()
        return "".join(f"{k} = {d[k]}\n" for k in sorted(d))


def model_from_config_text(text: str, seed: int | Rng = 0) -> SetModel:
    kv: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        kv[k.strip()] = v.strip()
    required = {"in_dim", "dim", "heads", "encoder", "pooling", "post_sabs", "head"}
    missing = required - kv.keys()
    if missing:
        raise ValueError(f"model config missing key {sorted(missing)[0]!r}")
    unknown = kv.keys() - required
    if unknown:
        raise ValueError(f"model config has unknown key {sorted(unknown)[0]!r}")
    enc = EncoderConfig(blocks=tuple(kv["encoder"].split(",")),
                        dim=int(kv["dim"]), heads=int(kv["heads"]))
    dec = DecoderConfig(pooling=kv["pooling"], post_sabs=int(kv["post_sabs"]),
                        head=tuple(int(w) for w in kv["head"].split(",")))
    return SetModel(int(kv["in_dim"]), enc, dec, seed)
