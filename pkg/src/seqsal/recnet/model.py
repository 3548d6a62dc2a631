"""Toy-scale encoder / multi-decoder saliency network with recursive supervision heads.

Layout (all convolutions 3x3, "CBR" = conv + batch norm + ReLU):

* encoder: five stages, each a 2x2 average-pool followed by a CBR; the
  output of every stage is tapped, giving features at 1/2 .. 1/32 scale;
* decoders: decoder k upsamples tap k back to full resolution with k+1
  (bilinear x2 + CBR) blocks;
* projection P: CBR over the concatenated decoder outputs, giving X;
* base head: conv X -> 4 saliency maps;
* recurrent block RB: three CBRs over concat(X, state);
* hidden-state accumulator HSAB: three CBRs over concat(h_t, k_{t-1});
* auxiliary head ASB: conv hidden -> 1 map;
* recursive projection P_R: CBR + conv hidden -> 4 saliency maps.

The four saliency maps are range-normalized to [0, 1] per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import tensor as tn
from .tensor import BatchNormState, Tensor


class NetMode(str, Enum):
    BASE = "base"
    INCREMENTAL = "incremental"
    NON_INCREMENTAL = "non-incremental"


@dataclass(frozen=True)
class ToyConfig:
    encoder_stages: tuple[int, ...] = (8, 16, 24, 32, 40)
    decoder_channels: int = 8
    X_channels: int = 16
    hidden_channels: int = 8
    T: int = 3
    mode: NetMode = NetMode.BASE
    seed: int = 0
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "encoder_stages", tuple(self.encoder_stages))
        object.__setattr__(self, "mode", NetMode(self.mode))
        if len(self.encoder_stages) != 5:
            raise ValueError(f"the encoder has exactly 5 stages, got {len(self.encoder_stages)}")
        if self.mode is NetMode.INCREMENTAL and self.T < 2:
            raise ValueError("incremental rollout needs T >= 2")
        if self.mode is NetMode.NON_INCREMENTAL and self.T < 1:
            raise ValueError("non-incremental rollout needs T >= 1")


@dataclass
class Output:
    X: Tensor
    S: list[Tensor]
    O: list[Tensor] = field(default_factory=list)


class ToyNet:
    """Parameters live in ``self.params`` (name -> Tensor) and batch-norm
    running statistics in ``self.bn``; both are filled deterministically
    from ``cfg.seed``."""

    def __init__(self, cfg: ToyConfig = ToyConfig()):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}
        self.training = False
        self._rng = np.random.default_rng(cfg.seed)

        widths = cfg.encoder_stages
        c_in = cfg.in_channels
        for k, w in enumerate(widths):
            self._cbr(f"enc{k}", c_in, w)
            c_in = w
        D = cfg.decoder_channels
        for k, w in enumerate(widths):
            c = w
            for j in range(k + 1):
                self._cbr(f"dec{k}.up{j}", c, D)
                c = D
        self._cbr("P", 5 * D, cfg.X_channels)
        Hc = cfg.hidden_channels
        if cfg.mode is NetMode.BASE:
            self._conv("head", cfg.X_channels, 4)
        else:
            self._cbr("RB.0", cfg.X_channels + Hc, Hc)
            self._cbr("RB.1", Hc, Hc)
            self._cbr("RB.2", Hc, Hc)
            if cfg.mode is NetMode.NON_INCREMENTAL:
                self._cbr("HSAB.0", 2 * Hc, Hc)
                self._cbr("HSAB.1", Hc, Hc)
                self._cbr("HSAB.2", Hc, Hc)
            self._conv("ASB", Hc, 1)
            self._cbr("PR.0", Hc, Hc)
            self._conv("PR.1", Hc, 4)
        del self._rng

    # construction ---------------------------------------------------------
    def _conv(self, name, c_in, c_out):
        bound = 1.0 / np.sqrt(c_in * 9)
        self.params[f"{name}.w"] = Tensor(
            self._rng.uniform(-bound, bound, (c_out, c_in, 3, 3)), True, f"{name}.w")
        self.params[f"{name}.b"] = Tensor(self._rng.uniform(-bound, bound, c_out), True, f"{name}.b")

    def _cbr(self, name, c_in, c_out):
        self._conv(f"{name}.conv", c_in, c_out)
        self.params[f"{name}.bn.g"] = Tensor(np.ones(c_out), True, f"{name}.bn.g")
        self.params[f"{name}.bn.b"] = Tensor(np.zeros(c_out), True, f"{name}.bn.b")
        self.bn[name] = BatchNormState(c_out)

    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def train(self, flag: bool = True) -> ToyNet:
        self.training = flag
        return self

    def eval(self) -> ToyNet:
        return self.train(False)

    # blocks ---------------------------------------------------------------
    def conv(self, name, x) -> Tensor:
        return tn.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def cbr(self, name, x) -> Tensor:
        y = self.conv(f"{name}.conv", x)
        y = tn.batch_norm(y, self.params[f"{name}.bn.g"], self.params[f"{name}.bn.b"],
                          self.bn[name], self.training)
        return tn.relu(y)

    def encode(self, image) -> list[Tensor]:
        x = tn.as_tensor(image)
        h, w = x.shape[2:]
        if h % 32 or w % 32:
            raise ValueError(f"image height and width must be divisible by 32, got {h}x{w}")
        taps = []
        for k in range(5):
            x = self.cbr(f"enc{k}", tn.avg_pool2x(x))
            taps.append(x)
        return taps

    def decode(self, taps) -> Tensor:
        outs = []
        for k, x in enumerate(taps):
            for j in range(k + 1):
                x = self.cbr(f"dec{k}.up{j}", tn.upsample2x(x))
            outs.append(x)
        return tn.concat(outs, axis=1)

    @staticmethod
    def saliency_maps(z: Tensor) -> list[Tensor]:
        """Split a (N, 4, H, W) tensor into four range-normalized (N, 1, H, W) maps."""
        lo = tn.amin(z, axis=(2, 3), keepdims=True)
        hi = tn.amax(z, axis=(2, 3), keepdims=True)
        s = (z - lo) / (hi - lo + 1e-12)
        return [tn.take(s, c, axis=1) for c in range(4)]

    def features(self, image) -> Tensor:
        """Intermediate map X from the projection block P."""
        return self.cbr("P", self.decode(self.encode(image)))

    def base_forward(self, image) -> tuple[Tensor, list[Tensor]]:
        if self.cfg.mode is not NetMode.BASE:
            raise ValueError("base_forward needs a model built with mode='base'")
        X = self.features(image)
        return X, self.saliency_maps(self.conv("head", X))

    def rb_step(self, X, state) -> Tensor:
        X, state = tn.as_tensor(X), tn.as_tensor(state)
        if X.shape[0] != state.shape[0] or X.shape[2:] != state.shape[2:]:
            raise ValueError(f"RB: X {X.shape} and state {state.shape} are not aligned")
        y = tn.concat([X, state], axis=1)
        for i in range(3):
            y = self.cbr(f"RB.{i}", y)
        return y

    def hsab_step(self, h, k_prev) -> Tensor:
        h, k_prev = tn.as_tensor(h), tn.as_tensor(k_prev)
        if h.shape != k_prev.shape:
            raise ValueError(f"HSAB: h {h.shape} and k {k_prev.shape} differ")
        y = tn.concat([h, k_prev], axis=1)
        for i in range(3):
            y = self.cbr(f"HSAB.{i}", y)
        return y

    def asb(self, h) -> Tensor:
        return self.conv("ASB", h)

    def project_recursive(self, state) -> list[Tensor]:
        return self.saliency_maps(self.conv("PR.1", self.cbr("PR.0", state)))

    def _zero_state(self, X) -> Tensor:
        n, _, h, w = X.shape
        return Tensor(np.zeros((n, self.cfg.hidden_channels, h, w)))

    def rollout_incremental(self, X) -> tuple[list[Tensor], list[Tensor]]:
        """h_t = RB(X, h_{t-1}) from h_0 = 0; o_t = ASB(h_t) for t < T; S = P_R(h_T)."""
        T = self.cfg.T
        if T < 2:
            raise ValueError("incremental rollout needs T >= 2")
        X = tn.as_tensor(X)
        h = self._zero_state(X)
        O = []
        for t in range(1, T + 1):
            h = self.rb_step(X, h)
            if t < T:
                O.append(self.asb(h))
        return O, self.project_recursive(h)

    def rollout_nonincremental(self, X) -> tuple[list[Tensor], list[Tensor]]:
        """h_t = RB(X, k_{t-1}); k_t = HSAB(h_t, k_{t-1}); o_t = ASB(h_t) for all t; S = P_R(k_T)."""
        T = self.cfg.T
        if T < 1:
            raise ValueError("non-incremental rollout needs T >= 1")
        X = tn.as_tensor(X)
        k = self._zero_state(X)
        O = []
        for _ in range(T):
            h = self.rb_step(X, k)
            k = self.hsab_step(h, k)
            O.append(self.asb(h))
        return O, self.project_recursive(k)

    def forward(self, image) -> Output:
        mode = self.cfg.mode
        if mode is NetMode.BASE:
            X, S = self.base_forward(image)
            return Output(X, S)
        X = self.features(image)
        if mode is NetMode.INCREMENTAL:
            O, S = self.rollout_incremental(X)
        else:
            O, S = self.rollout_nonincremental(X)
        return Output(X, S, O)

    __call__ = forward
