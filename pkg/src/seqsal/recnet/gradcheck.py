"""Central finite-difference checks of analytic gradients.

ReLU networks are only piecewise smooth. A central difference whose +-h
probe lands on a different linear piece than the base point (some ReLU,
min or max switches branch) does not estimate the derivative at all, so
such coordinates are detected via :class:`~seqsal.recnet.tensor.record_kinks`,
counted, and replaced by fresh randomly chosen coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, record_kinks

STEP = 1e-4
# gradients smaller than this are compared in absolute terms
ABS_FLOOR = 1e-6


def central_difference(f: Callable[[], float], x: np.ndarray, indices: Sequence[int],
                       h: float = STEP) -> np.ndarray:
    """(f(x + h e_i) - f(x - h e_i)) / 2h for each flat index i; ``x`` is perturbed in place and restored."""
    flat = x.reshape(-1)
    out = np.empty(len(indices))
    for j, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[j] = (fp - fm) / (2.0 * h)
    return out


def rel_error(analytic, numeric, floor: float = ABS_FLOOR) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _same_branches(log_a, log_b) -> bool:
    return len(log_a) == len(log_b) and all(np.array_equal(p, q) for p, q in zip(log_a, log_b))


@dataclass
class GradCheck:
    name: str
    n_checked: int
    max_rel_error: float
    tol: float
    n_kinked: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.n_checked > 0 and self.max_rel_error < self.tol)

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.name:<34s} {self.n_checked:>6d} {self.n_kinked:>6d} "
                f"{self.max_rel_error:>12.3e} {self.tol:>9.1e}  {status}")

    @staticmethod
    def header() -> str:
        return f"{'check':<34s} {'coords':>6s} {'kinked':>6s} {'max_rel_err':>12s} {'tol':>9s}  result"


def check_gradients(objective: Callable[[], Tensor], tensors: dict[str, Tensor], *,
                    per_tensor: int | None = None, seed: int = 0, h: float = STEP,
                    tol: float = 1e-4, name: str = "gradient",
                    floor: float = ABS_FLOOR) -> GradCheck:
    """Compare backprop gradients of ``objective()`` with central differences.

    ``tensors`` are the leaves to check (they must have ``requires_grad``).
    With ``per_tensor`` only that many randomly chosen smooth coordinates of
    each leaf are differenced; otherwise every smooth coordinate is.
    """
    for t in tensors.values():
        t.grad = None
    with record_kinks() as base_log:
        loss = objective()
    loss.backward()
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for k, t in tensors.items()}
    rng = np.random.default_rng(seed)
    worst, count, kinked = 0.0, 0, 0

    for key, t in tensors.items():
        flat = t.data.reshape(-1)
        want = flat.size if per_tensor is None else min(per_tensor, flat.size)
        got = 0
        for i in rng.permutation(flat.size):
            if got >= want:
                break
            orig = flat[i]
            flat[i] = orig + h
            with record_kinks() as log_p:
                fp = objective().item()
            flat[i] = orig - h
            with record_kinks() as log_m:
                fm = objective().item()
            flat[i] = orig
            if not (_same_branches(base_log, log_p) and _same_branches(base_log, log_m)):
                kinked += 1
                continue
            numeric = (fp - fm) / (2.0 * h)
            worst = max(worst, float(rel_error(analytic[key].reshape(-1)[i], numeric, floor)))
            got += 1
            count += 1
    return GradCheck(name, count, worst, tol, kinked)


# --------------------------------------------------------------------------
# the standard suite: every tensor op, both rollouts, the full objective

OP_TOL = 1e-4
GRAPH_TOL = 1e-3


def op_checks(seed: int = 0) -> list[GradCheck]:
    """One check per differentiable op, each contracted with a random weight tensor."""
    from . import tensor as tn
    from .tensor import BatchNormState

    rng = np.random.default_rng(seed)

    def leaf(*shape):
        return Tensor(rng.normal(size=shape), True)

    x, w, b = leaf(2, 3, 4, 4), leaf(5, 3, 3, 3), leaf(5)
    g, beta = leaf(3), leaf(3)
    W = rng.normal(size=(2, 6, 8, 8))
    st = BatchNormState(3)
    st.mean, st.var = rng.normal(size=3), rng.uniform(0.5, 2.0, 3)
    small = W[:, :3, :4, :4]
    cases = {
        "conv2d": (lambda: (tn.conv2d(x, w, b) * W[:, :5, :4, :4]).sum(), {"x": x, "w": w, "b": b}),
        "batch_norm[train]": (lambda: (tn.batch_norm(x, g, beta, BatchNormState(3), True) * small).sum(),
                              {"x": x, "g": g, "b": beta}),
        "batch_norm[eval]": (lambda: (tn.batch_norm(x, g, beta, st, False) * small).sum(),
                             {"x": x, "g": g, "b": beta}),
        "relu": (lambda: (tn.relu(x) * small).sum(), {"x": x}),
        "upsample2x": (lambda: (tn.upsample2x(x) * W[:, :3]).sum(), {"x": x}),
        "avg_pool2x": (lambda: (tn.avg_pool2x(x) * W[:, :3, :2, :2]).sum(), {"x": x}),
        "concat": (lambda: (tn.concat([x, x * x], 1) * W[:, :6, :4, :4]).sum(), {"x": x}),
        "take": (lambda: (tn.take(x, 1, 1) * W[:, :1, :4, :4]).sum(), {"x": x}),
        "amin": (lambda: (tn.amin(x, axis=(2, 3), keepdims=True) * W[:, :3, :1, :1]).sum(), {"x": x}),
        "amax": (lambda: (tn.amax(x, axis=(2, 3)) * W[:, :3, 0, 0]).sum(), {"x": x}),
        "minimum": (lambda: (tn.minimum(x, W[:, :3, :4, :4]) * small).sum(), {"x": x}),
        "log/sqrt/div": (lambda: (tn.log(x * x + 1.0) + tn.sqrt(x * x + 1.0) / (x * x + 2.0)).sum(),
                         {"x": x}),
        "mean/reshape": (lambda: (x.reshape(2, -1).mean(axis=1) * W[:, 0, 0, :1].reshape(-1)).sum(),
                         {"x": x}),
    }
    return [check_gradients(f, t, seed=seed, tol=OP_TOL, name=f"op {name}")
            for name, (f, t) in cases.items()]


def _toy_setup(mode, size, seed):
    from ..synth import toy_batch
    from .model import ToyConfig, ToyNet
    from .train import ToyBatch, objective

    batch = toy_batch(8, size, seed=seed + 1)
    model = ToyNet(ToyConfig(mode=mode, T=batch.meta.shape[1], seed=seed))
    # one training-mode pass gives the running statistics non-trivial values
    model.train()
    objective(model, batch)
    model.eval()
    small = ToyBatch(batch.images[:2], batch.gt_gauss[:2], batch.gt_pts[:2], batch.meta[:2])
    return model, small


def block_checks(size: int = 8, seed: int = 0) -> list[GradCheck]:
    """The recurrent, accumulator and auxiliary blocks in isolation (inference-mode batch norm)."""
    from .model import NetMode, ToyConfig, ToyNet

    model = ToyNet(ToyConfig(mode=NetMode.NON_INCREMENTAL, seed=seed)).eval()
    rng = np.random.default_rng(seed)
    Hc, Xc = model.cfg.hidden_channels, model.cfg.X_channels
    X = Tensor(rng.normal(size=(2, Xc, size, size)), True)
    h = Tensor(rng.normal(size=(2, Hc, size, size)), True)
    k = Tensor(rng.normal(size=(2, Hc, size, size)), True)
    W = rng.normal(size=(2, Hc, size, size))

    def own(prefix):
        return {n: p for n, p in model.params.items() if n.startswith(prefix)}

    cases = {
        "rb_step": (lambda: (model.rb_step(X, h) * W).sum(), {**own("RB."), "X": X, "state": h}),
        "hsab_step": (lambda: (model.hsab_step(h, k) * W).sum(), {**own("HSAB."), "h": h, "k": k}),
        "asb": (lambda: (model.asb(h) * W[:, :1]).sum(), {**own("ASB."), "h": h}),
    }
    return [check_gradients(f, t, per_tensor=12, seed=seed, tol=OP_TOL, name=f"block {name}")
            for name, (f, t) in cases.items()]


def rollout_checks(size: int = 32, seed: int = 0, per_tensor: int = 3) -> list[GradCheck]:
    """Both recursive rollouts, from a free input X to a random contraction of all outputs."""
    from .model import NetMode

    out = []
    for mode in (NetMode.INCREMENTAL, NetMode.NON_INCREMENTAL):
        model, small = _toy_setup(mode, size, seed)
        rng = np.random.default_rng(seed)
        X = Tensor(np.abs(rng.normal(size=(2, model.cfg.X_channels, size, size))), True)
        rollout = (model.rollout_incremental if mode is NetMode.INCREMENTAL
                   else model.rollout_nonincremental)
        n_out = model.cfg.T + 4
        Ws = [rng.normal(size=(2, 1, size, size)) for _ in range(n_out)]

        def f():
            O, S = rollout(X)
            total = None
            for o, Wk in zip(list(O) + list(S), Ws):
                term = (o * Wk).sum()
                total = term if total is None else total + term
            return total

        leaves = {k: v for k, v in model.params.items() if not k.startswith(("enc", "dec", "P."))}
        leaves["X"] = X
        out.append(check_gradients(f, leaves, per_tensor=per_tensor, seed=seed, tol=GRAPH_TOL,
                                   name=f"rollout {mode.value}"))
    return out


def objective_checks(size: int = 32, seed: int = 0, per_tensor: int = 3) -> list[GradCheck]:
    """l_sal + aux_weight * l_aux for each network mode, w.r.t. every parameter and the image."""
    from .model import NetMode
    from .train import objective

    out = []
    for mode in NetMode:
        model, small = _toy_setup(mode, size, seed)
        image = Tensor(small.images.copy(), True)
        small.images = image
        leaves = dict(model.params)
        leaves["image"] = image
        out.append(check_gradients(lambda: objective(model, small)[0], leaves, per_tensor=per_tensor,
                                   seed=seed, tol=GRAPH_TOL, name=f"objective {mode.value}"))
    return out


def standard_suite(size: int = 32, seed: int = 0, per_tensor: int = 3) -> list[GradCheck]:
    return (op_checks(seed) + block_checks(seed=seed) + rollout_checks(size, seed, per_tensor)
            + objective_checks(size, seed, per_tensor))


def format_table(checks: list[GradCheck]) -> str:
    return "\n".join([GradCheck.header()] + [c.row() for c in checks]) + "\n"
