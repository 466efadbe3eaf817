"""Dense 2-D matrices with reverse-mode automatic differentiation.

A :class:`Tape` records one forward computation as a flat list of nodes in
topological order (parents always precede children). ``backprop`` walks the
list once in reverse and returns a gradient for every named parameter,
including zeros for parameters that do not reach the loss. Only the
primitives needed for small MLPs and their training losses are provided;
everything is float64 and the tape is rebuilt for every minibatch.

Conventions:
    * data flows as (rows=samples, cols=features) matrices,
    * ReLU'(0) = 0,
    * loss nodes are 1x1 matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeError

GRAD_CHECK_EPS = 1e-8


def as_matrix(value, name: str = "tensor") -> np.ndarray:
    """Validate external input as a finite 2-D float64 matrix."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries rejected")
    return arr


@dataclass
class Node:
    value: np.ndarray
    parents: tuple[int, ...]
    # maps the gradient at this node to gradients for each parent; None for leaves
    backward: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None
    param: str | None = None


class Tape:
    """Computation record for one forward pass."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._params: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    def scalar(self, nid: int) -> float:
        v = self.nodes[nid].value
        if v.shape != (1, 1):
            raise ShapeError(f"node {nid} is not scalar, shape {v.shape}")
        return float(v[0, 0])

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    # ------------------------------------------------------------------
    # leaves
    # ------------------------------------------------------------------

    def constant(self, value, name: str = "constant") -> int:
        return self._append(Node(as_matrix(value, name), (), None))

    def param(self, name: str, value: np.ndarray) -> int:
        """Register a named parameter leaf; re-registering returns the same node.

        The sharing rule is what lets two forward passes (e.g. an input and
        its perturbed copy) accumulate gradients into one parameter set.
        """
        if name in self._params:
            return self._params[name]
        nid = self._append(Node(as_matrix(value, name), (), None, param=name))
        self._params[name] = nid
        return nid

    # ------------------------------------------------------------------
    # primitives
    # ------------------------------------------------------------------

    def affine(self, x: int, w: int, b: int, label: str = "affine") -> int:
        xv, wv, bv = self.value(x), self.value(w), self.value(b)
        if xv.shape[1] != wv.shape[0]:
            raise ShapeError(
                f"{label}: input has {xv.shape[1]} columns, weight expects {wv.shape[0]}"
            )
        if bv.shape != (1, wv.shape[1]):
            raise ShapeError(f"{label}: bias shape {bv.shape} != (1, {wv.shape[1]})")
        out = xv @ wv + bv

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            return g @ wv.T, xv.T @ g, g.sum(axis=0, keepdims=True)

        return self._append(Node(out, (x, w, b), bwd))

    def relu(self, x: int) -> int:
        xv = self.value(x)
        mask = xv > 0.0  # ReLU'(0) = 0
        out = np.where(mask, xv, 0.0)

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            return (g * mask,)

        return self._append(Node(out, (x,), bwd))

    def sigmoid(self, x: int) -> int:
        xv = self.value(x)
        out = np.empty_like(xv)
        pos = xv >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
        e = np.exp(xv[~pos])
        out[~pos] = e / (1.0 + e)

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            return (g * out * (1.0 - out),)

        return self._append(Node(out, (x,), bwd))

    def concat(self, a: int, b: int) -> int:
        av, bv = self.value(a), self.value(b)
        if av.shape[0] != bv.shape[0]:
            raise ShapeError(f"concat: row mismatch {av.shape} vs {bv.shape}")
        out = np.concatenate([av, bv], axis=1)
        na = av.shape[1]

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            return g[:, :na], g[:, na:]

        return self._append(Node(out, (a, b), bwd))

    def scale(self, x: int, c: float) -> int:
        c = float(c)
        out = self.value(x) * c

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            return (g * c,)

        return self._append(Node(out, (x,), bwd))

    def add(self, a: int, b: int) -> int:
        av, bv = self.value(a), self.value(b)
        if av.shape != bv.shape:
            raise ShapeError(f"add: shape mismatch {av.shape} vs {bv.shape}")

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            return g, g

        return self._append(Node(av + bv, (a, b), bwd))

    def divide(self, x: int, c: float) -> int:
        """Division by a scalar constant (not multiplication by 1/c, which
        would round differently; x/x must be exactly 1)."""
        c = float(c)
        if c == 0.0:
            raise ValueError("division by zero")
        out = self.value(x) / c

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            return (g / c,)

        return self._append(Node(out, (x,), bwd))

    def rowmap(
        self,
        x: int,
        fn: Callable[[np.ndarray], np.ndarray],
        jac: Callable[[np.ndarray], np.ndarray],
    ) -> int:
        """Row-wise scalar function with a supplied analytic jacobian.

        ``fn`` maps (n, d) -> (n,) and ``jac`` maps (n, d) -> (n, d); used to
        put physics quantities (e.g. state energy) on the tape.
        """
        xv = self.value(x)
        out = np.asarray(fn(xv), dtype=np.float64).reshape(-1, 1)
        if out.shape[0] != xv.shape[0]:
            raise ShapeError("rowmap: fn must return one value per row")
        jv = np.asarray(jac(xv), dtype=np.float64)
        if jv.shape != xv.shape:
            raise ShapeError(f"rowmap: jacobian shape {jv.shape} != {xv.shape}")

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            return (g * jv,)

        return self._append(Node(out, (x,), bwd))

    # ------------------------------------------------------------------
    # reductions / losses (scalar outputs)
    # ------------------------------------------------------------------

    def sum(self, x: int) -> int:
        xv = self.value(x)
        out = np.array([[xv.sum()]])

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            return (np.full_like(xv, g[0, 0]),)

        return self._append(Node(out, (x,), bwd))

    def mean_relu_diff(self, a: int, b: int, weights: np.ndarray | None = None) -> int:
        """(1/n) * sum_i w_i * max(a_i - b_i, 0) over single-column inputs.

        The optional 0/1 weight column gates invalid rows out of the sum while
        keeping the batch size as the denominator.
        """
        av, bv = self.value(a), self.value(b)
        if av.shape != bv.shape or av.shape[1] != 1:
            raise ShapeError(f"mean_relu_diff: need matching (n,1) inputs, got {av.shape} vs {bv.shape}")
        n = av.shape[0]
        w = np.ones((n, 1)) if weights is None else as_matrix(weights, "weights")
        if w.shape != (n, 1):
            raise ShapeError(f"mean_relu_diff: weights shape {w.shape} != ({n}, 1)")
        diff = av - bv
        active = (diff > 0.0) & (w != 0.0)
        out = np.array([[float(np.sum(w * np.maximum(diff, 0.0))) / n]])

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            d = g[0, 0] * w * active / n
            return d, -d

        return self._append(Node(out, (a, b), bwd))

    def mse(self, pred: int, target: int) -> int:
        pv, tv = self.value(pred), self.value(target)
        if pv.shape != tv.shape:
            raise ShapeError(f"mse: shape mismatch {pv.shape} vs {tv.shape}")
        diff = pv - tv
        out = np.array([[float(np.mean(diff * diff))]])
        inv = 2.0 / diff.size

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            d = g[0, 0] * inv * diff
            return d, -d

        return self._append(Node(out, (pred, target), bwd))

    def bce(self, pred: int, target: int, clamp: float = 1e-12) -> int:
        """Mean binary cross-entropy of probabilities against 0/1 targets.

        Probabilities are clamped to [clamp, 1-clamp]; the gradient is zero
        where the clamp is active (the loss is flat there).
        """
        pv, tv = self.value(pred), self.value(target)
        if pv.shape != tv.shape:
            raise ShapeError(f"bce: shape mismatch {pv.shape} vs {tv.shape}")
        p = np.clip(pv, clamp, 1.0 - clamp)
        inside = (pv > clamp) & (pv < 1.0 - clamp)
        out = np.array([[float(np.mean(-(tv * np.log(p) + (1.0 - tv) * np.log1p(-p))))]])

        def bwd(g: np.ndarray) -> tuple[np.ndarray, ...]:
            dp = g[0, 0] * inside * (p - tv) / (p * (1.0 - p)) / pv.size
            dt = g[0, 0] * (np.log1p(-p) - np.log(p)) / pv.size
            return dp, dt

        return self._append(Node(out, (pred, target), bwd))

    # ------------------------------------------------------------------
    # reverse pass
    # ------------------------------------------------------------------

    def backprop(self, loss: int) -> dict[str, np.ndarray]:
        """Gradient of a scalar loss node with respect to every parameter.

        Parameters with no path to the loss get zero gradients.
        """
        lv = self.value(loss)
        if lv.shape != (1, 1):
            raise ShapeError(f"backprop: loss must be 1x1, got shape {lv.shape}")
        grads: list[np.ndarray | None] = [None] * (loss + 1)
        grads[loss] = np.ones((1, 1))
        for nid in range(loss, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.backward is None:
                continue
            for pid, pg in zip(node.parents, node.backward(g)):
                if grads[pid] is None:
                    grads[pid] = pg.copy()
                else:
                    grads[pid] += pg
        out: dict[str, np.ndarray] = {}
        for name, nid in self._params.items():
            g = grads[nid] if nid <= loss else None
            out[name] = np.zeros_like(self.nodes[nid].value) if g is None else g
        return out


def grad_check_fd(
    f: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    h: float = 1e-4,
) -> float:
    """Max relative disagreement between analytic and central-difference grads.

    ``f`` maps a parameter dict to ``(scalar_loss, grads)`` and must be
    deterministic. Returns max over all parameter entries of
    ``|analytic - fd| / (|fd| + eps)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    _, analytic = f(params)
    worst = 0.0
    for name, base in params.items():
        grad = analytic[name]
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            work = {k: (v.copy() if k == name else v) for k, v in params.items()}
            wflat = work[name].reshape(-1)
            wflat[i] = orig + h
            up = f(work)[0]
            wflat[i] = orig - h
            down = f(work)[0]
            fd = (up - down) / (2.0 * h)
            err = abs(grad.reshape(-1)[i] - fd) / (abs(fd) + GRAD_CHECK_EPS)
            worst = max(worst, err)
    return worst
