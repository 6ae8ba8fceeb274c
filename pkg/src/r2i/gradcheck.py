"""Central finite-difference check of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonDeterministicError
from .tensor import Tensor, backward, graph_nodes, no_grad


@dataclass
class GradCheckReport:
    """Max relative error per checked tensor."""

    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-2
    checked: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        # a tensor whose every probe was skipped has not been checked at all
        return self.max_error < self.tolerance and all(n > 0 for n in self.checked.values())

    def lines(self):
        out = []
        for name, err in self.errors.items():
            flag = "ok" if err < self.tolerance and self.checked[name] else "FAIL"
            extra = f", {self.skipped[name]} skipped" if self.skipped.get(name) else ""
            out.append(f"{name:<40s} {err:.3e} ({self.checked[name]} entries{extra}) {flag}")
        return out

    def __str__(self):
        return "\n".join(self.lines())


def relative_error(analytic, numeric):
    """max |a - n| scaled by the larger of the two max magnitudes."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def check_deterministic(loss):
    """Raise if the graph behind ``loss`` samples random numbers."""
    for node in graph_nodes(loss):
        if node.stochastic:
            raise NonDeterministicError(
                f"non-deterministic node in graph: {node.op} (use a deterministic mode to check)")


def relu_signature(loss):
    """Sign pattern of every ReLU input in the graph behind ``loss``."""
    parts = [np.packbits(n._parents[0].data > 0) for n in graph_nodes(loss) if n.op == "relu"]
    return np.concatenate(parts) if parts else np.empty(0, np.uint8)


def _total(t):
    return float(np.sum(t.data, dtype=np.float64))


def _prepare(tensors):
    tensors = dict(tensors)
    for t in tensors.values():
        # perturbation goes through a flat view, so storage must be contiguous
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    return tensors


def _build(fn):
    out = fn()
    if not isinstance(out, Tensor):
        raise TypeError("fn must return a Tensor")
    loss = out if out.size == 1 else out.sum()
    check_deterministic(loss)
    return loss


def grad_check(fn, tensors, eps=1e-3, tolerance=1e-2, max_entries=64, seed=0, skip_kinks=False,
               reference=None):
    """Compare backprop against central differences.

    ``fn`` rebuilds the graph and returns a Tensor; ``tensors`` maps names
    to the leaf tensors to perturb (parameters and/or inputs).  At most
    ``max_entries`` randomly chosen entries per tensor are probed.  A
    non-scalar output is summed: by backprop for the analytic side, and in
    float64 for the difference quotients, so a 32-bit check is not limited
    by the rounding of one large float32 scalar.

    With ``skip_kinks`` a probe is discarded when the +-eps perturbation
    flips the sign of any ReLU input: the difference quotient then straddles
    a kink and says nothing about the derivative at the point.

    ``reference`` is an optional ``(fn, tensors)`` pair describing the same
    function (same names and shapes), typically a 64-bit copy of a 32-bit
    graph.  The difference quotients are then taken on the reference while
    the analytic gradients still come from ``fn``.
    """
    tensors = _prepare(tensors)
    backward(_build(fn), tensors.values())
    ref_fn, ref_tensors = (fn, tensors) if reference is None else reference
    if reference is not None:
        ref_tensors = _prepare(ref_tensors)
        if {k: v.shape for k, v in ref_tensors.items()} != {k: v.shape for k, v in tensors.items()}:
            raise ValueError("reference tensors must match the checked tensors")
    base = relu_signature(_build(ref_fn)) if skip_kinks else None
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)

    def probe():
        if not skip_kinks:
            with no_grad():
                return _total(ref_fn()), True
        out = ref_fn()
        return _total(out), np.array_equal(relu_signature(out), base)

    for name, t in tensors.items():
        analytic = t.grad.copy()
        flat = ref_tensors[name].data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        keep, numeric = [], []
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up, ok_up = probe()
            flat[i] = orig - eps
            down, ok_down = probe()
            flat[i] = orig
            if ok_up and ok_down:
                keep.append(i)
                numeric.append((up - down) / (2 * eps))
        keep = np.asarray(keep, dtype=np.int64)
        report.errors[name] = relative_error(analytic.reshape(-1)[keep], numeric)
        report.checked[name] = int(keep.size)
        report.skipped[name] = int(idx.size - keep.size)
    return report
