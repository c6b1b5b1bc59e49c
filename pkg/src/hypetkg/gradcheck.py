"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Parameter, Tensor, no_grad


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    max_abs_err: float
    max_grad: float
    n_checked: int


@dataclass
class GradCheckReport:
    entries: list[ParamCheck] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_abs_err(self) -> float:
        return max((e.max_abs_err for e in self.entries), default=0.0)

    @property
    def grad_scale(self) -> float:
        return max((e.max_grad for e in self.entries), default=0.0)

    @property
    def max_rel_err(self) -> float:
        """Largest coordinate error over the largest gradient magnitude, model-wide."""
        scale = self.grad_scale
        return self.max_abs_err / scale if scale > 1e-10 else self.max_abs_err

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def format(self) -> str:
        width = max([len(e.name) for e in self.entries] + [9])
        lines = [f"{'parameter':<{width}}  {'checked':>7}  {'max_abs_err':>12}  {'own_rel_err':>12}"]
        for e in self.entries:
            lines.append(
                f"{e.name:<{width}}  {e.n_checked:>7d}  {e.max_abs_err:>12.3e}  {e.max_rel_err:>12.3e}"
            )
        lines.append(f"overall max relative error {self.max_rel_err:.3e} (tol {self.tol:g})")
        return "\n".join(lines)


def _evaluate(fn: Callable[[], Tensor]) -> float:
    with no_grad():
        out = fn()
    return float(np.asarray(out.data if isinstance(out, Tensor) else out).reshape(()))


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-6,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
    fn_for: Callable[[Parameter], Callable[[], Tensor] | None] | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of the scalar ``fn()`` against central differences.

    The pass criterion is norm-wise: the largest coordinate discrepancy anywhere,
    divided by the largest gradient magnitude anywhere (analytic or numeric).
    Per-parameter ratios are kept for diagnosis only, since a parameter whose
    gradient sits near the roundoff floor of the difference quotient would
    otherwise dominate.  At most ``max_coords`` coordinates per parameter are
    probed, chosen under ``seed``.

    ``fn_for(p)`` may return a cheaper function that computes the same value as
    ``fn`` while only ``p`` moves (for instance one reusing a cached upstream
    result).  It must agree with ``fn`` at the unperturbed point, which is checked.
    """
    for p in params:
        p.zero_grad()
    out = fn()
    if out.size != 1:
        raise ValueError(f"check_gradients needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = {id(p): (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for p in params}

    base = float(out.data.reshape(()))
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for p in params:
        probe = fn_for(p) if fn_for is not None else None
        if probe is None:
            probe = fn
        elif abs(_evaluate(probe) - base) > 1e-12 * max(1.0, abs(base)):
            raise ValueError(f"fn_for({p.name!r}) disagrees with fn at the base point")
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(coords.size)
        for k, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + h
            up = _evaluate(probe)
            flat[i] = orig - h
            down = _evaluate(probe)
            flat[i] = orig
            numeric[k] = (up - down) / (2.0 * h)
        a = analytic[id(p)].reshape(-1)[coords]
        abs_err = float(np.max(np.abs(a - numeric))) if coords.size else 0.0
        scale = max(float(np.max(np.abs(analytic[id(p)]), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
        rel = abs_err / scale if scale > 1e-10 else abs_err
        report.entries.append(ParamCheck(p.name or "?", rel, abs_err, scale, int(coords.size)))
    for p in params:
        p.zero_grad()
    return report


def check_model_gradients(
    model,
    queries,
    graph,
    h: float = 1e-6,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Gradient check of the training loss over ``queries`` for every model parameter.

    Perturbing a decoder-only parameter cannot change the entity representations,
    so those probes reuse one encoder pass.
    """
    from .training import bce_loss, query_loss

    truths = [q.ground_truth for q in queries]
    cached: dict[str, Tensor] = {}

    def decoder_only() -> Tensor:
        if "h" not in cached:
            with no_grad():
                cached["h"] = model.encode(graph)
        return bce_loss(model.scores(queries, graph, h=cached["h"]), truths)

    def fn_for(p: Parameter):
        return decoder_only if (p.name or "").startswith("qmd.") else None

    return check_gradients(
        lambda: query_loss(model, queries, graph), model.params, h=h, tol=tol,
        max_coords=max_coords, seed=seed, fn_for=fn_for,
    )
