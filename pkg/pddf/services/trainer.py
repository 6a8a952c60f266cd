from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
from loguru import logger
from torch.optim.lr_scheduler import ReduceLROnPlateau

from pddf.core.errors import NumericalError
from pddf.core.logging import log_metrics
from pddf.models.field import SirenConfig
from pddf.models.geometry import DEFAULT_BOX, BoundingBox
from pddf.models.samples import SAMPLE_TYPE_ORDER, SampleSet, SampleType
from pddf.models.training import TrainConfig, TrainReport
from pddf.services.field import PddfNetwork, init_siren
from pddf.services.losses import TensorBatch, loss_terms
from pddf.storage.checkpoint import save_checkpoint
from pddf.utils.vectors import random_unit_vectors


@dataclass
class AdamState:
    step: int
    exp_avg: List[torch.Tensor]
    exp_avg_sq: List[torch.Tensor]

    @classmethod
    def zeros_like(cls, params: Iterable[torch.Tensor]) -> "AdamState":
        params = list(params)
        return cls(
            step=0,
            exp_avg=[torch.zeros_like(p) for p in params],
            exp_avg_sq=[torch.zeros_like(p) for p in params],
        )


def adam_step(
    params: List[torch.Tensor],
    grads: List[torch.Tensor],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    iteration: Optional[int] = None,
) -> Tuple[List[torch.Tensor], AdamState]:
    """
    One bias-corrected Adam update.

    Args:
        params: Current parameter values
        grads: Gradients, same shapes
        state: Moments and step count
        lr: Learning rate
        betas: Moment decay rates
        eps: Denominator floor
        iteration: Reported in the error raised for non-finite gradients

    Returns:
        (new parameter values, new state)
    """
    for g in grads:
        if not bool(torch.isfinite(g).all()):
            where = iteration if iteration is not None else state.step + 1
            raise NumericalError(f"Non-finite gradient at iteration {where}")

    beta1, beta2 = betas
    step = state.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step

    new_params, new_m, new_s = [], [], []
    for p, g, m, s in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        m = beta1 * m + (1.0 - beta1) * g
        s = beta2 * s + (1.0 - beta2) * g * g
        update = (m / correction1) / (torch.sqrt(s / correction2) + eps)
        new_params.append(p - lr * update)
        new_m.append(m)
        new_s.append(s)
    return new_params, AdamState(step=step, exp_avg=new_m, exp_avg_sq=new_s)


class Adam(torch.optim.Optimizer):
    """
    torch Optimizer front-end over ``adam_step`` so the plateau scheduler
    can drive its learning rate.
    """

    def __init__(self, params, lr: float = 1e-4, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps))
        self.iteration = 0

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        self.iteration += 1

        for group in self.param_groups:
            params = [p for p in group["params"] if p.grad is not None]
            if not params:
                continue
            first = self.state[params[0]]
            state = AdamState(
                step=first.get("step", 0),
                exp_avg=[self.state[p].get("exp_avg", torch.zeros_like(p)) for p in params],
                exp_avg_sq=[self.state[p].get("exp_avg_sq", torch.zeros_like(p)) for p in params],
            )
            new_params, state = adam_step(
                [p.detach() for p in params],
                [p.grad for p in params],
                state,
                lr=group["lr"],
                betas=group["betas"],
                eps=group["eps"],
                iteration=self.iteration,
            )
            for p, value, m, s in zip(params, new_params, state.exp_avg, state.exp_avg_sq):
                p.copy_(value)
                self.state[p]["step"] = state.step
                self.state[p]["exp_avg"] = m
                self.state[p]["exp_avg_sq"] = s
        return loss


class EpochSampler:
    """
    Draws indices without replacement, reshuffling whenever an epoch is
    used up.
    """

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.order = np.arange(0)
        self.pos = 0
        self.epoch = 0

    def take(self, count: int) -> np.ndarray:
        if self.size == 0 or count == 0:
            return np.zeros(0, dtype=np.int64)
        out = []
        while count > 0:
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(self.size)
                self.pos = 0
                self.epoch += 1
            m = min(count, len(self.order) - self.pos)
            out.append(self.order[self.pos:self.pos + m])
            self.pos += m
            count -= m
        return np.concatenate(out)


def _scaled(value: int, scale: float) -> int:
    return int(round(value * scale))


def evaluate_held_out(model: PddfNetwork, samples: SampleSet, chunk: int = 16384) -> Dict[str, Dict[str, float]]:
    """
    Per-type depth L1 on visible samples and visibility BCE.

    Returns:
        {type: {"l1", "bce", "count"}}; l1 is NaN for a type with no
        visible samples
    """
    metrics: Dict[str, Dict[str, float]] = {}
    batch_all = TensorBatch.from_samples(samples, model.dtype)
    with torch.no_grad():
        for kind in SAMPLE_TYPE_ORDER:
            rows = torch.nonzero(batch_all.kind == kind.code)[:, 0]
            if len(rows) == 0:
                continue
            depth, xi = [], []
            for start in range(0, len(rows), chunk):
                b = batch_all.take(rows[start:start + chunk])
                out = model(b.p, b.v)
                depth.append(out.depth)
                xi.append(out.xi)
            b = batch_all.take(rows)
            depth = torch.cat(depth)
            xi = torch.cat(xi).clamp(1e-7, 1.0 - 1e-7)
            target = b.visible.to(xi.dtype)
            bce = -(target * torch.log(xi) + (1.0 - target) * torch.log(1.0 - xi))
            vis = b.visible
            l1 = float((depth[vis] - b.depth[vis]).abs().mean()) if bool(vis.any()) else float("nan")
            metrics[kind.value] = {"l1": l1, "bce": float(bce.mean()), "count": float(len(rows))}
    return metrics


def fit_shape(
    samples: SampleSet,
    config: TrainConfig,
    field_config: SirenConfig,
    checkpoint_path: Optional[str] = None,
    held_out: Optional[SampleSet] = None,
    box: BoundingBox = DEFAULT_BOX,
) -> Tuple[PddfNetwork, TrainReport]:
    """
    Fit a field to a labelled dataset.

    Each iteration draws the configured per-type counts (without replacement
    inside an epoch) plus fresh uniform regularisation-only points, takes
    an Adam step, and feeds an exponential moving average of the loss to a
    reduce-on-plateau scheduler. Checkpoints are written every
    ``checkpoint_fraction`` of the run and at the end.

    Args:
        samples: Training samples
        config: Optimisation recipe
        field_config: Network architecture and seed
        checkpoint_path: Optional checkpoint output
        held_out: Optional evaluation samples
        box: Field domain, for regularisation-only points

    Returns:
        (trained model, report)
    """
    model = init_siren(field_config)
    dtype = model.dtype
    report = TrainReport()
    iterations = config.scaled_iterations
    counts = config.scaled_batch

    by_type = {kind: TensorBatch.from_samples(samples.of_type(kind), dtype) for kind in SAMPLE_TYPE_ORDER}
    samplers = {
        kind: EpochSampler(len(by_type[kind]), np.random.default_rng([config.seed, k]))
        for k, kind in enumerate(SAMPLE_TYPE_ORDER)
    }
    reg_rng = np.random.default_rng([config.seed, len(SAMPLE_TYPE_ORDER)])
    lo, hi = np.asarray(box.min), np.asarray(box.max)

    optimizer = Adam(model.parameters(), lr=config.lr, betas=config.betas, eps=config.eps)
    patience = _scaled(config.plateau_patience, config.scale)
    min_gap = _scaled(config.plateau_min_gap, config.scale)
    scheduler = ReduceLROnPlateau(
        optimizer,
        mode="min",
        factor=config.plateau_factor,
        patience=patience,
        threshold=0.0,
        cooldown=max(0, min_gap - patience - 1),
    )
    every = max(1, int(round(iterations * config.checkpoint_fraction)))

    logger.info(
        f"Fitting {field_config.hidden_sizes} field for {iterations} iterations "
        f"on {len(samples)} samples (scale {config.scale})"
    )
    ema: Optional[float] = None
    for it in range(1, iterations + 1):
        parts = []
        for kind in SAMPLE_TYPE_ORDER:
            idx = samplers[kind].take(counts.for_type(kind))
            if len(idx):
                parts.append(by_type[kind].take(torch.as_tensor(idx)))
        if counts.reg_only:
            p = lo + reg_rng.random((counts.reg_only, 3)) * (hi - lo)
            v = random_unit_vectors(counts.reg_only, reg_rng)
            parts.append(TensorBatch.regularization_only(
                torch.as_tensor(p, dtype=dtype), torch.as_tensor(v, dtype=dtype)
            ))
        batch = TensorBatch.concatenate(parts)

        optimizer.zero_grad(set_to_none=True)
        breakdown = loss_terms(model, batch, config.weights)
        if not bool(torch.isfinite(breakdown.total)):
            logger.error(f"Non-finite loss at iteration {it}: {breakdown.as_dict()}")
            raise NumericalError(f"Non-finite loss at iteration {it}")
        breakdown.total.backward()
        optimizer.step()

        loss = float(breakdown.total.detach())
        ema = loss if ema is None else (1.0 - config.ema_alpha) * ema + config.ema_alpha * loss
        lr_before = optimizer.param_groups[0]["lr"]
        scheduler.step(ema)
        lr = optimizer.param_groups[0]["lr"]
        if lr < lr_before:
            report.lr_reductions.append(it)
            logger.info(f"Iteration {it}: learning rate reduced to {lr:.3e}")

        if it % config.report_every == 0:
            entry = {"iter": it, "lr": lr, "ema": ema, **breakdown.as_dict()}
            report.history.append(entry)
            log_metrics(entry)
            logger.debug(f"Iteration {it}: loss {loss:.5f} (ema {ema:.5f})")

        if checkpoint_path and (it % every == 0 or it == iterations):
            save_checkpoint(model, checkpoint_path, {"iteration": it, "lr": lr, "ema": ema})

    report.iterations = iterations
    report.final_lr = optimizer.param_groups[0]["lr"]
    if checkpoint_path and iterations == 0:
        save_checkpoint(model, checkpoint_path, {"iteration": 0, "lr": config.lr, "ema": None})
    if held_out is not None and len(held_out):
        report.held_out = evaluate_held_out(model, held_out)
        logger.info(f"Held-out metrics: {report.held_out}")
    return model, report


def ablation_experiment(
    samples: SampleSet,
    config: TrainConfig,
    field_config: SirenConfig,
    held_out: SampleSet,
    ablate: Optional[SampleType] = None,
) -> pd.DataFrame:
    """
    Train with one sample type removed and tabulate per-type held-out
    errors.

    Args:
        samples: Training samples
        config: Optimisation recipe
        field_config: Architecture
        held_out: Evaluation samples covering every type
        ablate: Type to remove; None trains the baseline

    Returns:
        DataFrame indexed by sample type with columns l1 and bce
    """
    if ablate is not None:
        batch = config.batch.model_copy(update={ablate.value: 0})
        config = config.model_copy(update={"batch": batch})
        keep = np.flatnonzero(samples.kind != ablate.code)
        samples = samples.subset(keep)
        logger.info(f"Ablating {ablate.value}-type data")

    model, _ = fit_shape(samples, config, field_config)
    metrics = evaluate_held_out(model, held_out)
    rows = {
        kind.value: {
            "l1": metrics.get(kind.value, {}).get("l1", float("nan")),
            "bce": metrics.get(kind.value, {}).get("bce", float("nan")),
        }
        for kind in SAMPLE_TYPE_ORDER
    }
    table = pd.DataFrame.from_dict(rows, orient="index", columns=["l1", "bce"])
    table.index.name = "type"
    return table


def run_ablations(
    samples: SampleSet,
    config: TrainConfig,
    field_config: SirenConfig,
    held_out: SampleSet,
    types: Optional[List[SampleType]] = None,
) -> pd.DataFrame:
    """
    Baseline plus one ablation per requested type, stacked into a table
    indexed by (ablated, type). The baseline is labelled "none".
    """
    types = list(SAMPLE_TYPE_ORDER) if types is None else types
    tables = {"none": ablation_experiment(samples, config, field_config, held_out)}
    for kind in types:
        tables[kind.value] = ablation_experiment(samples, config, field_config, held_out, ablate=kind)
    return pd.concat(tables, names=["ablated", "type"])
