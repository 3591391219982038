"""Optimization loop, checkpointing, and task evaluations.

Batch gradients are the mean over the batch's episodes (summed in episode
index order, so results do not depend on worker count), clipped by global
norm, then applied with plain SGD or the adaptive-moments optimizer.
Everything is deterministic for a fixed (topology, dataset, config, seed):
the per-epoch shuffle order derives from the seed and the epoch index, so
resuming from a checkpoint continues the exact run.

Divergence (non-finite or huge loss) aborts immediately, dumping an
emergency checkpoint when a run directory is configured.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import episode_loss, tbptt_gradients
from .datasets import Dataset
from .engine import fresh_state, step
from .params import ParameterSet
from .plasticity import PlasticityMeta
from .pong import PongConfig, PongEnv, action_from_index
from .rng import Rng, derive_seed
from .topology import NetworkTopology

CHECKPOINT_TAG = "snn-checkpoint/1"
DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """Training loss went non-finite or exploded."""


class CheckpointError(ValueError):
    """Checkpoint unreadable or inconsistent with the current run."""


@dataclass(frozen=True)
class TrainConfig:
    loss_tag: str = "bce"            # mse | bce | cce
    optimizer: str = "adam"          # sgd | adam (adaptive moments)
    learning_rate: float = 3e-3
    batch_size: int = 32
    epochs: int = 30
    k1: int | None = None            # None: full-window backpropagation
    k2: int | None = None
    grad_clip: float = 1.0
    seed: int = 0
    eval_stride: int = 1
    checkpoint_stride: int = 0       # 0: only final checkpoint
    task: str | None = None          # pavlov | pong | None (eval metric)
    eval_rollouts: int = 50
    workers: int = 1

    def validate(self) -> None:
        if self.loss_tag not in ("mse", "bce", "cce"):
            raise ValueError(f"unknown loss tag {self.loss_tag!r}")
        if self.optimizer not in ("sgd", "adam", "adaptive-moments"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning rate, batch size, epochs must be positive")
        if (self.k1 is None) != (self.k2 is None):
            raise ValueError("set both k1 and k2 or neither")
        if self.k1 is not None and not 1 <= self.k1 <= self.k2:
            raise ValueError(f"need 1 <= k1 <= k2, got ({self.k1}, {self.k2})")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if self.eval_stride < 1 or self.workers < 1:
            raise ValueError("eval_stride and workers must be >= 1")


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    eval_loss: float
    task_metric: float
    wall_time: float


METRICS_HEADER = "epoch,train_loss,eval_loss,task_metric,wall_time"


def format_metrics_row(row: MetricsRow) -> str:
    return (f"{row.epoch},{row.train_loss!r},{row.eval_loss!r},"
            f"{row.task_metric!r},{row.wall_time:.3f}")


# ---------------------------------------------------------------------------
# optimizers


class Sgd:
    kind = "sgd"

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def update(self, flat: np.ndarray, grad: np.ndarray) -> None:
        flat -= self.learning_rate * grad

    def state_dict(self) -> dict:
        return {"kind": self.kind}

    def load_state(self, state: dict) -> None:
        pass


class Adam:
    """Adaptive moments: first/second moment averages with bias correction."""

    kind = "adam"

    def __init__(self, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.count = 0

    def update(self, flat: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(flat)
            self.v = np.zeros_like(flat)
        self.count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.count)
        v_hat = self.v / (1.0 - self.beta2 ** self.count)
        flat -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"kind": self.kind, "count": self.count,
                "m": None if self.m is None else self.m.tolist(),
                "v": None if self.v is None else self.v.tolist()}

    def load_state(self, state: dict) -> None:
        self.count = int(state["count"])
        self.m = None if state["m"] is None else np.array(state["m"])
        self.v = None if state["v"] is None else np.array(state["v"])


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return Sgd(config.learning_rate)
    return Adam(config.learning_rate)


def clip_global_norm(grad: np.ndarray, bound: float) -> np.ndarray:
    norm = float(np.sqrt(np.sum(grad ** 2)))
    if norm > bound:
        grad = grad * (bound / norm)
    return grad


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(config: TrainConfig) -> str:
    return hashlib.sha256(
        json.dumps(asdict(config), sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path: str, params: ParameterSet, optimizer, epoch: int,
                    config: TrainConfig, topology: NetworkTopology) -> None:
    doc = {
        "format": CHECKPOINT_TAG,
        "epoch": epoch,
        "params": params.flat.tolist(),
        "registry": {k: [v.start, v.stop] for k, v in params.registry.items()},
        "meta": asdict(params.meta),
        "frozen": sorted(params.frozen),
        "optimizer": optimizer.state_dict(),
        "rng": {"seed": config.seed, "epoch": epoch},
        "config_hash": config_hash(config),
        "topology_hash": topology.content_hash(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path: str, topology: NetworkTopology, config: TrainConfig,
                    force: bool = False):
    """Returns (params, optimizer, next_epoch)."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if doc.get("format") != CHECKPOINT_TAG:
        raise CheckpointError("not a checkpoint file")
    if not force:
        if doc["topology_hash"] != topology.content_hash():
            raise CheckpointError("checkpoint topology hash mismatch "
                                  "(pass force to override)")
        if doc["config_hash"] != config_hash(config):
            raise CheckpointError("checkpoint config hash mismatch "
                                  "(pass force to override)")
    meta = PlasticityMeta(**doc["meta"])
    base = ParameterSet.from_topology(topology, meta)
    params = base.with_flat(np.array(doc["params"]))
    params.frozen = set(doc.get("frozen", []))
    if doc["registry"] != {k: [v.start, v.stop] for k, v in params.registry.items()}:
        raise CheckpointError("checkpoint parameter registry mismatch")
    optimizer = make_optimizer(config)
    if doc["optimizer"]["kind"] != optimizer.kind:
        raise CheckpointError("checkpoint optimizer kind mismatch")
    optimizer.load_state(doc["optimizer"])
    return params, optimizer, int(doc["epoch"]) + 1


# ---------------------------------------------------------------------------
# gradient workers


def _episode_gradient_task(args):
    topology, params, episode, loss_tag, k1, k2 = args
    T = max(1, episode.length)
    kk1 = k1 if k1 is not None else T
    kk2 = k2 if k2 is not None else T
    return tbptt_gradients(topology, params, episode.x, episode.y, episode.mask,
                           loss_tag, kk1, kk2)


def _batch_gradients(topology, params, episodes, config, pool):
    tasks = [(topology, params, ep, config.loss_tag, config.k1, config.k2)
             for ep in episodes]
    if pool is None:
        results = [_episode_gradient_task(t) for t in tasks]
    else:
        results = list(pool.map(_episode_gradient_task, tasks))
    total_loss = 0.0
    grad = np.zeros(params.count)
    for loss, g in results:      # fixed episode order: deterministic reduction
        total_loss += loss
        grad += g
    k = float(len(results))
    return total_loss / k, grad / k


# ---------------------------------------------------------------------------
# training


def train(topology: NetworkTopology, dataset: Dataset, config: TrainConfig,
          eval_dataset: Dataset | None = None, run_dir: str | None = None,
          resume: str | None = None, resume_force: bool = False,
          params: ParameterSet | None = None,
          pong_config: PongConfig | None = None,
          ) -> tuple[ParameterSet, list[MetricsRow]]:
    """Optimize parameters on a dataset. Returns (params, metrics history)."""
    config.validate()
    if dataset.n_inputs != topology.n_inputs or dataset.n_outputs != topology.n_outputs:
        raise ValueError(
            f"dataset dims {dataset.n_inputs}x{dataset.n_outputs} do not match "
            f"topology {topology.n_inputs}x{topology.n_outputs}")
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)

    if resume:
        params, optimizer, start_epoch = load_checkpoint(resume, topology, config,
                                                         force=resume_force)
    else:
        if params is None:
            params = ParameterSet.from_topology(topology)
        optimizer = make_optimizer(config)
        start_epoch = 1

    metrics_path = os.path.join(run_dir, "metrics.csv") if run_dir else None
    if metrics_path and start_epoch == 1:
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.write(METRICS_HEADER + "\n")

    pool = None
    if config.workers > 1:
        pool = concurrent.futures.ProcessPoolExecutor(max_workers=config.workers)
    metrics: list[MetricsRow] = []
    t_start = time.perf_counter()
    try:
        for epoch in range(start_epoch, config.epochs + 1):
            order = list(range(len(dataset)))
            Rng(derive_seed(config.seed, 0x5F1E, epoch)).shuffle(order)
            epoch_loss = 0.0
            seen = 0
            for lo in range(0, len(order), config.batch_size):
                batch = [dataset.episodes[i] for i in order[lo:lo + config.batch_size]]
                try:
                    loss, grad = _batch_gradients(topology, params, batch, config,
                                                  pool)
                except FloatingPointError as exc:
                    # parameters blew up far enough to break the forward pass
                    loss, grad = float("nan"), None
                    blame = str(exc)
                else:
                    blame = f"loss {loss}"
                if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                    if run_dir:
                        save_checkpoint(os.path.join(run_dir, "diverged.ckpt"),
                                        params, optimizer, epoch, config, topology)
                    raise DivergenceError(
                        f"{blame} at epoch {epoch}, batch {lo // config.batch_size}")
                grad = clip_global_norm(grad, config.grad_clip)
                optimizer.update(params.flat, grad)
                epoch_loss += loss * len(batch)
                seen += len(batch)
            train_loss = epoch_loss / max(1, seen)

            if epoch % config.eval_stride == 0 or epoch == config.epochs:
                eval_loss, task_metric = _evaluate(topology, params, config,
                                                   eval_dataset, pong_config)
                row = MetricsRow(epoch=epoch, train_loss=train_loss,
                                 eval_loss=eval_loss, task_metric=task_metric,
                                 wall_time=time.perf_counter() - t_start)
                metrics.append(row)
                if metrics_path:
                    with open(metrics_path, "a", encoding="utf-8") as fh:
                        fh.write(format_metrics_row(row) + "\n")
            if (config.checkpoint_stride and run_dir
                    and epoch % config.checkpoint_stride == 0):
                save_checkpoint(os.path.join(run_dir, f"epoch{epoch:04d}.ckpt"),
                                params, optimizer, epoch, config, topology)
        if run_dir:
            save_checkpoint(os.path.join(run_dir, "final.ckpt"), params, optimizer,
                            config.epochs, config, topology)
    finally:
        if pool is not None:
            pool.shutdown()
    return params, metrics


def pavlov_recipe(topology_seed: int = 42):
    """Documented default recipe for the conditioning task.

    Returns (topology, initial params, train config). Rate neurons,
    16 hidden at density 0.4, hebbian plasticity on the hidden block and
    on edges into the output, direct stimulus-to-output edges (the
    response must react to the previous stimulus, which is one edge away),
    logit cross-entropy, adaptive moments at 3e-3.
    """
    from .topology import build_random
    topology = build_random(16, 0.4, seed=topology_seed, model="rate",
                            n_inputs=2, n_outputs=1, plastic_rule="hebbian",
                            plastic_scope="readout", direct_io=True)
    params = ParameterSet.from_topology(
        topology, PlasticityMeta(learn_rate_init=0.3, retention_init=0.98))
    config = TrainConfig(loss_tag="bce", optimizer="adam", learning_rate=3e-3,
                         batch_size=32, epochs=80, seed=0, task="pavlov")
    return topology, params, config


def pong_recipe(topology_seed: int = 42):
    """Documented default recipe for the paddle-imitation task.

    Softmax cross-entropy over the three action neurons, truncated
    backpropagation with an 8-step stride and 16-step depth.
    """
    from .topology import build_random
    topology = build_random(16, 0.4, seed=topology_seed, model="rate",
                            n_inputs=5, n_outputs=3, plastic_rule="hebbian",
                            plastic_scope="hidden", direct_io=True)
    params = ParameterSet.from_topology(topology)
    config = TrainConfig(loss_tag="cce", optimizer="adam", learning_rate=3e-3,
                         batch_size=32, epochs=12, k1=8, k2=16, seed=0,
                         task="pong")
    return topology, params, config


def _evaluate(topology, params, config, eval_dataset, pong_config):
    eval_loss = float("nan")
    task_metric = float("nan")
    if eval_dataset is not None and len(eval_dataset):
        total = 0.0
        for ep in eval_dataset.episodes:
            total += episode_loss(topology, params, ep.x, ep.y, ep.mask,
                                  config.loss_tag)
        eval_loss = total / len(eval_dataset)
        if config.task == "pavlov":
            task_metric, _ = eval_pavlov_acquisition(params, topology, eval_dataset,
                                                     loss_tag=config.loss_tag)
    if config.task == "pong":
        result = eval_pong_closed_loop(params, topology,
                                       pong_config or PongConfig(),
                                       n_rollouts=config.eval_rollouts,
                                       seed=config.seed)
        task_metric = result["hit_rate"]
    return eval_loss, task_metric


# ---------------------------------------------------------------------------
# evaluations


def output_threshold(values: np.ndarray, loss_tag: str) -> np.ndarray:
    """Binarize predictions: logits cross at 0, plain values at 0.5."""
    cut = 0.0 if loss_tag == "bce" else 0.5
    return (values > cut).astype(np.float64)


def _acquisition_from_predictions(predictions, dataset: Dataset,
                                  loss_tag: str = "bce"):
    """Per-episode test-stage exact-match accuracy plus a breakdown."""
    rows = []
    correct = 0
    for idx, (pred, ep) in enumerate(zip(predictions, dataset.episodes)):
        stages = ep.meta.get("stages")
        if stages is None or "test" not in stages:
            raise ValueError(f"episode {idx} has no test-stage annotation")
        lo, hi = stages["test"]
        want = ep.y[lo:hi, 0]
        got = output_threshold(np.asarray(pred)[lo:hi, 0], loss_tag)
        ok = bool(np.array_equal(got, want))
        correct += ok
        rows.append({"episode": idx, "pairings": ep.meta.get("pairings"),
                     "correct": ok,
                     "predicted": got.tolist(), "target": want.tolist()})
    accuracy = correct / max(1, len(dataset))
    return accuracy, rows


def eval_pavlov_acquisition(params: ParameterSet, topology: NetworkTopology,
                            dataset: Dataset, loss_tag: str = "bce"):
    """Fraction of episodes whose thresholded test-stage predictions match
    the ground truth at every test step. Returns (accuracy, breakdown)."""
    if dataset.n_inputs != topology.n_inputs or dataset.n_outputs != topology.n_outputs:
        raise ValueError("dataset dims do not match topology")
    predictions = []
    for ep in dataset.episodes:
        state = fresh_state(topology, params)
        ys = np.zeros((ep.length, topology.n_outputs))
        for t in range(ep.length):
            res, state = step(state, ep.x[t], topology, params)
            ys[t] = res.y
        predictions.append(ys)
    return _acquisition_from_predictions(predictions, dataset, loss_tag)


def run_pong_policy(policy, env_config: PongConfig, n_rollouts: int,
                    seed: int) -> dict:
    """Closed-loop evaluation of an action policy ``(obs, reset) -> action``."""
    hits = 0
    approaches = 0
    lengths = []
    for r in range(n_rollouts):
        env = PongEnv(env_config, Rng(derive_seed(seed, 0xE41, r)))
        first = True
        while not env.done:
            action = policy(env.observation(), first)
            first = False
            env.step(action)
        hits += env.hits
        approaches += env.approaches
        lengths.append(env.steps)
    return {"hit_rate": hits / max(1, approaches),
            "mean_episode_length": float(np.mean(lengths)),
            "approaches": approaches}


def eval_pong_closed_loop(params: ParameterSet, topology: NetworkTopology,
                          env_config: PongConfig, n_rollouts: int = 200,
                          seed: int = 0) -> dict:
    """Run the trained network in the live environment (argmax action) and
    measure hit rate against a uniform-random baseline."""
    if topology.n_inputs != 5 or topology.n_outputs != 3:
        raise ValueError("pong policy needs a 5-input, 3-output network")

    state_box = {}

    def net_policy(obs, reset):
        if reset:
            state_box["state"] = fresh_state(topology, params)
        res, state_box["state"] = step(state_box["state"], obs, topology, params)
        return action_from_index(int(np.argmax(res.y)))

    result = run_pong_policy(net_policy, env_config, n_rollouts, seed)

    baseline_rng = Rng(derive_seed(seed, 0xBA5E))

    def random_policy(obs, reset):
        return baseline_rng.randrange(-1, 1)

    baseline = run_pong_policy(random_policy, env_config, n_rollouts, seed)
    result["baseline_random"] = baseline["hit_rate"]
    return result
