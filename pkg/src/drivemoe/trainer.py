"""Two-stage training.

Stage 1 forces the labeled camera and the labeled expert while both routers
learn from their cross-entropy terms. Stage 2 starts from a stage-1 checkpoint
and lets the routers choose. All randomness is keyed by ``(seed, step, slot)``
so splitting a batch into micro-batches changes nothing but rounding.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .action_moe import LAMBDA_ROUTER_STAGE1, LAMBDA_ROUTER_STAGE2, gate_stats
from .checkpoint import CHECKPOINT_VERSION, CheckpointError, load_checkpoint, read_header, save_checkpoint
from .dataset import Dataset
from .model import Draws, DrivePolicy, LossWeights, ModelConfig
from .numerics import Adam, OptimizerConfig, backprop, no_grad
from .planner import TrajectoryNormalizer

STAGE_EPOCHS = {1: 10, 2: 5}


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int | None = None  # None: 10 for stage 1, 5 for stage 2
    batch_size: int = 64
    micro_batch: int | None = None  # split each batch for gradient accumulation
    max_steps: int | None = None  # optional cap on optimizer steps
    learning_rate: float = 1e-3
    warmup_steps: int = 50
    max_grad_norm: float = 1.0
    lambda0: float = 0.05
    lambda1: float = 1.0
    lambda2: float | None = None  # None: 0.03 for stage 1, 0.025 for stage 2
    lambda3: float = 0.01
    load_balance: bool = True
    noise_std: float = 0.1
    seed: int = 0
    val_fraction: float = 0.05
    log_every: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.epochs is None:
            self.epochs = STAGE_EPOCHS[self.stage]
        if self.lambda2 is None:
            self.lambda2 = LAMBDA_ROUTER_STAGE1 if self.stage == 1 else LAMBDA_ROUTER_STAGE2
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.micro_batch is not None and (self.micro_batch < 1 or self.batch_size % self.micro_batch):
            raise ValueError("micro_batch must divide batch_size")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda0, self.lambda1, self.lambda2, self.lambda3 if self.load_balance else 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def for_stage2(self, **overrides) -> "TrainConfig":
        """Stage-2 config inheriting every hyperparameter except the stage defaults."""
        d = {**self.to_dict(), "stage": 2, "epochs": None, "lambda2": None, **overrides}
        return TrainConfig.from_dict(d)


@dataclass
class TrainState:
    policy: DrivePolicy
    optimizer: Adam
    step: int = 0
    epoch: int = 0
    position: int = 0  # batches consumed within the current epoch
    history: list = field(default_factory=list)


def make_optimizer(policy: DrivePolicy, cfg: TrainConfig) -> Adam:
    return Adam(policy.parameters(), OptimizerConfig(cfg.learning_rate, cfg.warmup_steps, cfg.max_grad_norm))


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 104729]).permutation(n)


def _accuracy(pred, label) -> float | None:
    if pred is None or label is None:
        return None
    return float(np.mean(np.asarray(pred) == np.asarray(label)))


class Trainer:
    """Runs one stage over ``dataset[train_idx]``."""

    def __init__(self, config: TrainConfig, dataset: Dataset, state: TrainState | None = None,
                 log_path=None, train_idx=None, val_idx=None):
        self.cfg = config
        self.ds = dataset
        if config.stage == 1 and config.model.is_moe and not dataset.labeled:
            raise ValueError("stage 1 needs view and skill labels; run annotate first")
        if train_idx is None:
            train_idx, val_idx = dataset.split(config.val_fraction, config.seed)
        self.train_idx = np.asarray(train_idx)
        self.val_idx = np.asarray(val_idx if val_idx is not None else [], dtype=np.int64)
        if self.train_idx.size == 0:
            raise ValueError("empty training split")
        if state is None:
            policy = DrivePolicy(config.model, np.random.default_rng([config.seed, 1]))
            policy.normalizer = TrajectoryNormalizer.fit(dataset.traj[self.train_idx])
            state = TrainState(policy, make_optimizer(policy, config))
        self.state = state
        self.log_path = Path(log_path) if log_path else None
        self.header_extra: dict = {}  # merged into checkpoint headers (e.g. the resolved run config)

    @property
    def policy(self) -> DrivePolicy:
        return self.state.policy

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.train_idx.size / self.cfg.batch_size)

    @property
    def total_steps(self) -> int:
        n = self.steps_per_epoch * self.cfg.epochs
        return n if self.cfg.max_steps is None else min(n, self.cfg.max_steps)

    def _log(self, record: dict, history: bool = True) -> None:
        if history:
            self.state.history.append(record)
        if self.log_path is not None:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def next_batch(self) -> np.ndarray:
        st, bs = self.state, self.cfg.batch_size
        if st.position >= self.steps_per_epoch:
            st.epoch += 1
            st.position = 0
        order = epoch_order(self.train_idx.size, self.cfg.seed, st.epoch)
        pick = order[st.position * bs:(st.position + 1) * bs]
        st.position += 1
        return self.train_idx[pick]

    def train_step(self, idx: np.ndarray) -> dict:
        """One optimizer step on frames ``idx`` (accumulated over micro-batches)."""
        cfg, st = self.cfg, self.state
        pol = st.policy
        n = len(idx)
        micro = cfg.micro_batch or n
        mc = cfg.model
        draws = Draws.for_samples([[cfg.seed, cfg.stage, st.step, i] for i in range(n)],
                                  mc.decoder_blocks, mc.n_experts)
        sums: dict[str, float] = {}
        gates, vpred, apred = [], [], []
        for lo in range(0, n, micro):
            sl = slice(lo, min(n, lo + micro))
            batch = self.ds.batch(idx[sl])
            d = Draws(draws.tau[sl], draws.eps[sl], draws.router_normal[sl])
            out = pol.losses(batch, cfg.stage, d, cfg.weights, cfg.noise_std, scale=(sl.stop - sl.start) / n)
            backprop(out["total"], pol.parameters(), warn_disconnected=False)
            frac = (sl.stop - sl.start) / n
            for k, v in out["parts"].items():
                sums[k] = sums.get(k, 0.0) + frac * float(v.item())
            gates.extend(out["gates"])
            if out["view_probs"] is not None:
                vpred.append(out["view_probs"].top1())
            if mc.n_experts > 1:
                apred.append(np.argmax(np.mean([g.probs.data for g in out["gates"]], axis=0), axis=-1))
        opt_stats = st.optimizer.step(st.step + 1)
        st.step += 1
        lam = out["weights"]
        total = sum(lam[k] * sums[k] for k in sums if lam.get(k, 0.0) != 0.0)
        ds = self.ds
        record = {"kind": "train", "stage": cfg.stage, "step": st.step, "epoch": st.epoch,
                  "lr": opt_stats["lr"], "grad_norm": opt_stats["grad_norm"], "losses": sums,
                  "weights": lam, "total": total}
        if mc.n_experts > 1:
            record["gates"] = gate_stats(gates)
            if ds.skill_label is not None:
                record["action_acc"] = _accuracy(np.concatenate(apred), ds.skill_label[idx])
        if vpred and ds.view_label is not None:
            record["vision_acc"] = _accuracy(np.concatenate(vpred), ds.view_label[idx])
        return record

    def validate(self, idx=None, batch_size: int = 128) -> dict:
        idx = self.val_idx if idx is None else np.asarray(idx)
        if idx.size == 0:
            return {}
        return evaluate_routing(self.policy, self.ds, idx, batch_size, seed=self.cfg.seed,
                                weights=self.cfg.weights, stage=self.cfg.stage)

    def run(self, checkpoint_path=None) -> TrainState:
        st = self.state
        self._log({"kind": "config", "stage": self.cfg.stage, "step": st.step, "seed": self.cfg.seed,
                   "config": self.cfg.to_dict(), **self.header_extra}, history=False)
        while st.step < self.total_steps:
            record = self.train_step(self.next_batch())
            last = st.step == self.total_steps
            if st.step % self.cfg.log_every == 0 or last:
                self._log(record)
            if st.position >= self.steps_per_epoch or last:
                val = self.validate()
                if val:
                    self._log({"kind": "val", "stage": self.cfg.stage, "step": st.step, "epoch": st.epoch, **val})
        if checkpoint_path is not None:
            save_trainer_checkpoint(checkpoint_path, self)
        return st


def evaluate_routing(policy: DrivePolicy, ds: Dataset, idx, batch_size: int = 128, seed: int = 0,
                     weights: LossWeights | None = None, stage: int = 2) -> dict:
    """Router top-1 accuracies and flow-matching loss on frames ``idx`` (fixed draws)."""
    idx = np.asarray(idx)
    vis, act, fm, n = [], [], 0.0, 0
    mc = policy.config
    for lo in range(0, idx.size, batch_size):
        sub = idx[lo:lo + batch_size]
        batch = ds.batch(sub)
        v, a = policy.route(batch)
        if v is not None:
            vis.append(v)
        if a is not None:
            act.append(a)
        if weights is not None:
            draws = Draws.for_samples([[seed, 99991, int(i)] for i in sub], mc.decoder_blocks, mc.n_experts)
            with no_grad():
                out = policy.losses(batch, stage, draws, weights, noise_std=0.0)
            fm += float(out["parts"]["fm"].item()) * len(sub)
            n += len(sub)
    out = {}
    if vis and ds.view_label is not None:
        out["vision_acc"] = _accuracy(np.concatenate(vis), ds.view_label[idx])
    if act and ds.skill_label is not None:
        out["action_acc"] = _accuracy(np.concatenate(act), ds.skill_label[idx])
    if n:
        out["fm"] = fm / n
    return out


# checkpoints ------------------------------------------------------------------
def save_trainer_checkpoint(path, trainer: Trainer) -> Path:
    st = trainer.state
    arrays = {f"param/{k}": v for k, v in st.policy.state_arrays().items()}
    arrays.update({f"opt/{k}": v for k, v in st.optimizer.state_arrays().items()})
    header = {"kind": "drivemoe-train", "stage": trainer.cfg.stage, "config": trainer.cfg.to_dict(),
              "step": st.step, "epoch": st.epoch, "position": st.position, "opt_t": st.optimizer.t,
              "normalizer": st.policy.normalizer.to_dict(),
              "rng": {"seed": trainer.cfg.seed, "epoch": st.epoch, "position": st.position},
              "train_idx": trainer.train_idx.tolist(), "val_idx": trainer.val_idx.tolist(),
              **trainer.header_extra}
    return save_checkpoint(path, arrays, header)


def _restore(path, model_cfg: ModelConfig | None = None):
    arrays, header = load_checkpoint(path)
    if header.get("kind") != "drivemoe-train":
        raise CheckpointError(f"{path} is not a training checkpoint")
    cfg = TrainConfig.from_dict(header["config"])
    policy = DrivePolicy(model_cfg or cfg.model, np.random.default_rng(0))
    policy.load_state_arrays({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
    policy.normalizer = TrajectoryNormalizer.from_dict(header["normalizer"])
    return arrays, header, cfg, policy


def load_policy(path) -> tuple[DrivePolicy, dict]:
    _, header, _, policy = _restore(path)
    return policy, header


def resume_trainer(path, dataset: Dataset, log_path=None, **overrides) -> Trainer:
    """Continue a run exactly where the checkpoint left off.

    ``overrides`` replace run-length fields such as ``max_steps`` or ``epochs``.
    """
    arrays, header, cfg, policy = _restore(path)
    if overrides:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    opt = make_optimizer(policy, cfg)
    opt.load_state_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("opt/")}, header["opt_t"])
    state = TrainState(policy, opt, header["step"], header["epoch"], header["position"])
    return Trainer(cfg, dataset, state, log_path, header["train_idx"], header["val_idx"])


def run_stage1(config: TrainConfig, dataset: Dataset, checkpoint_path=None, log_path=None,
               extra: dict | None = None) -> Trainer:
    if config.stage != 1:
        raise ValueError("run_stage1 needs a stage-1 config")
    trainer = Trainer(config, dataset, log_path=log_path)
    trainer.header_extra = dict(extra or {})
    trainer.run(checkpoint_path)
    return trainer


def run_stage2(config: TrainConfig, checkpoint, dataset: Dataset, checkpoint_path=None, log_path=None,
               extra: dict | None = None) -> Trainer:
    """Router-driven training initialized from a stage-1 checkpoint (path or trainer)."""
    if config.stage != 2:
        raise ValueError("run_stage2 needs a stage-2 config")
    if isinstance(checkpoint, Trainer):
        policy, train_idx, val_idx = checkpoint.policy, checkpoint.train_idx, checkpoint.val_idx
        if checkpoint.cfg.stage != 1:
            raise ValueError("stage 2 must start from a stage-1 run")
    else:
        header = read_header(checkpoint)
        if header.get("version") != CHECKPOINT_VERSION or header.get("stage") != 1:
            raise CheckpointError("stage 2 needs a stage-1 checkpoint of the current version")
        _, header, _, policy = _restore(checkpoint, config.model)
        train_idx, val_idx = header["train_idx"], header["val_idx"]
    state = TrainState(policy, make_optimizer(policy, config))
    trainer = Trainer(config, dataset, state, log_path, train_idx, val_idx)
    trainer.header_extra = dict(extra or {})
    trainer.run(checkpoint_path)
    return trainer
