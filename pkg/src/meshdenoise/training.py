"""Cascaded training: data balancing, Adam, the remapped-normal MSE loss.

Stage 1 trains on patches from the raw noisy meshes; each later stage
trains on patches regenerated after denoising the training meshes with
every stage so far. Facet classes come from the clean meshes and are
balanced so feature patches dominate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gcn import Cascade, GcnModel, gcn_forward, predict_normal, prepare_batch, stage_config
from .mesh import TriangleMesh
from .patches import PatchGraph
from .pipeline import build_graphs, regress_normals, update_vertices
from .voting import balance_samples, classify_mesh


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the last valid state."""

    def __init__(self, cascade: Cascade, records: list["LogRecord"], states: list[dict]):
        super().__init__("training diverged (non-finite loss)")
        self.cascade = cascade
        self.records = records
        self.states = states


@dataclass(frozen=True)
class TrainSettings:
    stages: int = 2
    epochs: tuple[int, ...] = (24, 16)
    batch_size: int = 128
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    k: float = 4.0
    node_budget: int = 64
    knn: int = 8
    balance_ratio: float = 1.5
    width_divisor: int = 1
    seed: int = 0
    val_fraction: float = 0.1
    vertex_iterations: int = 15
    threads: int = 1

    def epochs_for(self, stage: int) -> int:
        return self.epochs[min(stage, len(self.epochs) - 1)]


def desk_scale_settings(**overrides) -> TrainSettings:
    """Reduced preset for CPU runs: quarter channel widths, epochs (8, 4).

    Batch 32 and lr 1e-3 replace the full-scale defaults: with desk-sized
    datasets the full-scale schedule yields too few optimizer steps to
    leave the initialization basin.
    """
    base = TrainSettings(width_divisor=4, epochs=(8, 4), batch_size=32, learning_rate=1e-3)
    return replace(base, **overrides)


@dataclass
class LogRecord:
    stage: int
    epoch: int
    mean_loss: float
    val_ea: float

    def line(self) -> str:
        return f"{self.stage}\t{self.epoch}\t{self.mean_loss:.6e}\t{self.val_ea:.4f}"


class Adam:
    """Adam with bias correction over a model's named parameters."""

    def __init__(
        self,
        named_params: list[tuple[str, Tensor]],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = named_params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in named_params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self) -> bool:
        """Apply one update; skipped entirely if any gradient is non-finite."""
        grads = {}
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                return False
            grads[name] = g
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return True

    def state_dict(self) -> dict:
        out = {"t": np.array([float(self.t)])}
        for name in self.m:
            out[f"m:{name}"] = self.m[name]
            out[f"v:{name}"] = self.v[name]
        return out

    def load_state(self, state: dict) -> None:
        if not state:
            return
        self.t = int(state["t"][0])
        for name in self.m:
            self.m[name] = np.array(state[f"m:{name}"])
            self.v[name] = np.array(state[f"v:{name}"])


def map_to_targets(normals: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Rotate ground-truth normals into patch frames, map (-1,1) to (0,1)."""
    aligned = np.einsum("bji,bj->bi", rotations, normals)
    return 0.5 * (aligned + 1.0)


def loss_mse(prediction: Tensor, target_normals: np.ndarray, rotations: np.ndarray) -> Tensor:
    """Mean squared error against remapped ground-truth normals."""
    target_normals = np.asarray(target_normals, dtype=np.float64)
    norms = np.linalg.norm(target_normals, axis=-1)
    if not np.allclose(norms, 1.0, atol=1e-6):
        raise ValueError("target normals must be unit length")
    mapped = map_to_targets(target_normals, np.asarray(rotations, dtype=np.float64))
    diff = ad.sub(prediction, mapped)
    return ad.reduce_mean(ad.mul(diff, diff))


@dataclass
class PatchSample:
    graph: PatchGraph
    target: np.ndarray  # clean unit normal, mesh frame


def _angles_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dots = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
    return np.degrees(np.arccos(dots))


def build_stage_samples(
    noisy_meshes: list[TriangleMesh],
    clean_meshes: list[TriangleMesh],
    settings: TrainSettings,
    stage: int,
    label_cache: dict[int, list] | None = None,
) -> list[PatchSample]:
    """Balanced patch samples for one cascade stage.

    Faces are selected on the clean meshes (feature classes never change
    across stages or noise variants); graphs are built on the stage's
    current noisy meshes.
    """
    samples: list[PatchSample] = []
    cache = label_cache if label_cache is not None else {}
    for pair_idx, (noisy, clean) in enumerate(zip(noisy_meshes, clean_meshes)):
        if noisy.n_faces != clean.n_faces:
            raise ValueError(f"pair {pair_idx}: noisy/clean face counts differ")
        if id(clean) not in cache:
            cache[id(clean)] = classify_mesh(clean, settings.k)
        labels = cache[id(clean)]
        sel_seed = settings.seed * 1_000_003 + stage * 7919 + pair_idx
        selected = balance_samples(list(enumerate(labels)), settings.balance_ratio, sel_seed)
        clean_normals = clean.face_normals
        degenerate = clean.face_geometry.degenerate
        faces = [f for f in selected if not degenerate[f]]
        graphs = build_graphs(
            noisy, faces, settings.k, settings.node_budget, settings.seed, settings.threads
        )
        for face, graph in zip(faces, graphs):
            samples.append(PatchSample(graph, clean_normals[face].copy()))
    return samples


def _validation_ea(model: GcnModel, samples: list[PatchSample], batch_size: int) -> float:
    if not samples:
        return float("nan")
    preds = np.zeros((len(samples), 3))
    targets = np.stack([s.target for s in samples])
    with ad.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            attrs, nbr, valid = prepare_batch([s.graph for s in chunk])
            raw = gcn_forward(model, attrs, nbr, valid, training=False).data
            for i, s in enumerate(chunk):
                preds[start + i], _ = predict_normal(raw[i], s.graph.rotation, s.target)
    return float(_angles_deg(preds, targets).mean())


def train_cascade(
    pairs: list[tuple[TriangleMesh, TriangleMesh]],
    settings: TrainSettings,
    resume: tuple[Cascade, list[dict]] | None = None,
    log_fh=None,
) -> tuple[Cascade, list[LogRecord], list[dict]]:
    """Train the cascade on (noisy, clean) mesh pairs.

    Returns the cascade, per-epoch log records and Adam states. A
    non-finite loss aborts with :class:`TrainingDiverged` carrying the
    last valid state.
    """
    if not pairs:
        raise ValueError("empty training set")
    noisy_meshes = [n for n, _ in pairs]
    clean_meshes = [c for _, c in pairs]
    models: list[GcnModel] = []
    states: list[dict] = []
    records: list[LogRecord] = []
    label_cache: dict[int, list] = {}
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([settings.seed, 0x747261])))

    for stage in range(settings.stages):
        cfg = stage_config(stage, settings.node_budget, settings.knn, settings.width_divisor)
        model = GcnModel(cfg, seed=settings.seed + stage * 7919)
        adam = Adam(
            model.named_parameters(),
            lr=settings.learning_rate,
            beta1=settings.beta1,
            beta2=settings.beta2,
            eps=settings.adam_eps,
        )
        if resume is not None and stage < len(resume[0].models):
            saved = resume[0].models[stage]
            if saved.config != cfg:
                raise ValueError(f"stage {stage}: checkpoint config does not match settings")
            for (_, p), (_, q) in zip(model.named_parameters(), saved.named_parameters()):
                p.data = q.data.copy()
            for name, buf in saved.named_buffers():
                model.set_buffer(name, buf)
            model.step_count = saved.step_count
            adam.load_state(resume[1][stage])
            adam.t = max(adam.t, model.step_count)

        samples = build_stage_samples(noisy_meshes, clean_meshes, settings, stage, label_cache)
        if not samples:
            raise ValueError(f"stage {stage}: no training samples")
        perm = rng.permutation(len(samples))
        n_val = min(len(samples) - 1, int(round(settings.val_fraction * len(samples))))
        val = [samples[i] for i in perm[:n_val]]
        train = [samples[i] for i in perm[n_val:]]

        for epoch in range(settings.epochs_for(stage)):
            order = rng.permutation(len(train))
            losses = []
            for start in range(0, len(train), settings.batch_size):
                batch = [train[i] for i in order[start : start + settings.batch_size]]
                attrs, nbr, valid = prepare_batch([s.graph for s in batch])
                adam.zero_grad()
                pred = gcn_forward(model, attrs, nbr, valid, training=True)
                targets = np.stack([s.target for s in batch])
                rotations = np.stack([s.graph.rotation for s in batch])
                loss = loss_mse(pred, targets, rotations)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(
                        Cascade(models + [model], k=settings.k), records, states + [adam.state_dict()]
                    )
                loss.backward()
                if adam.step():
                    model.step_count = adam.t
                losses.append(loss.item())
            record = LogRecord(stage, epoch, float(np.mean(losses)), _validation_ea(model, val, settings.batch_size))
            records.append(record)
            if log_fh is not None:
                log_fh.write(record.line() + "\n")
                log_fh.flush()

        models.append(model)
        states.append(adam.state_dict())

        if stage < settings.stages - 1:
            updated = []
            for mesh in noisy_meshes:
                normals, _ = regress_normals(
                    mesh, model, settings.k, threads=settings.threads, seed=settings.seed
                )
                updated.append(update_vertices(mesh, normals, settings.vertex_iterations))
            noisy_meshes = updated

    return Cascade(models, k=settings.k), records, states
