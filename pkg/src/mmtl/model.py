"""Full network assembly: two image branches (stem + dual-path blocks), the
joint branch, the fusion stage, and one classifier head per active task.

Dropped modalities contribute an all-zero feature map and carry no
parameters; ablation flags swap fusion and scan behavior per the config.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .blocks import BlockParams, StemParams, block_stack, init_block, \
    init_stem, stem, EXTERIOR_VIEWS, INTERIOR_VIEWS
from .config import ModelConfig
from .data import SampleBundle
from .errors import InputError
from .fusion import ConcatFuseParams, GateParams, ModalityFeatures, concat_fuse, \
    fuse_all, init_concat_fuse, init_gate_params
from .heads import HeadParams, TaskSpec, head_forward, init_head
from .joints import JointBranchParams, init_joint_branch, joints_forward
from .serial import dump_tensor, load_tensor
from .tensor import Tensor, zeros


@dataclass
class ForwardResult:
    logits: Dict[str, Tensor]
    telemetry: Optional[np.ndarray]   # [4, 3] mean gate weights, or None


class Model:
    """Parameter container plus the per-sample forward pass."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng([config.seed, 0x5EED])
        c, h, w = config.channels, config.height, config.width
        t, n = config.frame_count, config.state_dim

        self.stem_exterior: Optional[StemParams] = None
        self.blocks_exterior: List[BlockParams] = []
        self.stem_interior: Optional[StemParams] = None
        self.blocks_interior: List[BlockParams] = []
        self.joint_branch: Optional[JointBranchParams] = None

        if "exterior" in config.active_modalities:
            self.stem_exterior = init_stem(EXTERIOR_VIEWS, t, c, h, w, rng)
            self.blocks_exterior = [init_block(c, t, h, w, n, rng)
                                    for _ in range(config.block_depth)]
        if "interior" in config.active_modalities:
            self.stem_interior = init_stem(INTERIOR_VIEWS, t, c, h, w, rng)
            self.blocks_interior = [init_block(c, t, h, w, n, rng)
                                    for _ in range(config.block_depth)]
        if "joints" in config.active_modalities:
            self.joint_branch = init_joint_branch(config.joint_count, c, h, w, rng)

        self.concat_params: Optional[ConcatFuseParams] = None
        self.gate_params: Optional[GateParams] = None
        if config.no_mgmi:
            self.concat_params = init_concat_fuse(c, rng)
        else:
            num_gates = 1 if config.no_multi_gating else len(config.active_tasks)
            self.gate_params = init_gate_params(
                c, rng, num_gates=num_gates,
                with_attention=not config.no_self_attention)

        self.task_specs = [TaskSpec(task, config.num_classes(task))
                           for task in config.active_tasks]
        self.heads: Dict[str, HeadParams] = {
            spec.task_id: init_head(c, spec.num_classes) for spec in self.task_specs}

        self._params = self._collect_params()

    # -- parameter registry -------------------------------------------------

    def _collect_params(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}

        def register(prefix, tensors):
            for name, tensor in tensors.items():
                out[f"{prefix}.{name}"] = tensor

        if self.stem_exterior is not None:
            register("stem_exterior", self.stem_exterior.tensors())
            for i, b in enumerate(self.blocks_exterior):
                register(f"blocks_exterior.{i}", b.tensors())
        if self.stem_interior is not None:
            register("stem_interior", self.stem_interior.tensors())
            for i, b in enumerate(self.blocks_interior):
                register(f"blocks_interior.{i}", b.tensors())
        if self.joint_branch is not None:
            register("joints", self.joint_branch.tensors())
        if self.concat_params is not None:
            register("fusion", self.concat_params.tensors())
        if self.gate_params is not None:
            tensors = {k: v for k, v in self.gate_params.tensors().items()
                       if v is not None}
            register("fusion", tensors)
        for task, headp in self.heads.items():
            register(f"head_{task}", headp.tensors())
        return out

    def parameters(self) -> Dict[str, Tensor]:
        return self._params

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.size for p in self._params.values())

    def param_breakdown(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for name, p in self._params.items():
            module = name.split(".", 1)[0]
            out[module] = out.get(module, 0) + p.size
        return out

    # -- forward ------------------------------------------------------------

    def _branch(self, views, stem_p, blocks) -> Tensor:
        feat = stem(list(views), stem_p)
        return block_stack(feat, blocks,
                           single_direction=self.config.no_dual_scan,
                           local_only=self.config.no_global_local)

    def forward_sample(self, bundle: SampleBundle, train: bool = False) -> ForwardResult:
        cfg = self.config
        shape = (cfg.channels, cfg.height, cfg.width)

        if self.stem_exterior is not None:
            h1 = self._branch(bundle.exterior, self.stem_exterior, self.blocks_exterior)
        else:
            h1 = zeros(shape)
        if self.stem_interior is not None:
            h2 = self._branch(bundle.interior, self.stem_interior, self.blocks_interior)
        else:
            h2 = zeros(shape)
        if self.joint_branch is not None:
            h3 = joints_forward(bundle.joints, self.joint_branch, train=train)
        else:
            h3 = zeros(shape)

        m = ModalityFeatures(h1, h2, h3)
        telemetry = None
        if self.concat_params is not None:
            fused = concat_fuse(m, self.concat_params)
            feats = [fused] * len(self.task_specs)
        else:
            feats, telemetry = fuse_all(m, self.gate_params, train=train,
                                        num_tasks=len(self.task_specs))
        logits = {spec.task_id: head_forward(feats[i], self.heads[spec.task_id])
                  for i, spec in enumerate(self.task_specs)}
        return ForwardResult(logits=logits, telemetry=telemetry)

    def predict(self, bundle: SampleBundle) -> Dict[str, int]:
        result = self.forward_sample(bundle, train=False)
        return {task: int(np.argmax(lg.data)) for task, lg in result.logits.items()}

    # -- weight dump / load --------------------------------------------------

    def save_weights(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, p in self._params.items():
            dump_tensor(p, d / (name + ".t3tn"))

    def load_weights(self, directory) -> None:
        d = Path(directory)
        for name, p in self._params.items():
            path = d / (name + ".t3tn")
            if not path.exists():
                raise InputError(f"missing weight file {path}")
            loaded = load_tensor(path)
            if loaded.shape != p.shape:
                raise InputError(f"{name}: stored shape {loaded.shape} != {p.shape}")
            p.data = loaded.data


def count_params(config: ModelConfig):
    """Exact learnable-scalar count plus the per-module breakdown."""
    model = Model(config)
    return model.param_count(), model.param_breakdown()
