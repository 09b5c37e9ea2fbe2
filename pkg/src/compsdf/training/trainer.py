"""
Optimization loop: one image per step, 1024 pixels from it, Adam with separate learning rates
for the grid and the MLPs.

Output directory layout::

    config.json                      resolved run configuration
    checkpoints/checkpoint_%06d.bin  field and optimizer state
    losses.jsonl                     one loss record per logging interval
    previews/%06d.png                optional preview renders
    nonfinite_%06d.json              rays of a step whose loss was not finite
"""
import dataclasses
import json
import logging
import re
from pathlib import Path

import numpy as np
import torch
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.common.decorators import deterministic, gc_collect, log_duration
from compsdf.common.exceptions import TrainingError
from compsdf.common.utils import atomic_write_text, dump_json, iteration_seed
from compsdf.dataio.io import write_rgb
from compsdf.dataio.schema import SceneDataset
from compsdf.field.checkpoint import load_checkpoint, save_checkpoint
from compsdf.field.network import CompositionalField
from compsdf.rendering.rays import QuadratureSamples, RayBundle
from compsdf.rendering.renderer import VolumeRenderer, bundle_from_world, render_image
from compsdf.rendering.volume import RenderOutputs
from compsdf.training.config import RunConfig
from compsdf.training.losses import (
    LossComponents,
    LossRecord,
    RayBatchTargets,
    loss_depth,
    loss_distinction,
    loss_eikonal,
    loss_normal,
    loss_opacity,
    loss_rec,
    loss_total,
    solve_depth_scale_shift,
)

logger = logging.getLogger(__name__)

CHECKPOINT_PATTERN = re.compile(r'checkpoint_(\d+)\.bin$')


@dataclasses.dataclass
class RayBatch:
    image_id: int
    pixel_ids: np.ndarray
    ray_ids: np.ndarray
    bundle: RayBundle
    targets: RayBatchTargets

    def __len__(self) -> int:
        return len(self.bundle)


class Trainer:
    def __init__(self, dataset: SceneDataset, config: RunConfig, out_dir: str | Path):
        if not len(dataset):
            raise ValidationError(_('В наборе данных нет кадров'), code='no_frames')
        config.clean()
        self.dataset = dataset
        self.config = config
        self.out_dir = Path(out_dir)
        self.seed = config.train.resolved_seed
        torch.set_num_threads(config.train.resolved_threads)

        self.field = CompositionalField(dataset.num_objects, config.grid, config.model, background_channel=0, seed=self.seed)
        self.optimizer = torch.optim.Adam(
            self.field.parameter_groups(config.train.lr_grid, config.train.lr_mlp),
            betas=config.train.adam_betas,
            eps=config.train.adam_eps,
        )
        self.renderer = VolumeRenderer(self.field, config.train.n_coarse, config.train.n_fine)
        self.iteration = 0
        self._pending: list[LossRecord] = []

    @property
    def checkpoint_dir(self) -> Path:
        return self.out_dir / 'checkpoints'

    @property
    def log_path(self) -> Path:
        return self.out_dir / 'losses.jsonl'

    def latest_checkpoint(self) -> Path | None:
        if not self.checkpoint_dir.is_dir():
            return None
        found = [
            (int(match.group(1)), path)
            for path in self.checkpoint_dir.iterdir()
            if (match := CHECKPOINT_PATTERN.search(path.name))
        ]
        return max(found)[1] if found else None

    @classmethod
    def resume(cls, dataset: SceneDataset, config: RunConfig, out_dir: str | Path) -> 'Trainer':
        """
        Continue a run from the latest checkpoint of ``out_dir``; starts fresh when there is none.
        """
        trainer = cls(dataset, config, out_dir)
        path = trainer.latest_checkpoint()
        if path is None:
            return trainer
        checkpoint = load_checkpoint(path)
        if checkpoint.field.num_objects != dataset.num_objects:
            raise ValidationError(
                _('Чекпоинт обучен на %(saved)s объектах, а в наборе данных %(actual)s'),
                code='num_objects',
                params={'saved': checkpoint.field.num_objects, 'actual': dataset.num_objects},
            )
        trainer.field.load_state_dict(checkpoint.field.state_dict())
        if checkpoint.optimizer_state is not None:
            trainer.optimizer.load_state_dict(checkpoint.optimizer_state)
        trainer.iteration = checkpoint.iteration
        trainer._truncate_log()
        logger.info(f'Обучение продолжено с итерации {trainer.iteration}: {path}')
        return trainer

    def _truncate_log(self):
        if not self.log_path.exists():
            return
        lines = self.log_path.read_text().splitlines()
        kept = [line for line in lines if json.loads(line)['iter'] <= self.iteration]
        if len(kept) != len(lines):
            atomic_write_text(self.log_path, ''.join(f'{line}\n' for line in kept))

    def sample_batch(self, iteration: int) -> RayBatch:
        """One random image and up to ``rays_per_batch`` random pixels of it, fixed by seed and iteration."""
        rng = np.random.default_rng(iteration_seed(self.seed, iteration))
        image_id = int(rng.integers(len(self.dataset)))
        frame = self.dataset.frames[image_id]
        height, width = frame.shape
        count = min(self.config.train.rays_per_batch, height * width)
        pixel_ids = np.sort(rng.choice(height * width, size=count, replace=False))

        origins, directions = frame.camera.pixel_rays(pixel_ids)
        bundle, valid = bundle_from_world(origins, directions, self.dataset.normalization, dtype=self.field.dtype)
        pixel_ids = pixel_ids[valid]
        if pixel_ids.size < 2:
            raise ValidationError(
                _('Кадр %(frame)s почти не пересекает сцену'), code='empty_batch', params={'frame': image_id},
            )

        rows, cols = np.divmod(pixel_ids, width)
        dtype = self.field.dtype
        depth = frame.depth[rows, cols].astype(np.float64) * self.dataset.normalization.scale
        normal = frame.camera.to_world_frame(frame.normal[rows, cols].astype(np.float64))
        one_hot = np.eye(self.dataset.num_objects)[frame.mask[rows, cols].astype(np.int64)]
        targets = RayBatchTargets(
            color=torch.from_numpy(frame.rgb[rows, cols] / 255.0).to(dtype),
            object_opacity=torch.from_numpy(one_hot).to(dtype),
            depth=torch.from_numpy(depth).to(dtype),
            normal=torch.from_numpy(normal).to(dtype),
            image_ids=torch.full((pixel_ids.size,), image_id, dtype=torch.long),
            valid=torch.from_numpy(depth > 0),
        )
        return RayBatch(
            image_id=image_id,
            pixel_ids=pixel_ids,
            ray_ids=image_id * height * width + pixel_ids,
            bundle=bundle,
            targets=targets,
        )

    def compute_losses(
        self,
        batch: RayBatch,
        outputs: RenderOutputs,
        samples: QuadratureSamples,
        seed: int,
    ) -> LossComponents:
        train = self.config.train
        rng = np.random.default_rng(seed)
        dtype = self.field.dtype
        targets = batch.targets

        flat = samples.points.detach().reshape(-1, 3)
        picked = rng.choice(flat.shape[0], size=min(train.eikonal_points, flat.shape[0]), replace=False)
        uniform = torch.from_numpy(rng.random((train.eikonal_points, 3))).to(dtype)
        eikonal_points = torch.cat([flat[torch.from_numpy(picked)], uniform])
        gradient = self.field.spatial_gradient(eikonal_points, channels='all', create_graph=True)

        distinction_points = torch.from_numpy(rng.random((train.distinction_points, 3))).to(dtype)

        alignment = solve_depth_scale_shift(outputs.depth, targets.depth, targets.image_ids, targets.valid)
        return LossComponents(
            rec=loss_rec(outputs.color, targets),
            opacity=loss_opacity(outputs.object_opacity, targets),
            eikonal=loss_eikonal(gradient.objects, gradient.scene),
            distinction=loss_distinction(self.field(distinction_points).sdf),
            depth=loss_depth(outputs.depth, targets.depth, alignment, targets.valid),
            normal=loss_normal(outputs.normal, targets.normal, targets.valid),
        )

    def train_step(self, batch: RayBatch) -> LossRecord:
        """
        One Adam update on a batch of rays from a single image.
        :raise TrainingError: When the loss is not finite; the rays are dumped next to the checkpoints.
        """
        seed = iteration_seed(self.seed, self.iteration)
        self.field.train()
        self.optimizer.zero_grad(set_to_none=False)
        outputs, samples = self.renderer.render(batch.bundle, seed, batch.ray_ids, create_graph=True)
        components = self.compute_losses(batch, outputs, samples, seed)
        total = loss_total(components, self.config.loss)
        if not bool(torch.isfinite(total)):
            self._dump_nonfinite(batch, components)
        total.backward()
        self.optimizer.step()
        self.iteration += 1
        return LossRecord(
            iteration=self.iteration,
            components=components.as_floats(),
            total=float(total.detach()),
            beta=float(self.field.beta.detach()),
        )

    def _dump_nonfinite(self, batch: RayBatch, components: LossComponents):
        path = self.out_dir / f'nonfinite_{self.iteration:06d}.json'
        atomic_write_text(path, dump_json({
            'iteration': self.iteration,
            'image_id': batch.image_id,
            'pixel_ids': batch.pixel_ids.tolist(),
            'components': components.as_floats(),
        }, indent=2))
        raise TrainingError(f'Нечисловое значение функции потерь на итерации {self.iteration}', dump_path=str(path))

    def save_checkpoint(self) -> Path:
        """Write the checkpoint of the current iteration, then flush the buffered loss records."""
        path = save_checkpoint(
            self.checkpoint_dir / f'checkpoint_{self.iteration:06d}.bin',
            self.field,
            iteration=self.iteration,
            normalization=self.dataset.normalization,
            optimizer=self.optimizer,
            extra={'seed': self.seed, 'config': self.config.as_dict()},
        )
        if self._pending:
            with self.log_path.open('a') as fh:
                for record in self._pending:
                    fh.write(dump_json(record.as_dict()) + '\n')
            self._pending.clear()
        logger.info(f'Чекпоинт итерации {self.iteration}: {path}')
        return path

    @gc_collect
    def preview(self) -> Path:
        renderer = VolumeRenderer(self.field, self.config.train.n_coarse, self.config.train.n_fine, perturb=False)
        self.field.eval()
        with torch.no_grad():
            image = render_image(renderer, self.dataset.frames[0].camera, self.dataset.normalization, self.seed)
        path = self.out_dir / 'previews' / f'{self.iteration:06d}.png'
        write_rgb(path, image.rgb)
        return path

    @deterministic
    @log_duration('Обучение')
    def fit(self) -> list[LossRecord]:
        """
        Train up to ``config.train.iterations``, writing checkpoints, loss records and previews.
        :return: Loss records of the logged iterations.
        """
        train = self.config.train
        self.out_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.out_dir / 'config.json', dump_json(self.config.as_dict(), indent=2))
        if self.latest_checkpoint() is None:
            self.save_checkpoint()

        records = []
        while self.iteration < train.iterations:
            record = self.train_step(self.sample_batch(self.iteration))
            last = record.iteration == train.iterations
            if record.iteration % train.log_interval == 0 or last:
                records.append(record)
                self._pending.append(record)
                percent = int(record.iteration / train.iterations * 100)
                logger.info(
                    f'Итерация {record.iteration} | {percent}% | потери {record.total:.4f} | β {record.beta:.4f}'
                )
            if record.iteration % train.checkpoint_interval == 0 or last:
                self.save_checkpoint()
            if train.preview_interval and record.iteration % train.preview_interval == 0:
                self.preview()
        logger.info('Готово')
        return records
