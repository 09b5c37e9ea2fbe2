import dataclasses
import logging

import numpy as np
import torch
from torch.nn import functional as F

from compsdf.dataio.schema import Camera, SceneNormalization
from compsdf.field.network import CompositionalField
from compsdf.geometry.primitives import AnalyticScene
from compsdf.rendering.rays import QuadratureSamples, RayBundle, intersect_aabb, sample_ray
from compsdf.rendering.volume import OpacityVariant, RenderOutputs, composite, density_from_sdf, variant_opacity

logger = logging.getLogger(__name__)

NEAR_EPS = 1e-4


def bundle_from_world(
    origins: np.ndarray,
    directions: np.ndarray,
    normalization: SceneNormalization,
    dtype: torch.dtype = torch.float32,
) -> tuple[RayBundle, np.ndarray]:
    """
    Map world rays into the normalized cube and clip them to [0, 1]^3.
    :return: Bundle of the rays crossing the cube and the boolean mask selecting them.
    """
    unit_origins = torch.as_tensor(normalization.to_unit(origins), dtype=torch.float64)
    unit_dirs = torch.as_tensor(directions, dtype=torch.float64)
    unit_dirs = unit_dirs / unit_dirs.norm(dim=-1, keepdim=True)
    t_enter, t_exit = intersect_aabb(unit_origins, unit_dirs, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    near = t_enter.clamp(min=NEAR_EPS)
    valid = near < t_exit
    bundle = RayBundle(
        origins=unit_origins[valid].to(dtype),
        directions=unit_dirs[valid].to(dtype),
        near=near[valid].to(dtype),
        far=t_exit[valid].to(dtype),
    )
    return bundle, valid.numpy()


class VolumeRenderer:
    """Renders rays through a compositional field."""

    def __init__(self, field: CompositionalField, n_coarse: int = 64, n_fine: int = 64, perturb: bool = True):
        self.field = field
        self.n_coarse = n_coarse
        self.n_fine = n_fine
        self.perturb = perturb

    def density(self, points: torch.Tensor) -> torch.Tensor:
        return density_from_sdf(self.field(points).scene_sdf, self.field.beta)

    def sample(self, bundle: RayBundle, seed: int, ray_ids: np.ndarray | None = None) -> QuadratureSamples:
        return sample_ray(bundle, self.n_coarse, self.n_fine, self.density, seed, ray_ids, perturb=self.perturb)

    def render_samples(self, bundle: RayBundle, samples: QuadratureSamples, create_graph: bool = False) -> RenderOutputs:
        """
        Evaluate the field at the samples and composite them.
        :param create_graph: Keep second-order graph through the normals (needed for training).
        """
        n_rays, n_samples = samples.shape
        points = samples.points.reshape(-1, 3)
        gradient = self.field.spatial_gradient(points, channels='scene', create_graph=create_graph)
        output = gradient.output
        object_sigma = density_from_sdf(output.sdf, self.field.beta).reshape(n_rays, n_samples, -1)
        normals = F.normalize(gradient.scene, dim=-1)
        view_dirs = bundle.directions[:, None, :].expand(n_rays, n_samples, 3).reshape(-1, 3)
        colors = self.field.color(points, view_dirs, normals, output.geometry_feature)
        outputs = composite(
            samples,
            colors=colors.reshape(n_rays, n_samples, 3),
            normals=normals.reshape(n_rays, n_samples, 3),
            object_sigma=object_sigma,
        )
        outputs.sample_gradients = gradient.scene.reshape(n_rays, n_samples, 3)
        return outputs

    def render(
        self,
        bundle: RayBundle,
        seed: int,
        ray_ids: np.ndarray | None = None,
        create_graph: bool = False,
    ) -> tuple[RenderOutputs, QuadratureSamples]:
        samples = self.sample(bundle, seed, ray_ids)
        return self.render_samples(bundle, samples, create_graph=create_graph), samples


@dataclasses.dataclass
class RenderedImage:
    rgb: np.ndarray
    """(H, W, 3) in [0, 1]."""
    depth: np.ndarray
    """(H, W) along-ray depth in scene units, 0 where the ray misses the cube."""
    normal: np.ndarray
    """(H, W, 3) world frame."""
    opacity: np.ndarray
    """(H, W)."""
    object_opacity: np.ndarray
    """(H, W, K)."""


def render_image(
    renderer: VolumeRenderer,
    camera: Camera,
    normalization: SceneNormalization,
    seed: int,
    frame_index: int = 0,
    chunk: int = 4096,
) -> RenderedImage:
    """
    Render every pixel of a camera in chunks of rays.
    :param frame_index: Offsets the global ray ids so frames draw independent streams.
    """
    height, width = camera.height, camera.width
    pixel_count = height * width
    num_objects = renderer.field.num_objects
    rgb = np.zeros((pixel_count, 3))
    depth = np.zeros(pixel_count)
    normal = np.zeros((pixel_count, 3))
    opacity = np.zeros(pixel_count)
    object_opacity = np.zeros((pixel_count, num_objects))

    for start in range(0, pixel_count, chunk):
        pixel_ids = np.arange(start, min(start + chunk, pixel_count))
        origins, directions = camera.pixel_rays(pixel_ids)
        bundle, valid = bundle_from_world(origins, directions, normalization, dtype=renderer.field.dtype)
        if not valid.any():
            continue
        ray_ids = frame_index * pixel_count + pixel_ids[valid]
        outputs, _samples = renderer.render(bundle, seed, ray_ids)
        rows = pixel_ids[valid]
        rgb[rows] = outputs.color.detach().double().numpy()
        depth[rows] = outputs.depth.detach().double().numpy() / normalization.scale
        normal[rows] = outputs.normal.detach().double().numpy()
        opacity[rows] = outputs.opacity.detach().double().numpy()
        object_opacity[rows] = outputs.object_opacity.detach().double().numpy()
        logger.debug(f'Отрисовано {rows[-1] + 1} из {pixel_count} пикселей')

    return RenderedImage(
        rgb=rgb.reshape(height, width, 3),
        depth=depth.reshape(height, width),
        normal=normal.reshape(height, width, 3),
        opacity=opacity.reshape(height, width),
        object_opacity=object_opacity.reshape(height, width, num_objects),
    )


class AnalyticDensity:
    """Densities straight from an analytic scene, in scene units."""

    def __init__(self, scene: AnalyticScene, beta: float):
        self.scene = scene
        self.beta = beta

    def object_sdf(self, points: torch.Tensor) -> torch.Tensor:
        sdf = self.scene.eval_sdf(points.detach().double().numpy()).objects
        return torch.from_numpy(sdf)

    def object_sigma(self, points: torch.Tensor) -> torch.Tensor:
        return density_from_sdf(self.object_sdf(points), self.beta)

    def scene_sigma(self, points: torch.Tensor) -> torch.Tensor:
        return self.object_sigma(points).amax(dim=-1)

    def bundle(self, origins: np.ndarray, directions: np.ndarray) -> RayBundle:
        """Rays clipped to the scene bounds; origins inside the bounds start at 0."""
        origins = torch.as_tensor(origins, dtype=torch.float64)
        directions = torch.as_tensor(directions, dtype=torch.float64)
        t_enter, t_exit = intersect_aabb(origins, directions, self.scene.bounds[0], self.scene.bounds[1])
        return RayBundle(origins, directions, t_enter.clamp(min=0.0), t_exit)

    def samples(
        self,
        bundle: RayBundle,
        n_coarse: int,
        n_fine: int = 0,
        seed: int = 0,
        perturb: bool = True,
    ) -> QuadratureSamples:
        return sample_ray(bundle, n_coarse, n_fine, self.scene_sigma, seed, perturb=perturb)

    def render(self, samples: QuadratureSamples) -> RenderOutputs:
        n_rays, n_samples = samples.shape
        object_sigma = self.object_sigma(samples.points.reshape(-1, 3)).reshape(n_rays, n_samples, -1)
        return composite(samples, object_sigma=object_sigma)

    def variant_opacity(self, samples: QuadratureSamples, variant: OpacityVariant | str) -> torch.Tensor:
        n_rays, n_samples = samples.shape
        sdf = self.object_sdf(samples.points.reshape(-1, 3)).reshape(n_rays, n_samples, -1)
        return variant_opacity(samples, density_from_sdf(sdf, self.beta), variant, object_sdf=sdf)
