"""
Run configuration: defaults, overlaid by a YAML/JSON file, overlaid by flags.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path

from rosalab.config import derive_seed, load_config_file
from rosalab.resources.advisory import AdvisoryConfig
from rosalab.resources.errors import InvalidSpec, RosaError
from rosalab.resources.geometry import (DEFAULT_GEOMETRY_FILE,
                                        RoundaboutGeometry, load_geometry)
from rosalab.resources.metrics import MetricsConfig
from rosalab.resources.predictor.features import FeatureConfig, Variant
from rosalab.resources.predictor.network import ModelConfig
from rosalab.resources.simulator import SimulatorConfig


@dataclass(frozen=True)
class DataSection:
    hz_in: int | None = None
    hz_out: int = 1
    segment_length: int = 60
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def to_dict(self) -> dict:
        return {
            'hz_in': self.hz_in,
            'hz_out': self.hz_out,
            'segment_length': self.segment_length,
            'fractions': list(self.fractions),
        }


@dataclass(frozen=True)
class RunConfig:
    """
    Every setting of one CLI run.

    Arguments and Attributes:
        - ``seed (int):`` Run seed; stages draw sub-seeds from it.
        - ``variant (Variant):`` Predictor input variant.
        - ``geometry (str):`` Geometry file.
        - ``data (DataSection):`` Downsampling, segmentation and split.
        - ``model, simulator, advisory, metrics:`` Section settings.
    """

    seed: int = 0
    variant: Variant = Variant.DYNAMICS
    geometry: str = DEFAULT_GEOMETRY_FILE
    data: DataSection = field(default_factory=DataSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    advisory: AdvisoryConfig = field(default_factory=AdvisoryConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def load_geometry(self) -> RoundaboutGeometry:
        return load_geometry(self.geometry)

    def feature_config(self, geo: RoundaboutGeometry) -> FeatureConfig:
        return FeatureConfig(self.variant, geo.n_exit_slots)

    def model_for_training(self) -> ModelConfig:
        return replace(self.model, seed=derive_seed(self.seed, 'train'))

    def to_dict(self) -> dict:
        return {
            'seed': self.seed,
            'variant': self.variant.label,
            'geometry': str(self.geometry),
            'data': self.data.to_dict(),
            'model': self.model.to_dict(),
            'simulator': self.simulator.to_dict(),
            'advisory': self.advisory.to_dict(),
            'metrics': self.metrics.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'RunConfig':
        try:
            section = data.get('data', {})
            return cls(
                seed=int(data.get('seed', 0)),
                variant=Variant.from_label(data.get('variant', 'dynamics')),
                geometry=str(data.get('geometry', DEFAULT_GEOMETRY_FILE)),
                data=DataSection(
                    hz_in=section.get('hz_in'),
                    hz_out=int(section.get('hz_out', 1)),
                    segment_length=int(section.get('segment_length', 60)),
                    fractions=tuple(
                        float(f) for f in section.get('fractions', (0.8, 0.1, 0.1))
                    ),
                ),
                model=ModelConfig.from_dict(data.get('model', {})),
                simulator=SimulatorConfig.from_dict(data.get('simulator', {})),
                advisory=AdvisoryConfig(**data.get('advisory', {})),
                metrics=MetricsConfig.from_dict(data.get('metrics', {})),
            )
        except RosaError:
            raise
        except (TypeError, ValueError, AttributeError) as error:
            raise InvalidSpec(f'✗ MALFORMED RUN CONFIG: {error}', reason=str(error))


def resolve_run_config(
    path: str | Path | None = None,
    seed: int | None = None,
    variant: str | None = None,
    geometry: str | None = None,
) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    data = {}
    if path is not None:
        if not Path(path).is_file():
            raise InvalidSpec(f'✗ CONFIG FILE "{path}" DOES NOT EXIST', path=str(path))
        data = load_config_file(path)
    config = RunConfig.from_dict(data)
    if seed is not None:
        config = replace(config, seed=seed)
    if variant is not None:
        config = replace(config, variant=Variant.from_label(variant))
    if geometry is not None:
        config = replace(config, geometry=geometry)
    return config
