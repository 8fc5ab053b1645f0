from rosalab.resources.predictor.features import (FeatureConfig,
                                                  Normalization, Variant,
                                                  denormalize_features,
                                                  normalize_features)
from rosalab.resources.predictor.inference import (ConstantVelocityModel,
                                                   DisplacementErrors,
                                                   GroundTruthModel,
                                                   TrajectoryPredictor,
                                                   TransformerModel, ade_fde,
                                                   rollout)
from rosalab.resources.predictor.loss import composite_loss
from rosalab.resources.predictor.network import (LossWeights, ModelConfig,
                                                 ModelParameters,
                                                 build_attention_mask,
                                                 forward, init_parameters)
from rosalab.resources.predictor.storage import (load_parameters,
                                                 save_parameters)
from rosalab.resources.predictor.training import (TrainingHistory,
                                                  extract_samples,
                                                  gradient_check, make_batch,
                                                  train, train_on_samples)

__all__ = [
    'ConstantVelocityModel',
    'DisplacementErrors',
    'FeatureConfig',
    'GroundTruthModel',
    'LossWeights',
    'ModelConfig',
    'ModelParameters',
    'Normalization',
    'TrainingHistory',
    'TrajectoryPredictor',
    'TransformerModel',
    'Variant',
    'ade_fde',
    'build_attention_mask',
    'composite_loss',
    'denormalize_features',
    'extract_samples',
    'forward',
    'gradient_check',
    'init_parameters',
    'load_parameters',
    'make_batch',
    'normalize_features',
    'rollout',
    'save_parameters',
    'train',
    'train_on_samples',
]
