"""Streaming two-stage modeling of images larger than one encoder pass.

A large image is cut into fixed-size regions, each region is encoded
independently by a small hierarchical windowed-attention transformer, and a
lightweight long-sequence context encoder (recurrent-memory transformer,
LSH-sampled near-linear attention, or a selective state-space scan) mixes
information across all regions at near-linear cost. Everything runs on a
self-contained float64 autodiff tensor core so gradients, receptive fields
and memory behavior can be inspected end to end.
"""

from .erf import ERFMap, erf_map
from .errors import (ConfigError, ContractViolation, InvalidNumerics,
                     TrainingDiverged, UnsatisfiableBudget)
from .estimator import RegionFeatureTransformer, TileContextClassifier, check_images
from .ledger import MemoryLedger
from .optim import AdamW, AdamWState, adamw_step, cosine_decay
from .pipeline import Model, PipelineConfig, load_config, parse_config_text
from .scheduler import (ChunkPlan, StreamResult, add_2d_positional,
                        memory_growth_report, plan_chunks, stream_forward)
from .sketch import (AttentionSketch, SketchConfig, approx_attention,
                     build_sketch, exact_attention, lsh_bucket)
from .ssm import (SSMParams, SelectiveMaps, scan_combine, ssm_scan_parallel,
                  ssm_scan_sequential, zoh_discretize)
from .synthetic import SyntheticDataset, gen_synthetic_task, single_region_nn_accuracy
from .tensor import Tensor, grad_check, no_grad, stop_gradient
from .tokenizer import (FeatureSequence, RegionGrid, partition_regions,
                        patchify_region, reassemble_row_major, unpatchify_region)
from .training import TrainResult, evaluate, train
from .xl import XLConfig, XLContextEncoder, context_multiplier, effective_context_length

__version__ = "0.1.0"
