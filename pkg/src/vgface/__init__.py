"""Descriptor extraction and retrieval evaluation for face networks.

The engine runs VGG-Face style networks from a declarative layer schedule,
taps intermediate rectifier outputs as flat feature descriptors (optionally
swapping plain ReLU for the data-dependent average-biased rectifier), and
scores leave-one-out face retrieval with ARP/ARR/F-score/ANMRR.
"""

from .activations import ActivationKind, ab_relu, apply_activation, relu
from .descriptor import (Descriptor, DescriptorVariant, extract,
                         extract_from_file, load_image, parse_variant,
                         preprocess)
from .errors import (ConfigError, EngineError, FormatError, ShapeError,
                     WeightError)
from .evaluation import (AnmrrParams, DatasetManifest, FaceRecord,
                         MetricsReport, aggregate, anmrr, f_score,
                         precision_recall, run_experiment)
from .network import (ConvWeights, LayerSpec, NetworkSpec, WeightStore,
                      conv2d_forward, forward, load_weights, maxpool_forward,
                      save_weights, vggface_spec)
from .similarity import DistanceKind, distance, gallery_distances, rank_gallery
from .tensor import (Shape, Tensor, flatten, map_elementwise, mean_volume,
                     read_vgt, write_vgt)

__version__ = "0.1.0"
