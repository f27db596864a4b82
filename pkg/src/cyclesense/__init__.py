"""Near miss incident detection for bicycle sensor rides.

The package turns raw two-section ride recordings into labeled frequency
tensors and trains a convolutional recurrent detector on them, alongside a
fully convolutional baseline and a simple accelerometer jump heuristic.
"""
from .evaluate import RocResult, SingleClassError, comparison_report, roc_auc
from .models import (BucketGan, CycleSenseClassifier, FcnClassifier,
                     JumpHeuristicDetector, NoPositivesError, augment_dataset)
from .nets import CycleSenseNet, FcnNet, GanDiscriminator, GanGenerator
from .pipeline import (PreparedData, load_prepared, load_rides,
                       prepare_dataset, prepare_from_dir, ride_to_buckets,
                       save_prepared)
from .preprocess import (BucketSet, CleanRide, LabeledBucket,
                         MaxAbsNormalizer, NormalizationStats, RideRejected,
                         UniformRide, bucketize_and_label, clean_ride,
                         filter_outliers, fit_maxabs, gps_to_velocity,
                         resample_uniform, tukey_bounds)
from .rides import (ColumnMap, DatasetPartition, IncidentRecord,
                    MissingHeaderError, MissingSeparatorError, RawRide,
                    RideFormatError, SensorRecord, load_ride_file, parse_ride,
                    partition_dataset, partition_from_header, write_ride)
from .spectral import (DftFeatureExtractor, FrequencySpec, SensorTensorSet,
                       TensorBatch, bucket_to_tensors, dft_f_point)
from .synth import SynthSpec, generate_dataset, generate_rides
from .training import (EarlyStopper, EpochRecord, GridResult, SplitAssignment,
                       SplitPlan, TooFewRidesError, class_weights,
                       derive_seed, fit_epochs, grid_search, split_rides,
                       train_cyclesense)

__version__ = "0.1.0"

__all__ = [
    "BucketGan", "BucketSet", "CleanRide", "ColumnMap", "CycleSenseClassifier",
    "CycleSenseNet", "DatasetPartition", "DftFeatureExtractor", "EarlyStopper",
    "EpochRecord", "FcnClassifier", "FcnNet", "FrequencySpec",
    "GanDiscriminator", "GanGenerator", "GridResult", "IncidentRecord",
    "JumpHeuristicDetector", "LabeledBucket", "MaxAbsNormalizer",
    "MissingHeaderError", "MissingSeparatorError", "NoPositivesError",
    "NormalizationStats", "PreparedData", "RawRide", "RideFormatError",
    "RideRejected", "RocResult", "SensorRecord", "SensorTensorSet",
    "SingleClassError", "SplitAssignment", "SplitPlan", "SynthSpec",
    "TensorBatch", "TooFewRidesError", "UniformRide", "augment_dataset",
    "bucket_to_tensors", "bucketize_and_label", "class_weights", "clean_ride",
    "comparison_report", "derive_seed", "dft_f_point", "filter_outliers",
    "fit_epochs", "fit_maxabs", "generate_dataset", "generate_rides",
    "gps_to_velocity", "grid_search", "load_prepared", "load_ride_file",
    "load_rides", "parse_ride", "partition_dataset", "partition_from_header",
    "prepare_dataset", "prepare_from_dir", "resample_uniform",
    "ride_to_buckets", "roc_auc", "save_prepared", "split_rides",
    "train_cyclesense", "tukey_bounds", "write_ride",
]
