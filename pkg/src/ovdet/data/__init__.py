from ovdet.data.federated import (
    FederatedExample,
    Instance,
    load_dataset,
    max_instances,
    remove_labels,
    save_dataset,
    validate_example,
)
from ovdet.data.augment import (
    CropConstraints,
    build_mosaic,
    merge_instances,
    random_crop,
    resize_image,
)
from ovdet.data.sampling import (
    CategoryFrequencyTable,
    MosaicConfig,
    mix_datasets,
    mosaic_probabilities,
    sample_mosaic_grid,
    sample_pseudo_negatives,
)
from ovdet.data.prompts import apply_prompt, eval_templates, train_templates
from ovdet.data.synth import PALETTE, SHAPES, SynthData, SynthSpec, caption_for, synth_dataset

__all__ = [
    "CategoryFrequencyTable",
    "CropConstraints",
    "FederatedExample",
    "Instance",
    "MosaicConfig",
    "PALETTE",
    "SHAPES",
    "SynthData",
    "SynthSpec",
    "apply_prompt",
    "build_mosaic",
    "caption_for",
    "eval_templates",
    "load_dataset",
    "max_instances",
    "merge_instances",
    "mix_datasets",
    "mosaic_probabilities",
    "random_crop",
    "remove_labels",
    "resize_image",
    "sample_mosaic_grid",
    "sample_pseudo_negatives",
    "save_dataset",
    "synth_dataset",
    "train_templates",
    "validate_example",
]
