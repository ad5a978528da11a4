"""Self-supervised face swapping via shape-agnostic masked autoencoding."""

from .conditioning import (
    ConditionBundle,
    IdentityEncoder,
    IrisKeypoints,
    SkinEncoder,
    encode_identity,
    encode_skin,
    perturb_keypoints,
    render_iris_stickmen,
)
from .data import DatasetRecord, load_dataset, load_record, save_record, synth_dataset
from .generator import GeneratorConfig, GeneratorInput, UNetGenerator
from .losses import (
    Discriminator,
    LossWeights,
    PerceptualPyramid,
    build_discriminator_pairs,
    gan_loss_d,
    gan_loss_g,
    identity_loss,
    recon_loss,
    total_loss,
)
from .masks import (
    Mask,
    final_mask_basic,
    masked_image,
    perforation_confusion_train,
    perforation_mask_infer,
    subtract,
    union,
)
from .morphable import (
    MeshAsset,
    MorphableParams,
    RenderOutput,
    default_asset,
    derive_mesh_mask,
    load_asset,
    lookup_params,
    neutralize_albedo,
    render,
    save_asset,
)
from .pipeline import (
    SwapRequest,
    TrainConfig,
    TrainState,
    build_train_sample,
    compose_swap_params,
    init_state,
    load_checkpoint,
    random_mesh_scale,
    save_checkpoint,
    swap,
    train,
    train_step,
)

__version__ = "0.1.0"
