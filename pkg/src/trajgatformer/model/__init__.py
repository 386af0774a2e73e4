from .layers import (
    causal_mask, decoder_forward, embed_positions, encoder_forward, fuse_memory, gat_layer,
    multi_head_attention, positional_encoding, timestamp,
)
from .trajgat import (
    VARIANTS, WITH_OBSTACLE, WORKER_ONLY, EncodedState, ModelConfig, PackedBatch,
    TrajGATFormer, TrajGATFormerObstacle, init_params, pack_windows, parameter_shapes,
    social_fusion,
)
