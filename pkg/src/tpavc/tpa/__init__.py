"""Prototype-aware policy: multi-scale encoder, prototype bank and actors."""
from tpavc.tpa.encoder import EncodedFeatures, EncoderConfig, MultiScaleEncoder
from tpavc.tpa.policy import ActorInputs, ActorOutput, InputScaler, MLPActor, TPAActor
from tpavc.tpa.prototype import (
    N_PROTOTYPES,
    PER_SEASON,
    PrototypeBank,
    PrototypeHyper,
    PrototypeLosses,
    init_prototypes,
    loss_cluster,
    loss_diversity,
    loss_prototype_total,
    loss_separation,
    match_prototype,
    similarity,
    similarity_vector,
    squared_distances,
)

__all__ = [
    "ActorInputs", "ActorOutput", "EncodedFeatures", "EncoderConfig", "InputScaler", "MLPActor",
    "MultiScaleEncoder", "N_PROTOTYPES", "PER_SEASON", "PrototypeBank", "PrototypeHyper",
    "PrototypeLosses", "TPAActor", "init_prototypes", "loss_cluster", "loss_diversity",
    "loss_prototype_total", "loss_separation", "match_prototype", "similarity", "similarity_vector",
    "squared_distances",
]
