"""Desk-scale 2D network: hit-distance features, attention encoder and training."""

from .net import AttentionNetParams, NetConfig, bce, forward, loss_and_gradients
from .shapes import (DEFAULT_BOX, Shape2D, disk, disk_visible_region, features_2d,
                     hit_distance_2d, hit_distances, letter_g, read_shape,
                     sample_training_set, write_shape)
from .train import (TrainConfig, TrainResult, anchor_activation_map, image_iou, load_model,
                    pixel_centers, rasterize, reconstruct_image, save_model, train)

__all__ = [
    "AttentionNetParams", "NetConfig", "bce", "forward", "loss_and_gradients",
    "DEFAULT_BOX", "Shape2D", "disk", "disk_visible_region", "features_2d", "hit_distance_2d",
    "hit_distances", "letter_g", "read_shape", "sample_training_set", "write_shape",
    "TrainConfig", "TrainResult", "anchor_activation_map", "image_iou", "load_model",
    "pixel_centers", "rasterize", "reconstruct_image", "save_model", "train",
]
