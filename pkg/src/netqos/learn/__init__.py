"""Learners for QoS-change prediction: a small CNN and four feature-based baselines."""
from .cnn import CnnArch, TrainConfig, check_gradients, cnn_init, forward, grad_check, online_update, train
from .model import (KINDS, Metrics, Model, baseline_train, evaluate, fit, labels_from_proba, load_model,
                    metrics_from_labels, model_bytes, predict, save_model, write_history)

__all__ = ["CnnArch", "TrainConfig", "check_gradients", "cnn_init", "forward", "grad_check", "online_update",
           "train", "KINDS", "Metrics", "Model", "baseline_train", "evaluate", "fit", "labels_from_proba",
           "load_model", "metrics_from_labels", "model_bytes", "predict", "save_model", "write_history"]
