"""Similarity-keeping knowledge distillation from high- to low-density EEG montages."""
from .distill import DistillConfig, hkd_loss, similarity_matrix, sk_loss, total_loss
from .models import ArchitectureSpec, build_model, forward_with_taps
from .training import TrainConfig, distill_student, evaluate, pretrain_teacher, train_student_baseline

__version__ = "0.1.0"
