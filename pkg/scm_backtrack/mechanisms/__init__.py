from __future__ import annotations

from .mechanism import MECHANISMS, Mechanism, diag_jacobian, mechanism_from_dict, register_mechanism
from .conditioner import Conditioner, Params
from .affine import AffineFlow, affine_forward
from .sigmoid import SigmoidFlow, sigmoid_flow_forward
from .categorical import CategoricalMechanism, categorical_forward, categorical_inverse
from .predictor import PredictorMechanism, predictor_forward
from .training import TrainingResult, train_flow_mle
