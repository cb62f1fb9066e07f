from .layers import (Concat, Conv2d, Dense, NetworkSpec, OdeBlock, Relu, Tape,
                     backward, backward_input, forward, network,
                     ode_block_forward, output_shape)
from .losses import cross_entropy_loss, nmse, nmse_db, nmse_loss
from .optim import AdamState, adam_step
from .params import (ParamStore, init_params, load_checkpoint, save_checkpoint,
                     zeros_like)

__all__ = [
    "Concat", "Conv2d", "Dense", "NetworkSpec", "OdeBlock", "Relu", "Tape",
    "backward", "backward_input", "forward", "network", "ode_block_forward",
    "output_shape", "cross_entropy_loss", "nmse", "nmse_db", "nmse_loss",
    "AdamState", "adam_step", "ParamStore", "init_params", "load_checkpoint",
    "save_checkpoint", "zeros_like",
]
