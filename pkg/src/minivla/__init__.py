"""minivla: a desk-scale vision-language-action pipeline.

Toy language/vision encoders, decoder-style modality fusion, a CNN
diffusion action head with receding-horizon execution, two-stage
behavioral-cloning training, a systematic augmentation suite, and a
built-in 2D tabletop benchmark with 5-subtask chain evaluation.
"""

__version__ = "0.1.0"
