"""Timbre editing by condition swapping in a small latent diffusion model.

Modules: synthcorpus (synthetic instrument clips), dsp (STFT, mel, chroma,
Griffin-Lim), nncore (dense nets, backprop, Adam, checkpoints), latentspace
(patch <-> latent), diffusion (schedule, denoiser, DDIM sampler), classifiers
(teacher, distilled student, latent heads), tone (swap-step selection and
editing), evalsuite (metrics and the evaluation matrix), config / pipeline / cli
(orchestration).
"""

__version__ = "0.1.0"
