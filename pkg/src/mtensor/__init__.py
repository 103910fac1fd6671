"""Multiple tensor decomposition, implicit factor networks, and the
proximal alternating solver, with robust tensor completion and point
cloud upsampling pipelines on top."""

from ._backend import backend_name
from .tensor import (as_tensor, unfold, fold, mode_n_product, fro_norm,
                     l1_norm, soft_threshold, psnr, save_tensor, load_tensor)
from .decomp import (MultipleFactors, ContractionEnv, RankBounds, AlsResult,
                     multiple_product, contraction_env, distribute_check,
                     entry_bound, gtri_construct, pad_ranks, cp_to_multiple,
                     tucker_compose, tucker_commutation_gap, als_fit,
                     rank_bounds, pcu_rank_bound, compression_ratio, submax,
                     random_factors, save_factors, load_factors)
from .mlp import (Mlp, AdamState, LipschitzCert, init_mlp, mlp_forward,
                  mlp_backward, forward_batch, backward_batch, weight_l1_max,
                  lipschitz_bound, cert_for_nets, adam_step, save_mlp,
                  load_mlp)
from .imtd import (ImtdModel, init_imtd, grid_domains, eval_point, eval_grid,
                   eval_points, grid_backward, empirical_lipschitz,
                   model_certificate, save_model, load_model)
from .pals import (PalsConfig, PalsProblem, PalsState, PalsDivergence,
                   theta_step, e_step, pals_run, history_jsonl, jacobian_rank)
from .rtc import (ObservationMask, RtcProblem, corrupt, tv_l1, rtc_recover,
                  default_ranks, default_gamma, load_image, save_image)
from .pcu import (PointCloud, PcuConfig, CloudFrame, ExtractionEmpty,
                  sdf_loss, fit_sdf, extract_points, upsample, chamfer,
                  f_score, circle_points, star_points, sphere_points,
                  load_xyz, save_xyz)

__version__ = "0.1.0"
