from .config import (FAMILIES, FAMILY_ALIASES, TS_SIZES, InputGeometry, ModelConfig, cnn3d_ts, convlstm_ts,
                     preset, preset_names, sweep_config, timesf_ts)
from .params import STATED_D48, PUBLISHED_TABLE, AuditReport, audit_against_table, count_params, ts_formula
from .zoo import (ModelState, build_model, forward, forward_cnn3d, forward_convlstm, forward_timesformer,
                  param_shapes)
