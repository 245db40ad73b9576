"""R&D spillovers through global value chains.

Input-output network centrality, R&D content of final goods, and
fixed-effects spillover regressions, with a synthetic-economy harness
for verification at desk scale.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    GvcrdError, NumericalError, ParseError, SpecificationError, ValidationError,
)
from .iotable import (  # noqa: F401
    CoefficientMatrix, IOTable, MaskSpec, NodeIndex, aggregate_final_demand, apply_mask,
    build_coefficients, load_io_table, load_io_tables, scale_flows_and_output,
    spectral_radius, write_io_table,
)
from .centrality import (  # noqa: F401
    CentralityScores, WeightMatrix, build_labels, centrality_summary, classify_tertiles,
    classify_topk, compute_centrality, katz_bonacich, normalize_weights,
    split_industry_groups, total_class,
)
from .productivity import LaborShareModel, caves_tfp, smooth_labor_shares, tfp_summary  # noqa: F401
from .rdstocks import IntensityVector, deflate_expenditure, intensity, perpetual_inventory  # noqa: F401
from .content import (  # noqa: F401
    LeontiefSystem, direct_indirect_split, leontief_solve, partition_content, rd_content,
    shares_report, total_requirements,
)
from .regression import (  # noqa: F401
    FitResult, add_interactions, cluster_robust_cov, fit_fixed_effects, lag_regressors,
    within_transform,
)
from .synthetic import SynthConfig, SynthEconomy, gen_economy, oracle_neumann, oracle_sandwich  # noqa: F401
from .pipeline import (  # noqa: F401
    PipelineInputs, PipelineResult, RunConfig, load_inputs, prepare_panel, run_pipeline,
    run_pipeline_data, write_artifacts,
)
