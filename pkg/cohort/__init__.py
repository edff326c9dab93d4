from __future__ import annotations

try:
    from .dataset import (
        Column,
        Dataset,
        FeatureEncoder,
        FeatureMatrix,
        GroundTruth,
        Schema,
        SyntheticConfig,
        covariate_design,
        encode,
        fit_encoder,
        generate_synthetic,
        load_csv,
        load_schema,
        nslm_schema,
        write_csv,
    )
    from .splitting import MomentVector, SplitAssignment, balanced_split, split_score
except ImportError:
    from cohort.dataset import (
        Column,
        Dataset,
        FeatureEncoder,
        FeatureMatrix,
        GroundTruth,
        Schema,
        SyntheticConfig,
        covariate_design,
        encode,
        fit_encoder,
        generate_synthetic,
        load_csv,
        load_schema,
        nslm_schema,
        write_csv,
    )
    from cohort.splitting import MomentVector, SplitAssignment, balanced_split, split_score

__all__ = [
    "Column",
    "Dataset",
    "FeatureEncoder",
    "FeatureMatrix",
    "GroundTruth",
    "MomentVector",
    "Schema",
    "SplitAssignment",
    "SyntheticConfig",
    "balanced_split",
    "covariate_design",
    "encode",
    "fit_encoder",
    "generate_synthetic",
    "load_csv",
    "load_schema",
    "nslm_schema",
    "split_score",
    "write_csv",
]
