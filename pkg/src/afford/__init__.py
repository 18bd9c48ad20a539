"""Sparse non-negative interaction embeddings of objects from verb-application counts."""

from afford.corpus import (
    LabeledMatrix,
    ParsedToken,
    VocabIndex,
    extract_pairs,
    load_vocab,
    read_conllu,
    read_triplets,
    write_triplets,
)
from afford.nmf import (
    CvReport,
    FactorPair,
    HoldoutMask,
    cv_grid,
    factorize,
    make_block_masks,
    masked_nmf,
    nndsvd_init,
    reconstruction_error,
)
from afford.ppmi_transform import ppmi
from afford.ranking import (
    AaucReport,
    SimilarityMatrix,
    VerbRanking,
    aauc,
    baseline_cosine_ranking,
    evaluate_dataset,
    object_verb_ranking,
    paired_ttest,
    ppmi_row_ranking,
    similarity_matrix,
)
from afford.regression import (
    RegressionFit,
    TargetMatrix,
    align_targets,
    best_match_correlation,
    contribution_analysis,
    cv_lambda,
    fit_all_dims,
    nonneg_lasso,
    spose_verb_assignment,
)

__version__ = "0.1.0"
