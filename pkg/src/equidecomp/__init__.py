"""Finite, checkable equidecompositions on discretized measure spaces."""
from .bounds import BigBound, all_ledgers, expander_size_bound, sphere_remark_bound, tarski_piece_bound
from .expansion import AveragingOperator, build_expander, edge_statistics, finite_gap, verify_expansion
from .geometry import construct_cube, diffuser_check, foliation_consistency
from .graphing import Graphing, bipartite_graphing
from .group import GeneratorSet, GroupElement, Word, lps_generators, sl2_generators, torus_translations, word_products
from .matching import Matching, advance_stage, run_to_completion, verify_no_short_augmenting_path
from .pipeline import (EquidecompositionCertificate, PipelineError, equidecompose, reduce_to_open,
                       validate_certificate)
from .space import RationalTorus

__version__ = "0.1.0"
