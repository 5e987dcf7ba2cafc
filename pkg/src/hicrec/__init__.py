"""Meta-path based heterogeneous-graph recommender with factorized interest
composition, trained pairwise and evaluated leave-one-out."""

__version__ = "0.1.0"

from .errors import (ConfigError, DataError, HicRecError, IdRangeError,
                     NumericError, ParseError, SchemaError)
from .hin import (BprTriple, GraphSchema, HinGraph, InteractionSplit, NodeType,
                  TripleBatch, leave_one_out_split, load_dataset, load_edge_list,
                  sample_bpr_triples)
from .metapath import (Aspect, CommutingMatrix, MetaPath, build_aspect,
                       commuting_matrix, normalize_adjacency, parse_metapath,
                       pathsim)
from .nnmath import (GradCheckReport, ParamStore, ParamTensor, adam_step,
                     finite_difference_check, load_checkpoint,
                     load_checkpoint_into, matmul, relu, relu_grad, row_dot,
                     save_checkpoint, sigmoid, softplus, spmm, xavier_init)
from .model import (ComposedScorer, HicRec, MfBpr, ScoreBreakdown, bpr_loss,
                    build_model, extract_interest, inter_composition,
                    intra_composition, total_loss)
from .training import TrainConfig, TrainLog, fit, train_epoch
from .evaluation import (EvalProtocol, RandomScorer, RankingReport, evaluate,
                         hit_ratio, ndcg, rank_of_positive, sample_candidates,
                         sweep)
from .synth import SyntheticConfig, generate_synthetic, synthetic_schema
from .config import (AspectDef, DatasetConfig, EvalConfig, ModelConfig,
                     RunConfig, dump_config, load_config)
from .pipeline import (PreparedData, evaluate_command, gen_synthetic_command,
                       prepare, sweep_command, train_command)
