from .exceptions import (ZapfieldError, ConfigurationError, InputError, DomainError,
                         FormatError, EvaluatorError, InsufficientDataError,
                         ContractViolation, EvolutionError, UsageError)
from .sim_core   import SimConfig, VectorField, WorldState, Trajectory, run_episode
from .embedding  import EMBEDDING_DIM, PromptEmbedding, Embedder, embed, cosine_similarity
from .p2i        import ArchConfig, P2IModel, new_model, forward, flatten_weights, load_weights
from .d2r        import BehaviorLabel, EvalConfig, FitnessReport, PromptFitness, evaluate_fitness
from .evolve     import EsConfig, GaConfig, EvolutionLog, run_es, run_ga
from .stats      import PairedSamples, WilcoxonResult, wilcoxon_signed_rank, summarize_runs
