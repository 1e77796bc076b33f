from .evaluator import AsyncExternalEvaluator
from .d2r       import evaluate_fitness
