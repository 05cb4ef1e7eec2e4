"""Single-neuron stealth attacks on dense feed-forward networks."""

__version__ = "0.1.0"

from .attack import AttackError, AttackNeuron, AttackParams, choose_kappa_D, plan_plain_attack, plan_targeted_attack, realize_effect
from .bounds import BoundQuery, BoundReport, HypothesisError, cap_term_closed, cap_term_integral, collapse_bound, phi, success_bound
from .geometry import RNG_ALGORITHM, SphereSample, alpha_of, estimate_radius, sample_sphere, sample_subsphere
from .model import DenseLayer, LatentSplit, Network, forward, head_output, latent, latent_vjp, load_model, model_digest, save_model
from .pipeline import AttackOutcome, run_attack
from .planting import plant_scenario1, plant_scenario2, plant_scenario3, rank_neurons, removal_impact
from .trigger import TriggerResult, TriggerSearchConfig, search_trigger, trigger_loss
from .verify import StealthReport, mc_event_probability, verify_stealth
