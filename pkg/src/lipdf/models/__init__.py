from lipdf.models.linear import LinearGaussianModel
from lipdf.models.ugm import UnivariateGrowthModel, ugm_likelihood, ugm_observe, ugm_transition

__all__ = [
    "LinearGaussianModel",
    "UnivariateGrowthModel",
    "ugm_likelihood",
    "ugm_observe",
    "ugm_transition",
]
