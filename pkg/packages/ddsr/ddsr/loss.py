from __future__ import annotations

from pydantic import BaseModel

from .config import LossWeights
from .constants import HUBER_DELTA
from .errors import ShapeError
from .model import ForwardOutputs
from .tensor import Tensor, add, as_tensor, huber, scale
from .wavelet import haar_analysis


class LossBreakdown(BaseModel):
    total: float
    rec: float
    spatial: float
    low: float
    high: float


def hybrid_loss(
    outputs: ForwardOutputs,
    hr: Tensor,
    weights: LossWeights,
    delta: float = HUBER_DELTA,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of reconstruction, spatial and subband Huber terms.

    The subband targets are the Haar bands of `hr`. Terms with zero weight are
    not part of the graph; a weight of one is added without scaling.
    """
    if outputs.sr.shape != hr.shape:
        raise ShapeError(f"prediction {outputs.sr.shape} and reference {hr.shape} differ")
    target = as_tensor(hr.data.astype(outputs.sr.dtype, copy=False))
    bands = haar_analysis(target.data)
    ll_target = Tensor(bands[:, :, 0])
    high_target = Tensor(bands[:, :, 1:])

    terms = {
        "rec": huber(outputs.sr, target, delta),
        "spatial": huber(outputs.spatial, target, delta),
        "low": huber(outputs.ll_refined, ll_target, delta),
        "high": huber(outputs.high_refined, high_target, delta),
    }
    total: Tensor | None = None
    for name, term in terms.items():
        weight = float(getattr(weights, name))
        if weight == 0.0:
            continue
        weighted = term if weight == 1.0 else scale(term, weight)
        total = weighted if total is None else add(total, weighted)
    if total is None:
        total = scale(terms["rec"], 0.0)

    breakdown = LossBreakdown(
        total=total.item(),
        rec=terms["rec"].item(),
        spatial=terms["spatial"].item(),
        low=terms["low"].item(),
        high=terms["high"].item(),
    )
    return total, breakdown
