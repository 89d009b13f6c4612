use super::{ContractOffer, OfferError};

/// `p̂ = (f − b) / f`, the fulfilment probability implied by a bid.
///
/// Negative bids (possible on negative-price days) imply `p̂ > 1`; the
/// estimate is capped at 1.
pub fn estimate_success_probability(bid: f64, penalty: f64) -> Result<f64, OfferError> {
    if !bid.is_finite() {
        return Err(OfferError::NonFinite { field: "bid" });
    }
    if !penalty.is_finite() {
        return Err(OfferError::NonFinite { field: "penalty" });
    }
    if penalty <= 0.0 {
        return Err(OfferError::ProbabilityUndefined { penalty });
    }
    if bid > penalty {
        return Err(OfferError::NegativeProbability { bid, penalty });
    }
    if bid <= 0.0 {
        return Ok(1.0);
    }
    Ok((penalty - bid) / penalty)
}

/// Dominant-strategy bid: true cost plus expected fine, `c + (1 − p)·f`.
pub fn truthful_bid(cost: f64, success_probability: f64, penalty: f64) -> Result<f64, OfferError> {
    if !cost.is_finite() {
        return Err(OfferError::NonFinite { field: "cost" });
    }
    if !(0.0..=1.0).contains(&success_probability) {
        return Err(OfferError::ProbabilityOutOfRange(success_probability));
    }
    if !(penalty >= 0.0) || !penalty.is_finite() {
        return Err(OfferError::NegativePenalty(penalty));
    }
    Ok(cost + (1.0 - success_probability) * penalty)
}

/// `Σ ℓ_j · p̂_j` over the given contracts.
pub fn expected_covered_quantity(contracts: &[ContractOffer]) -> Result<f64, OfferError> {
    contracts.iter().map(ContractOffer::expected_kw).sum()
}
