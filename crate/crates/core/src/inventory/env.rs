//! Serial supply chain with lead times and lost sales.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{domain, DrmError, Result};

/// Largest noise term `x_t` in the demand process.
pub const DEMAND_NOISE_MAX: u32 = 7;
/// Period of the deterministic demand component.
pub const DEMAND_PERIOD: usize = 15;
const DEMAND_PHASE: usize = 6;

/// Upper end of the demand support.
pub const MAX_DEMAND: f64 = (DEMAND_NOISE_MAX as usize + DEMAND_PERIOD - 1) as f64;

/// Features are divided by this before entering the policy.
const FEATURE_SCALE: f64 = 20.0;

/// Exogenous constants of an `M`-echelon chain. `prices` has `M + 1`
/// entries; the last is what the manufacturer charges.
#[derive(Debug, Clone, PartialEq)]
pub struct EchelonParams {
    pub lead_times: Vec<usize>,
    pub prices: Vec<f64>,
    pub holding: Vec<f64>,
    pub lost_sale: Vec<f64>,
    pub initial: Vec<f64>,
}

impl EchelonParams {
    pub fn new(lead_times: Vec<usize>, prices: Vec<f64>, holding: Vec<f64>, lost_sale: Vec<f64>, initial: Vec<f64>) -> Result<Self> {
        let m = lead_times.len();
        if m == 0 {
            return Err(DrmError::Config("at least one echelon is required".into()));
        }
        for (context, len, want) in [
            ("prices", prices.len(), m + 1),
            ("holding costs", holding.len(), m),
            ("lost-sale penalties", lost_sale.len(), m),
            ("initial inventories", initial.len(), m),
        ] {
            if len != want {
                return Err(DrmError::DimensionMismatch {
                    context,
                    expected: want,
                    actual: len,
                });
            }
        }
        if let Some(&l) = lead_times.iter().find(|&&l| l == 0) {
            return Err(domain("lead time", l as f64, ">= 1"));
        }
        for v in prices.iter().chain(&holding).chain(&lost_sale).chain(&initial) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(domain("echelon constant", *v, "finite and >= 0"));
            }
        }
        Ok(Self {
            lead_times,
            prices,
            holding,
            lost_sale,
            initial,
        })
    }

    /// Three echelons with the reference constants.
    pub fn three_echelon() -> Self {
        Self {
            lead_times: vec![2, 3, 5],
            prices: vec![2.0, 1.5, 1.0, 0.5],
            holding: vec![0.2, 0.15, 0.1],
            lost_sale: vec![0.125, 0.1, 0.075],
            initial: vec![10.0, 10.0, 10.0],
        }
    }

    /// First echelon of the reference chain, supplied directly by the
    /// manufacturer at the second echelon's price.
    pub fn single_echelon() -> Self {
        Self {
            lead_times: vec![2],
            prices: vec![2.0, 1.5],
            holding: vec![0.2],
            lost_sale: vec![0.125],
            initial: vec![10.0],
        }
    }

    pub fn echelons(&self) -> usize {
        self.lead_times.len()
    }

    /// Window length `L = max_j L_j`.
    pub fn window(&self) -> usize {
        self.lead_times.iter().copied().max().unwrap_or(1)
    }

    /// Length of [`InventoryState::features`].
    pub fn feature_len(&self) -> usize {
        self.window() * (4 * self.echelons() + 1) + 2
    }

    /// Per-period profit bound `Σ_j p_j · max demand`.
    pub fn profit_bound(&self) -> f64 {
        self.prices.iter().sum::<f64>() * MAX_DEMAND
    }
}

/// Quantities recorded for one period.
#[derive(Debug, Clone, PartialEq)]
pub struct Period {
    /// On-hand inventory `I^j` at the end of the period.
    pub inventory: Vec<f64>,
    /// Lost sales `U^j`.
    pub lost: Vec<f64>,
    /// Shipments `S^j` for `j = 1..M+1`; the last entry is the manufacturer's.
    pub shipped: Vec<f64>,
    /// Orders `Q^j` for `j = 0..M`; entry 0 is the customer demand.
    pub orders: Vec<f64>,
}

impl Period {
    fn idle(params: &EchelonParams) -> Self {
        let m = params.echelons();
        Self {
            inventory: params.initial.clone(),
            lost: vec![0.0; m],
            shipped: vec![0.0; m + 1],
            orders: vec![0.0; m + 1],
        }
    }
}

/// The last `L` periods and the index of the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct InventoryState {
    pub t: usize,
    /// Oldest first; always exactly `L` entries.
    pub window: VecDeque<Period>,
}

impl InventoryState {
    /// Initial inventories, empty pipelines, `t = 0`.
    pub fn initial(params: &EchelonParams) -> Self {
        Self {
            t: 0,
            window: (0..params.window()).map(|_| Period::idle(params)).collect(),
        }
    }

    /// On-hand inventory `I_{t−1}`.
    pub fn on_hand(&self) -> &[f64] {
        &self.window.back().expect("window is never empty").inventory
    }

    /// Shipment arriving at echelon `j` (0-based) this period: `S^{j+1}_{t−L_j}`.
    pub fn arrival(&self, params: &EchelonParams, j: usize) -> f64 {
        let lag = params.lead_times[j];
        self.window[self.window.len() - lag].shipped[j + 1]
    }

    /// Flattened window scaled for the policy, followed by `t / horizon`
    /// and the demand phase.
    pub fn features(&self, horizon: usize, out: &mut Vec<f64>) {
        out.clear();
        for p in &self.window {
            let m = p.inventory.len();
            out.extend(p.inventory.iter().map(|v| v / FEATURE_SCALE));
            out.extend(p.lost.iter().map(|v| v / FEATURE_SCALE));
            out.extend(p.shipped[..m].iter().map(|v| v / FEATURE_SCALE));
            out.extend(p.orders.iter().map(|v| v / FEATURE_SCALE));
        }
        out.push(self.t as f64 / horizon.max(1) as f64);
        out.push(((self.t + DEMAND_PHASE) % DEMAND_PERIOD) as f64 / DEMAND_PERIOD as f64);
    }
}

/// Customer demand `x + ((t + 6) mod 15)`.
pub fn demand(t: usize, x: u32) -> f64 {
    (x as usize + (t + DEMAND_PHASE) % DEMAND_PERIOD) as f64
}

pub fn sample_demand(t: usize, rng: &mut impl Rng) -> f64 {
    demand(t, rng.random_range(0..=DEMAND_NOISE_MAX))
}

/// Clamp at zero and round, turning a continuous action into orders.
pub fn to_orders(actions: &[f64]) -> Vec<f64> {
    actions.iter().map(|a| a.max(0.0).round()).collect()
}

/// Advance one period with a given demand; returns the next state and
/// the summed echelon profit.
pub fn transition(params: &EchelonParams, state: &InventoryState, demand: f64, orders: &[f64]) -> Result<(InventoryState, f64)> {
    let m = params.echelons();
    if orders.len() != m {
        return Err(DrmError::DimensionMismatch {
            context: "orders",
            expected: m,
            actual: orders.len(),
        });
    }
    if let Some(&q) = orders.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
        return Err(domain("order", q, "finite and >= 0"));
    }
    if !(demand.is_finite() && demand >= 0.0) {
        return Err(domain("demand", demand, "finite and >= 0"));
    }
    let mut q = Vec::with_capacity(m + 1);
    q.push(demand);
    q.extend_from_slice(orders);

    let prev = state.on_hand();
    let mut shipped = vec![0.0; m + 1];
    let mut lost = vec![0.0; m];
    let mut inventory = vec![0.0; m];
    for j in 0..m {
        let available = prev[j] + state.arrival(params, j);
        shipped[j] = q[j] - (q[j] - available).max(0.0);
        lost[j] = (q[j] - shipped[j]).max(0.0);
        inventory[j] = (available - shipped[j]).max(0.0);
    }
    shipped[m] = q[m];

    let mut reward = 0.0;
    for j in 0..m {
        reward += params.prices[j] * shipped[j]
            - params.prices[j + 1] * shipped[j + 1]
            - params.holding[j] * inventory[j]
            - params.lost_sale[j] * lost[j];
    }

    let mut next = state.clone();
    next.window.pop_front();
    next.window.push_back(Period {
        inventory,
        lost,
        shipped,
        orders: q,
    });
    next.t += 1;
    Ok((next, reward))
}

/// One period with demand drawn from the demand process.
pub fn env_step(params: &EchelonParams, state: &InventoryState, orders: &[f64], rng: &mut impl Rng) -> Result<(InventoryState, f64)> {
    let d = sample_demand(state.t, rng);
    transition(params, state, d, orders)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_constants() {
        let p = EchelonParams::three_echelon();
        assert_eq!(p.lead_times, [2, 3, 5]);
        assert_eq!(p.prices, [2.0, 1.5, 1.0, 0.5]);
        assert_eq!(p.holding, [0.2, 0.15, 0.1]);
        assert_eq!(p.lost_sale, [0.125, 0.1, 0.075]);
        assert_eq!(p.initial, [10.0, 10.0, 10.0]);
        assert_eq!(p.window(), 5);
        assert!(EchelonParams::new(p.lead_times.clone(), p.prices.clone(), p.holding.clone(), p.lost_sale.clone(), p.initial.clone()).is_ok());
        assert!(EchelonParams::new(vec![2], vec![1.0], vec![0.1], vec![0.1], vec![1.0]).is_err());
        assert!(EchelonParams::new(vec![0], vec![1.0, 1.0], vec![0.1], vec![0.1], vec![1.0]).is_err());
    }

    #[test]
    fn single_echelon_hand_case() {
        let p = EchelonParams::single_echelon();
        let s = InventoryState::initial(&p);
        assert_eq!(s.on_hand(), [10.0]);
        assert_eq!(s.arrival(&p, 0), 0.0);
        let (next, r) = transition(&p, &s, 4.0, &[4.0]).unwrap();
        let last = next.window.back().unwrap();
        assert_eq!(last.shipped, [4.0, 4.0]);
        assert_eq!(last.lost, [0.0]);
        assert_eq!(last.inventory, [6.0]);
        assert!((r - 0.8).abs() < 1e-12, "{r}");
        assert_eq!(next.t, 1);
        assert_eq!(next.window.len(), 2);
    }

    #[test]
    fn zero_everything_gives_zero_reward() {
        let mut p = EchelonParams::three_echelon();
        p.initial = vec![0.0; 3];
        let s = InventoryState::initial(&p);
        let (next, r) = transition(&p, &s, 0.0, &[0.0; 3]).unwrap();
        let last = next.window.back().unwrap();
        assert!(last.shipped.iter().chain(&last.lost).all(|&v| v == 0.0));
        assert_eq!(r, 0.0);
    }

    #[test]
    fn first_period_demand_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let d = sample_demand(0, &mut rng);
            assert!((6.0..=13.0).contains(&d));
        }
        assert_eq!(demand(9, 0), 0.0);
        assert_eq!(demand(8, 7), MAX_DEMAND);
    }

    #[test]
    fn lead_time_delivers_after_lag() {
        let p = EchelonParams::single_echelon();
        let mut s = InventoryState::initial(&p);
        // order 5 in period 0 arrives in period 2
        let (n, _) = transition(&p, &s, 0.0, &[5.0]).unwrap();
        s = n;
        assert_eq!(s.arrival(&p, 0), 0.0);
        let (n, _) = transition(&p, &s, 0.0, &[0.0]).unwrap();
        s = n;
        assert_eq!(s.arrival(&p, 0), 5.0);
        let (n, _) = transition(&p, &s, 0.0, &[0.0]).unwrap();
        assert_eq!(n.on_hand(), [15.0]);
    }

    #[test]
    fn shortage_is_lost() {
        let p = EchelonParams::single_echelon();
        let s = InventoryState::initial(&p);
        let (n, r) = transition(&p, &s, 13.0, &[0.0]).unwrap();
        let last = n.window.back().unwrap();
        assert_eq!(last.shipped[0], 10.0);
        assert_eq!(last.lost, [3.0]);
        assert_eq!(last.inventory, [0.0]);
        assert!((r - (20.0 - 0.125 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_orders() {
        let p = EchelonParams::three_echelon();
        let s = InventoryState::initial(&p);
        assert!(transition(&p, &s, 1.0, &[1.0, -1.0, 0.0]).is_err());
        assert!(transition(&p, &s, 1.0, &[1.0]).is_err());
        assert_eq!(to_orders(&[-0.3, 2.6, 1.49]), [0.0, 3.0, 1.0]);
    }

    #[test]
    fn features_have_declared_length() {
        for p in [EchelonParams::single_echelon(), EchelonParams::three_echelon()] {
            let mut f = Vec::new();
            InventoryState::initial(&p).features(100, &mut f);
            assert_eq!(f.len(), p.feature_len());
        }
    }
}
