use crate::types::{AgentId, ValuationProfile};

/// Exact verification oracle: `ver(i)` answers whether agent `i` reported its
/// true valuation. Answers never depend on query order; every query is logged.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationOracle {
    truth_bits: Vec<bool>,
    call_log: Vec<AgentId>,
}

impl VerificationOracle {
    /// Truth bits are indexed by stable agent id.
    pub fn from_bits(truth_bits: Vec<bool>) -> Self {
        Self {
            truth_bits,
            call_log: Vec::new(),
        }
    }

    pub fn from_profile(profile: &ValuationProfile) -> Self {
        let mut bits = vec![true; profile.id_bound()];
        for i in 0..profile.n() {
            bits[profile.id(i)] = profile.is_truthful(i);
        }
        Self::from_bits(bits)
    }

    /// `ver(i) = s_i`. Unknown ids are treated as truthful.
    pub fn ver(&mut self, id: AgentId) -> bool {
        self.call_log.push(id);
        self.truth_bits.get(id).copied().unwrap_or(true)
    }

    pub fn call_log(&self) -> &[AgentId] {
        &self.call_log
    }

    pub fn truth_bits(&self) -> &[bool] {
        &self.truth_bits
    }

    /// Ids of agents whose bit is 0, i.e. the set `L`.
    pub fn liars(&self) -> Vec<AgentId> {
        (0..self.truth_bits.len()).filter(|&i| !self.truth_bits[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_is_pure_and_logs() {
        let p = ValuationProfile::new(
            1,
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![vec![1.0], vec![0.5], vec![3.0]],
        )
        .unwrap();
        let mut o = VerificationOracle::from_profile(&p);
        assert!(!o.ver(1));
        assert!(o.ver(0));
        assert!(!o.ver(1));
        assert!(o.ver(2));
        assert_eq!(o.call_log(), &[1, 0, 1, 2]);
        assert_eq!(o.liars(), vec![1]);
    }

    #[test]
    fn bits_follow_stable_ids_after_exclusion() {
        let p = ValuationProfile::new(
            1,
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![vec![1.0], vec![2.0], vec![0.0]],
        )
        .unwrap();
        let q = p.exclude(&[0]).unwrap();
        let mut o = VerificationOracle::from_profile(&q);
        assert!(o.ver(1));
        assert!(!o.ver(2));
    }
}
