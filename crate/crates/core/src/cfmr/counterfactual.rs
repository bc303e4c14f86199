use crate::cfmr::model::Scores;
use crate::error::Result;
use crate::numerics::sigmoid;
use crate::scalar::Scalar;

/// `y = ŷ_{u,i}·sigm(ŷ_i) − γ·sigm(ŷ_i)`: removes the direct item effect
/// from the matching score at inference time.
pub fn counterfactual_adjust(raw: f64, item: f64, gamma: f64) -> f64 {
    let s = sigmoid(item);
    raw * s - gamma * s
}

/// Anything that can produce ranking scores for the evaluated users.
pub trait Scorer {
    /// Final ranking scores, `n_users × n_items`, row-major.
    fn ranking_scores(&self) -> Result<Vec<Vec<f64>>>;
}

/// Ranking view over recommender scores, with or without the
/// counterfactual correction.
#[derive(Debug, Clone)]
pub struct AdjustedScores<'a, S> {
    pub scores: &'a Scores<S>,
    /// `None` ranks by the raw matching score.
    pub gamma: Option<f64>,
}

impl<S: Scalar> AdjustedScores<'_, S> {
    pub fn score(&self, user: usize, item: usize) -> f64 {
        let raw = self.scores.raw.get(user, item).as_f64();
        match self.gamma {
            Some(g) => counterfactual_adjust(raw, self.scores.item[item].as_f64(), g),
            None => raw,
        }
    }
}

impl<S: Scalar> Scorer for AdjustedScores<'_, S> {
    fn ranking_scores(&self) -> Result<Vec<Vec<f64>>> {
        let (nu, ni) = (self.scores.raw.rows(), self.scores.raw.cols());
        Ok((0..nu).map(|u| (0..ni).map(|i| self.score(u, i)).collect()).collect())
    }
}
