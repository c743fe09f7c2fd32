use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "round,global_acc,mean_client_acc,tail_acc,kappa,silhouette,pkcf_loss,seconds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: usize,
    pub global_acc: f64,
    /// Mean accuracy of the participants' personalised models.
    pub mean_client_acc: f64,
    /// Global-model accuracy averaged over the tail classes.
    pub tail_acc: f64,
    pub kappa: usize,
    pub silhouette: f64,
    /// Final matching loss of this round's feature bank (0 without one).
    pub pkcf_loss: f64,
    /// Wall-clock seconds, recorded only when timing is enabled.
    pub seconds: f64,
    pub mean_train_loss: f64,
    pub participants: Vec<usize>,
    pub client_acc: Vec<f64>,
    pub per_class_acc: Vec<Option<f64>>,
    /// Final `1 - cos` per class from feature synthesis.
    pub pkcf_class_distance: Vec<Option<f64>>,
}

impl RoundMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.round,
            self.global_acc,
            self.mean_client_acc,
            self.tail_acc,
            self.kappa,
            self.silhouette,
            self.pkcf_loss,
            self.seconds
        )
    }
}

pub fn metrics_csv(history: &[RoundMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for m in history {
        let _ = writeln!(out, "{}", m.csv_row());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let m = RoundMetrics {
            round: 3,
            global_acc: 0.5,
            mean_client_acc: 0.25,
            tail_acc: 0.125,
            kappa: 2,
            silhouette: -0.5,
            pkcf_loss: 0.0,
            seconds: 0.0,
            mean_train_loss: 1.0,
            participants: vec![0, 1],
            client_acc: vec![0.2, 0.3],
            per_class_acc: vec![Some(1.0), None],
            pkcf_class_distance: Vec::new(),
        };
        assert_eq!(metrics_csv(&[m]), format!("{CSV_HEADER}\n3,0.5,0.25,0.125,2,-0.5,0,0\n"));
    }
}
