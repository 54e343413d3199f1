//! Side-selection rules. All of them read only the [`MaskedView`].

use serde::{Deserialize, Serialize};

use crate::mixture::{fit_em, lfdr_masked, MixtureParams};
use crate::procedure::{MaskedView, Side, SideStrategy};

/// Strictly alternates positive, negative, positive, ... by step number.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlternateStrategy;

impl SideStrategy for AlternateStrategy {
    fn choose(&mut self, view: &MaskedView<'_>) -> Side {
        if view.step().is_multiple_of(2) {
            Side::Positive
        } else {
            Side::Negative
        }
    }
}

/// Shrinks the side whose next pair is closer to `±1/2`; ties go positive.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestStrategy;

impl SideStrategy for NearestStrategy {
    fn choose(&mut self, view: &MaskedView<'_>) -> Side {
        match (view.next(Side::Positive), view.next(Side::Negative)) {
            (Some(p), Some(n)) if n.distance < p.distance => Side::Negative,
            (None, Some(_)) => Side::Negative,
            _ => Side::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmSettings {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

/// Accepts the side whose next pair has the larger local FDR (ties go
/// positive), with the mixture refitted on the masked data every
/// `refit_interval` accepted pairs, warm-started from the previous fit.
#[derive(Debug, Clone)]
pub struct LfdrStrategy {
    refit_interval: usize,
    em: EmSettings,
    params: Option<MixtureParams>,
    fitted_at: usize,
    fits: usize,
}

impl LfdrStrategy {
    pub fn new(refit_interval: usize, em: EmSettings) -> Self {
        Self {
            refit_interval: refit_interval.max(1),
            em,
            params: None,
            fitted_at: 0,
            fits: 0,
        }
    }

    /// `max(1, n / 50)`.
    pub fn default_interval(n: usize) -> usize {
        (n / 50).max(1)
    }

    pub fn for_size(n: usize) -> Self {
        Self::new(Self::default_interval(n), EmSettings::default())
    }

    /// Parameters of the most recent fit.
    pub fn params(&self) -> Option<MixtureParams> {
        self.params
    }

    pub fn fits(&self) -> usize {
        self.fits
    }

    fn refresh(&mut self, view: &MaskedView<'_>) -> MixtureParams {
        let accepted = view.accepted_positive() + view.accepted_negative();
        match self.params {
            Some(p) if accepted < self.fitted_at + self.refit_interval => p,
            prev => {
                let init = prev.unwrap_or_else(|| MixtureParams::initial_guess(view));
                let fitted = match fit_em(view, init, self.em.max_iter, self.em.tol) {
                    Ok(rep) => rep.params,
                    Err(e) => {
                        log::warn!("EM refit failed, keeping previous parameters: {e}");
                        init
                    }
                };
                self.params = Some(fitted);
                self.fitted_at = accepted;
                self.fits += 1;
                fitted
            }
        }
    }
}

impl SideStrategy for LfdrStrategy {
    fn choose(&mut self, view: &MaskedView<'_>) -> Side {
        let params = self.refresh(view);
        match (view.next(Side::Positive), view.next(Side::Negative)) {
            (Some(p), Some(n)) => {
                let (lp, ln) = (lfdr_masked(&p, &params), lfdr_masked(&n, &params));
                // rounding in the fit must not break exact mirror-image ties
                if lp >= ln - TIE_TOLERANCE * lp.max(ln) {
                    Side::Positive
                } else {
                    Side::Negative
                }
            }
            (None, Some(_)) => Side::Negative,
            _ => Side::Positive,
        }
    }
}

const TIE_TOLERANCE: f64 = 1e-12;

/// Serializable strategy choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StrategyKind {
    #[default]
    Lfdr,
    LfdrEvery {
        refit_interval: usize,
    },
    Alternate,
    Nearest,
}

impl StrategyKind {
    pub fn build(&self, n: usize) -> Box<dyn SideStrategy + Send> {
        match *self {
            StrategyKind::Lfdr => Box::new(LfdrStrategy::for_size(n)),
            StrategyKind::LfdrEvery { refit_interval } => {
                Box::new(LfdrStrategy::new(refit_interval, EmSettings::default()))
            }
            StrategyKind::Alternate => Box::new(AlternateStrategy),
            StrategyKind::Nearest => Box::new(NearestStrategy),
        }
    }

    pub fn name(&self) -> String {
        match self {
            StrategyKind::Lfdr => "lfdr".into(),
            StrategyKind::LfdrEvery { refit_interval } => format!("lfdr:{refit_interval}"),
            StrategyKind::Alternate => "alternate".into(),
            StrategyKind::Nearest => "nearest".into(),
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lfdr" => Ok(StrategyKind::Lfdr),
            "alternate" => Ok(StrategyKind::Alternate),
            "nearest" => Ok(StrategyKind::Nearest),
            other => match other.strip_prefix("lfdr:") {
                Some(k) => k
                    .parse::<usize>()
                    .ok()
                    .filter(|&k| k >= 1)
                    .map(|refit_interval| StrategyKind::LfdrEvery { refit_interval })
                    .ok_or_else(|| format!("bad refit interval in '{s}'")),
                None => Err(format!("unknown strategy '{s}' (lfdr, lfdr:<k>, alternate, nearest)")),
            },
        }
    }
}
