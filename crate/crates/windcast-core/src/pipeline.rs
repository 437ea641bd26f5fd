//! End-to-end forecasting pipeline.
//!
//! The series is split into train and test spans, decomposed into modes,
//! and each mode is forecast by its own transformer. Summing the per-mode
//! forecasts gives the primary forecast. A small MLP, fit on the residual
//! errors the trained stack makes over a calibration slice of the train
//! span, then forecasts the error the primary forecast will make on the
//! test span; adding that forecast error back in yields the corrected
//! forecast.

use crate::emd::Decomposition;
use crate::error::{Error, Result};
use crate::iceemdan::{iceemdan, iceemdan_with_bank, IceemdanParams, NoiseBank};
use crate::metrics::{compute_metrics, ErrorMetrics};
use crate::mlp::{forecast_errors as mlp_forecast_errors, train_lm, LmParams, ResidualMlp};
use crate::parallel::ordered_map;
use crate::rng::derive_seed;
use crate::scale::ScaleParams;
use crate::series::TimeSeries;
use crate::transformer::{
    forecast_subseries, predict_next, train, TransformerConfig, TransformerModel,
};

/// Forecast horizons, in steps, for rolling-origin evaluation.
///
/// With 10-minute sampling the defaults correspond to 10 minutes, 1 hour,
/// 1 day, and 1 week.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Horizons {
    pub very_short: usize,
    pub short: usize,
    pub medium: usize,
    pub long: usize,
}

impl Default for Horizons {
    fn default() -> Self {
        Horizons { very_short: 1, short: 6, medium: 144, long: 1008 }
    }
}

impl Horizons {
    /// Class labels paired with their step counts, shortest first.
    pub fn labeled(&self) -> [(&'static str, usize); 4] {
        [
            ("very_short", self.very_short),
            ("short", self.short),
            ("medium", self.medium),
            ("long", self.long),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.very_short == 0 {
            return Err(Error::InvalidParameter("horizons must be >= 1 step".into()));
        }
        let steps = [self.very_short, self.short, self.medium, self.long];
        if !steps.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter(format!(
                "horizons must be strictly increasing, got {steps:?}"
            )));
        }
        Ok(())
    }
}

/// Where the train span ends and the test span begins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Train on the leading fraction of the series.
    Fraction(f64),
    /// Train on exactly the first `n` values.
    Index(usize),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fraction(0.8)
    }
}

impl SplitSpec {
    /// Number of training values for a series of the given length.
    pub fn resolve(&self, len: usize) -> Result<usize> {
        let boundary = match *self {
            SplitSpec::Fraction(f) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "split fraction must lie in (0, 1), got {f}"
                    )));
                }
                (len as f64 * f).floor() as usize
            }
            SplitSpec::Index(i) => i,
        };
        if boundary == 0 || boundary >= len {
            return Err(Error::BoundaryOutOfRange { boundary, len });
        }
        Ok(boundary)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub iceemdan: IceemdanParams,
    /// Template for every per-mode forecaster; only the seed varies by mode.
    pub transformer: TransformerConfig,
    /// Lagged residual errors fed to the correction MLP.
    pub mlp_lags: usize,
    pub lm: LmParams,
    pub horizons: Horizons,
    pub split: SplitSpec,
    /// Trailing share of the train span reserved for fitting the error MLP.
    pub calibration_fraction: f64,
    /// Decompose only the train span and extend each mode autoregressively,
    /// instead of decomposing the full series.
    pub strict_causal: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            iceemdan: IceemdanParams::default(),
            transformer: TransformerConfig::default(),
            mlp_lags: 6,
            lm: LmParams::default(),
            horizons: Horizons::default(),
            split: SplitSpec::default(),
            calibration_fraction: 0.2,
            strict_causal: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.iceemdan.validate()?;
        self.transformer.validate()?;
        self.lm.validate()?;
        self.horizons.validate()?;
        if self.mlp_lags == 0 {
            return Err(Error::InvalidParameter("mlp_lags must be >= 1".into()));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "calibration_fraction must lie in (0, 1), got {}",
                self.calibration_fraction
            )));
        }
        if let SplitSpec::Fraction(f) = self.split {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "split fraction must lie in (0, 1), got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything `run_pipeline` produces for the test span.
///
/// All per-position vectors have the same length (the test span), and
/// `corrected[u] == primary[u] + forecast_errors[u]` bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastReport {
    /// Observed test-span values.
    pub ground: Vec<f64>,
    /// Fused one-step-ahead forecast of the mode stack.
    pub primary: Vec<f64>,
    /// Primary forecast plus the forecast residual error.
    pub corrected: Vec<f64>,
    /// Observed errors of the primary forecast: ground minus primary.
    pub residual_errors: Vec<f64>,
    /// MLP forecast of the residual errors, made from calibration history.
    pub forecast_errors: Vec<f64>,
    pub metrics_primary: ErrorMetrics,
    pub metrics_corrected: ErrorMetrics,
    /// Persistence of the last training value, for reference.
    pub baseline_metrics: ErrorMetrics,
    /// Rolling-origin metrics per horizon class, shortest first.
    pub per_horizon: Vec<(String, ErrorMetrics)>,
}

/// Sums per-mode forecasts pointwise into one forecast.
pub fn fuse(forecasts: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = forecasts.first().ok_or(Error::EmptySeries)?;
    let mut out = first.clone();
    for f in &forecasts[1..] {
        if f.len() != out.len() {
            return Err(Error::LengthMismatch { left: out.len(), right: f.len() });
        }
        for (o, v) in out.iter_mut().zip(f) {
            *o += v;
        }
    }
    Ok(out)
}

/// Pointwise error of a forecast: ground minus forecast.
pub fn residual_errors(ground: &[f64], forecast: &[f64]) -> Result<Vec<f64>> {
    if ground.len() != forecast.len() {
        return Err(Error::LengthMismatch { left: ground.len(), right: forecast.len() });
    }
    Ok(ground.iter().zip(forecast).map(|(g, f)| g - f).collect())
}

/// Adds forecast errors back onto a forecast.
pub fn correct(forecast: &[f64], errors: &[f64]) -> Result<Vec<f64>> {
    if forecast.len() != errors.len() {
        return Err(Error::LengthMismatch { left: forecast.len(), right: errors.len() });
    }
    Ok(forecast.iter().zip(errors).map(|(f, e)| f + e).collect())
}

/// Repeats the last observed value for the requested number of steps.
pub fn persistence_baseline(history: &[f64], steps: usize) -> Result<Vec<f64>> {
    let last = *history.last().ok_or(Error::EmptySeries)?;
    Ok(vec![last; steps])
}

/// Forecaster for one mode of the decomposition.
///
/// Zero-padded modes (and any other mode that is constant over the train
/// span) cannot be min-max scaled, so they fall back to repeating the
/// constant, which is exact for them.
enum ModeForecaster {
    Constant { value: f64 },
    Model {
        model: Box<TransformerModel>,
        scale: ScaleParams,
        /// Scaled mode values over the full span. In strict-causal runs the
        /// test part holds the model's own autoregressive continuation.
        working: Vec<f64>,
    },
}

impl ModeForecaster {
    /// One-step-ahead prediction of the mode value at `t` from everything
    /// before `t`, in original units.
    fn one_step(&self, t: usize) -> Result<f64> {
        match self {
            ModeForecaster::Constant { value } => Ok(*value),
            ModeForecaster::Model { model, scale, working } => {
                Ok(scale.invert(predict_next(model, &working[..t])?))
            }
        }
    }

    /// Autoregressive rollout of `steps` values from everything before
    /// `origin`, in original units.
    fn rollout(&self, origin: usize, steps: usize) -> Result<Vec<f64>> {
        match self {
            ModeForecaster::Constant { value } => Ok(vec![*value; steps]),
            ModeForecaster::Model { model, scale, working } => {
                let scaled = forecast_subseries(model, &working[..origin], steps)?;
                Ok(scale.invert_slice(&scaled))
            }
        }
    }
}

/// Decomposition plus one trained forecaster per mode.
pub struct TrainedPipeline {
    config: PipelineConfig,
    boundary: usize,
    values: Vec<f64>,
    modes: Vec<ModeForecaster>,
}

/// Decomposes and trains the per-mode forecasters without producing a
/// report yet. `run_pipeline` is the one-call wrapper.
pub fn train_pipeline(config: &PipelineConfig, data: &TimeSeries) -> Result<TrainedPipeline> {
    config.validate()?;
    let boundary = config.split.resolve(data.len())?;
    let span = if config.strict_causal { &data.values()[..boundary] } else { data.values() };
    let decomp = iceemdan(span, &config.iceemdan)
        .map_err(|e| e.in_stage("decomposition", None))?;
    train_with_decomposition(config, data, boundary, &decomp)
}

fn train_with_decomposition(
    config: &PipelineConfig,
    data: &TimeSeries,
    boundary: usize,
    decomp: &Decomposition,
) -> Result<TrainedPipeline> {
    let len = data.len();
    let test_len = len - boundary;
    let cal_len = (boundary as f64 * config.calibration_fraction).floor() as usize;
    if cal_len < config.mlp_lags + 1 {
        return Err(Error::SeriesTooShort { len: cal_len, min: config.mlp_lags + 1 }
            .in_stage("residual-error calibration", None));
    }
    let cal_start = boundary - cal_len;
    let min_history = config.transformer.min_history();
    if cal_start < min_history {
        return Err(Error::InsufficientHistory { need: min_history, have: cal_start }
            .in_stage("residual-error calibration", None));
    }

    let mut modes: Vec<&[f64]> = decomp.imfs.iter().map(Vec::as_slice).collect();
    modes.push(&decomp.residue);

    let built = ordered_map(modes.len(), |k| {
        build_mode_forecaster(config, modes[k], k, boundary, test_len)
            .map_err(|e| e.in_stage("mode forecaster", Some(k)))
    });
    let mut forecasters = Vec::with_capacity(built.len());
    for b in built {
        forecasters.push(b?);
    }

    Ok(TrainedPipeline {
        config: config.clone(),
        boundary,
        values: data.values().to_vec(),
        modes: forecasters,
    })
}

fn build_mode_forecaster(
    config: &PipelineConfig,
    mode: &[f64],
    index: usize,
    boundary: usize,
    test_len: usize,
) -> Result<ModeForecaster> {
    let train_span = &mode[..boundary.min(mode.len())];
    let scale = match ScaleParams::fit_unit(train_span) {
        Ok(s) => s,
        Err(Error::ConstantSeries { value }) => {
            return Ok(ModeForecaster::Constant { value });
        }
        Err(e) => return Err(e),
    };

    let mut cfg = config.transformer.clone();
    cfg.seed = derive_seed(config.transformer.seed, "mode", index as u64);
    let mut model = TransformerModel::new(cfg)?;
    let scaled_train = scale.apply_slice(train_span);
    train(&mut model, &scaled_train)?;

    let working = if config.strict_causal {
        let mut w = scaled_train;
        w.extend(forecast_subseries(&model, &w, test_len)?);
        w
    } else {
        scale.apply_slice(mode)
    };
    Ok(ModeForecaster::Model { model: Box::new(model), scale, working })
}

impl TrainedPipeline {
    /// Index of the first test value.
    pub fn boundary(&self) -> usize {
        self.boundary
    }

    /// Trained transformer per mode, in decomposition order (modes first,
    /// residue last). Constant modes carry no model.
    pub fn mode_models(&self) -> Vec<Option<&TransformerModel>> {
        self.modes
            .iter()
            .map(|m| match m {
                ModeForecaster::Constant { .. } => None,
                ModeForecaster::Model { model, .. } => Some(model.as_ref()),
            })
            .collect()
    }

    /// Forecasts, corrects, and evaluates, producing the full report.
    pub fn report(&self) -> Result<ForecastReport> {
        report_from(self)
    }

    /// Fused one-step-ahead forecasts for positions `from..to`.
    fn one_step_block(&self, from: usize, to: usize) -> Result<Vec<f64>> {
        let per_mode = ordered_map(self.modes.len(), |k| {
            (from..to)
                .map(|t| self.modes[k].one_step(t))
                .collect::<Result<Vec<f64>>>()
                .map_err(|e| e.in_stage("one-step forecast", Some(k)))
        });
        let mut collected = Vec::with_capacity(per_mode.len());
        for m in per_mode {
            collected.push(m?);
        }
        fuse(&collected)
    }

    /// Fused autoregressive rollout of `steps` values from position `origin`.
    fn fused_rollout(&self, origin: usize, steps: usize) -> Result<Vec<f64>> {
        let mut per_mode = Vec::with_capacity(self.modes.len());
        for (k, mode) in self.modes.iter().enumerate() {
            per_mode.push(
                mode.rollout(origin, steps)
                    .map_err(|e| e.in_stage("rollout forecast", Some(k)))?,
            );
        }
        fuse(&per_mode)
    }

    /// Fused one-step-ahead forecast over the whole test span.
    pub fn primary_forecast(&self) -> Result<Vec<f64>> {
        self.one_step_block(self.boundary, self.values.len())
    }

    /// Rolling-origin evaluation: for each horizon class, forecasts of that
    /// many steps are issued at origins advancing by the horizon, starting
    /// at the test boundary, and the per-class error indices are computed
    /// over all forecast steps pooled. A trailing test stub shorter than
    /// the horizon is not forecast.
    pub fn horizon_eval(&self, horizons: &Horizons) -> Result<Vec<(String, ErrorMetrics)>> {
        horizons.validate()?;
        let len = self.values.len();
        let test_len = len - self.boundary;
        let mut out = Vec::with_capacity(4);
        for (label, h) in horizons.labeled() {
            if h > test_len {
                return Err(Error::InvalidParameter(format!(
                    "horizon `{label}` needs {h} steps but the test span has {test_len}"
                )));
            }
            let origins: Vec<usize> =
                (self.boundary..=len - h).step_by(h).collect();
            let chunks = ordered_map(origins.len(), |i| {
                self.fused_rollout(origins[i], h)
            });
            let mut forecast = Vec::with_capacity(origins.len() * h);
            for c in chunks {
                forecast.extend(c?);
            }
            let mut ground = Vec::with_capacity(forecast.len());
            for &o in &origins {
                ground.extend_from_slice(&self.values[o..o + h]);
            }
            let metrics = compute_metrics(&ground, &forecast)
                .map_err(|e| e.in_stage("horizon evaluation", None))?;
            out.push((label.to_string(), metrics));
        }
        Ok(out)
    }
}

/// Runs the full pipeline and assembles the report.
pub fn run_pipeline(config: &PipelineConfig, data: &TimeSeries) -> Result<ForecastReport> {
    let trained = train_pipeline(config, data)?;
    report_from(&trained)
}

fn report_from(t: &TrainedPipeline) -> Result<ForecastReport> {
    let config = &t.config;
    let boundary = t.boundary;
    let len = t.values.len();
    let test_len = len - boundary;
    let ground_test = t.values[boundary..].to_vec();

    let primary = t
        .one_step_block(boundary, len)
        .map_err(|e| e.in_stage("primary forecast", None))?;

    // Residual errors the trained stack makes on data it did not fit the
    // error model to yet: the trailing calibration slice of the train span.
    let cal_len = (boundary as f64 * config.calibration_fraction).floor() as usize;
    let cal_start = boundary - cal_len;
    let cal_forecast = t
        .one_step_block(cal_start, boundary)
        .map_err(|e| e.in_stage("calibration forecast", None))?;
    let cal_errors = residual_errors(&t.values[cal_start..boundary], &cal_forecast)?;

    let forecast_errs = forecast_residual_errors(config, &cal_errors, test_len)
        .map_err(|e| e.in_stage("residual-error model", None))?;

    let corrected = correct(&primary, &forecast_errs)?;
    let test_residuals = residual_errors(&ground_test, &primary)?;

    let metrics_primary = compute_metrics(&ground_test, &primary)
        .map_err(|e| e.in_stage("error indices", None))?;
    let metrics_corrected = compute_metrics(&ground_test, &corrected)
        .map_err(|e| e.in_stage("error indices", None))?;
    let baseline = persistence_baseline(&t.values[..boundary], test_len)?;
    let baseline_metrics = compute_metrics(&ground_test, &baseline)
        .map_err(|e| e.in_stage("error indices", None))?;
    let per_horizon = t.horizon_eval(&config.horizons)?;

    Ok(ForecastReport {
        ground: ground_test,
        primary,
        corrected,
        residual_errors: test_residuals,
        forecast_errors: forecast_errs,
        metrics_primary,
        metrics_corrected,
        baseline_metrics,
        per_horizon,
    })
}

/// Fits the error MLP on the calibration errors and rolls it forward over
/// the test span.
///
/// Constant calibration errors cannot be scaled into the tanh input range,
/// so they are persisted instead; this also covers the degenerate case of a
/// stack that fits its calibration slice perfectly.
fn forecast_residual_errors(
    config: &PipelineConfig,
    cal_errors: &[f64],
    steps: usize,
) -> Result<Vec<f64>> {
    let scale = match ScaleParams::fit(cal_errors, -0.9, 0.9) {
        Ok(s) => s,
        Err(Error::ConstantSeries { value }) => return Ok(vec![value; steps]),
        Err(e) => return Err(e),
    };
    let scaled = scale.apply_slice(cal_errors);
    let lags = config.mlp_lags;
    let samples: Vec<(Vec<f64>, f64)> = (0..scaled.len() - lags)
        .map(|i| (scaled[i..i + lags].to_vec(), scaled[i + lags]))
        .collect();
    let mut net = ResidualMlp::new(lags, config.lm.seed)?;
    train_lm(&mut net, &samples, &config.lm)?;
    mlp_forecast_errors(&net, cal_errors, steps, &scale)
}

/// Reruns the pipeline for each candidate mode count and reports the
/// corrected-forecast error indices per count.
///
/// The ensemble noise realizations and their decompositions are computed
/// once and shared across all counts, so every run sees the same noise.
pub fn imf_sweep(
    config: &PipelineConfig,
    data: &TimeSeries,
    counts: &[usize],
) -> Result<Vec<(usize, ErrorMetrics)>> {
    config.validate()?;
    if counts.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one mode count".into()));
    }
    for &k in counts {
        if !(1..=16).contains(&k) {
            return Err(Error::InvalidParameter(format!(
                "mode counts must lie in [1, 16], got {k}"
            )));
        }
    }
    let boundary = config.split.resolve(data.len())?;
    let span = if config.strict_causal { &data.values()[..boundary] } else { data.values() };
    let bank_params = IceemdanParams {
        max_imfs: *counts.iter().max().expect("counts checked non-empty"),
        ..config.iceemdan
    };
    let bank = NoiseBank::build(span.len(), &bank_params);

    let mut rows = Vec::with_capacity(counts.len());
    for &k in counts {
        let params_k = IceemdanParams { max_imfs: k, ..config.iceemdan };
        let decomp = iceemdan_with_bank(span, &params_k, &bank)
            .map_err(|e| e.in_stage("decomposition", None))?;
        let config_k = PipelineConfig { iceemdan: params_k, ..config.clone() };
        let trained = train_with_decomposition(&config_k, data, boundary, &decomp)?;
        let report = report_from(&trained)?;
        rows.push((k, report.metrics_corrected));
    }
    Ok(rows)
}
