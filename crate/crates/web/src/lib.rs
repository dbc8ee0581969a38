//! wasm-bindgen bindings for the browser demo in `www/`.

pub mod demo;

use ddlab_core::SdeScheme;
use wasm_bindgen::prelude::*;

fn js_err(e: ddlab_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct ModeCurveView(demo::ModeCurve);

#[wasm_bindgen]
impl ModeCurveView {
    #[wasm_bindgen(getter)]
    pub fn lambdas(&self) -> Vec<f64> {
        self.0.lambdas.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn xs(&self) -> Vec<f64> {
        self.0.xs.clone()
    }
    /// Row-major, `xs.length` rows by `lambdas.length` columns.
    #[wasm_bindgen(getter)]
    pub fn heatmap(&self) -> Vec<f64> {
        self.0.heatmap.clone()
    }
    #[wasm_bindgen(getter, js_name = gridModes)]
    pub fn grid_modes(&self) -> Vec<f64> {
        self.0.grid_modes.clone()
    }
    #[wasm_bindgen(getter, js_name = odeModes)]
    pub fn ode_modes(&self) -> Vec<f64> {
        self.0.ode_modes.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn stopped(&self) -> String {
        self.0.stopped.clone()
    }
}

/// Mode curve on the three-component mixture.
#[wasm_bindgen(js_name = modeCurve)]
pub fn mode_curve(
    x_t: f64,
    lambda_t: f64,
    lambda_to: f64,
    points: usize,
    rows: usize,
) -> Result<ModeCurveView, JsError> {
    demo::mode_curve(x_t, lambda_t, lambda_to, points, rows)
        .map(ModeCurveView)
        .map_err(js_err)
}

#[wasm_bindgen]
pub struct TrajectoryView(demo::Trajectory);

#[wasm_bindgen]
impl TrajectoryView {
    #[wasm_bindgen(getter)]
    pub fn t(&self) -> Vec<f64> {
        self.0.t.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.0.x.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn tracked(&self) -> Vec<f64> {
        self.0.tracked.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn analytic(&self) -> Vec<f64> {
        self.0.analytic.clone()
    }
}

/// One tracked reverse-SDE path; `scheme` is `"trapezoidal"`, `"milstein"`
/// or `"euler-maruyama"`.
#[wasm_bindgen(js_name = trackLikelihood)]
pub fn track_likelihood(seed: u32, n_steps: usize, scheme: &str) -> Result<TrajectoryView, JsError> {
    let scheme = match scheme {
        "trapezoidal" => SdeScheme::Trapezoidal,
        "milstein" => SdeScheme::Milstein,
        "euler-maruyama" => SdeScheme::EulerMaruyama,
        other => return Err(JsError::new(&format!("unknown scheme `{other}`"))),
    };
    demo::track_likelihood(seed.into(), n_steps, scheme)
        .map(TrajectoryView)
        .map_err(js_err)
}

#[wasm_bindgen]
pub struct TradeoffView(demo::Tradeoff);

#[wasm_bindgen]
impl TradeoffView {
    #[wasm_bindgen(getter, js_name = thresholdT)]
    pub fn threshold_t(&self) -> f64 {
        self.0.threshold_t
    }
    /// Interleaved `(x, y)` pairs.
    #[wasm_bindgen(getter)]
    pub fn points(&self) -> Vec<f64> {
        self.0.points.clone()
    }
    #[wasm_bindgen(getter, js_name = logDensity)]
    pub fn log_density(&self) -> Vec<f64> {
        self.0.log_density.clone()
    }
}

/// High-probability samples on the four-corner mixture.
#[wasm_bindgen(js_name = hpTradeoff)]
pub fn hp_tradeoff(threshold_lambda: f64, n: usize, n_steps: usize, seed: u32) -> Result<TradeoffView, JsError> {
    demo::hp_tradeoff(threshold_lambda, n, n_steps, seed.into())
        .map(TradeoffView)
        .map_err(js_err)
}
