//! Browser bindings for the Poincaré disk demo in `www/`.

use gyronet::geometry::{
    mobius_add as madd, mobius_neg, mobius_scalar_mul, poincare_distance, to_hyperboloid, GeometryError,
    PoincarePoint,
};
use wasm_bindgen::prelude::*;

fn point(coords: &[f64]) -> Result<PoincarePoint, GeometryError> {
    PoincarePoint::new(coords.to_vec(), 1.0)
}

pub fn sum(x: &[f64], y: &[f64]) -> Result<Vec<f64>, GeometryError> {
    Ok(madd(&point(x)?, &point(y)?)?.into_coords())
}

pub fn dist(x: &[f64], y: &[f64]) -> Result<f64, GeometryError> {
    poincare_distance(&point(x)?, &point(y)?)
}

/// `steps + 1` points of the geodesic `x ⊕ t ⊗ (−x ⊕ y)`, `t ∈ [0, 1]`, flattened.
pub fn path(x: &[f64], y: &[f64], steps: usize) -> Result<Vec<f64>, GeometryError> {
    let (px, py) = (point(x)?, point(y)?);
    let dir = madd(&mobius_neg(&px), &py)?;
    let steps = steps.max(1);
    let mut out = Vec::with_capacity((steps + 1) * x.len());
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        out.extend_from_slice(madd(&px, &mobius_scalar_mul(t, &dir))?.coords());
    }
    Ok(out)
}

pub fn hyperboloid(x: &[f64]) -> Result<Vec<f64>, GeometryError> {
    Ok(to_hyperboloid(&point(x)?)?.into_coords())
}

fn js(e: GeometryError) -> JsError {
    JsError::new(&e.to_string())
}

/// Möbius sum of two points of the unit ball.
#[wasm_bindgen]
pub fn mobius_add(x: &[f64], y: &[f64]) -> Result<Vec<f64>, JsError> {
    sum(x, y).map_err(js)
}

#[wasm_bindgen]
pub fn distance(x: &[f64], y: &[f64]) -> Result<f64, JsError> {
    dist(x, y).map_err(js)
}

#[wasm_bindgen]
pub fn geodesic(x: &[f64], y: &[f64], steps: usize) -> Result<Vec<f64>, JsError> {
    path(x, y, steps).map_err(js)
}

/// Hyperboloid coordinates, time-like one last.
#[wasm_bindgen]
pub fn lift(x: &[f64]) -> Result<Vec<f64>, JsError> {
    hyperboloid(x).map_err(js)
}
