pub mod expr;
pub mod field;
pub mod jet;
pub mod linalg;
pub mod material_model;
pub mod quadrature;
pub mod real;
pub mod taylor;
pub mod ode;
pub mod raytracer;
pub mod pseudolin;
pub mod symbols;
pub mod spectral;
pub mod parabolic_calc;
pub mod inversion;
pub mod cli_io;

/// Double-precision aliases of the generic core types.
pub type Model = material_model::MaterialModel<f64>;
pub type Tracer<'a> = raytracer::RayTracer<'a, f64>;
pub type Operator<'a> = pseudolin::PseudoLin<'a, f64>;
/// Single-precision aliases.
pub type ModelF32 = material_model::MaterialModel<f32>;
pub type TracerF32<'a> = raytracer::RayTracer<'a, f32>;
pub type OperatorF32<'a> = pseudolin::PseudoLin<'a, f32>;
