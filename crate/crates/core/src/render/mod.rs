//! Cameras, ray generation, uniform sampling and differentiable
//! compositing.

pub mod camera;
pub mod composite;
pub mod march;

pub use camera::{Camera, Ray};
pub use composite::{composite, composite_backward, sample_points, Composite, CompositeGrad, RaySamples};
pub use march::{backward_ray, render_hdr, render_image, render_ray, trace_ray, RayTrace, RenderOptions};
