//! Sinusoidal timestep featurization for the denoiser input.

/// Classic sin/cos embedding of an integer timestep: for half = dim/2,
/// frequencies fall geometrically from 1 to 1/10000 and the output is
/// `[sin(t·f₀) … sin(t·f_{h−1}), cos(t·f₀) … cos(t·f_{h−1})]`.
pub fn sinusoidal_embed(t: usize, dim: usize) -> Vec<f64> {
    assert!(
        dim >= 2 && dim % 2 == 0,
        "timestep embedding dim must be even, got {dim}"
    );
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_range() {
        let e = sinusoidal_embed(17, 32);
        assert_eq!(e.len(), 32);
        assert!(e.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn distinguishes_timesteps() {
        let a = sinusoidal_embed(1, 16);
        let b = sinusoidal_embed(2, 16);
        assert_ne!(a, b);
        assert_eq!(a, sinusoidal_embed(1, 16));
    }

    #[test]
    fn first_component_is_plain_sine() {
        let e = sinusoidal_embed(3, 8);
        assert!((e[0] - (3.0f64).sin()).abs() < 1e-15);
        assert!((e[4] - (3.0f64).cos()).abs() < 1e-15);
    }
}
