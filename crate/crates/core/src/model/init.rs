use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// Initial values for one named parameter, row-major.
pub(super) fn initial_value<R: Rng + ?Sized>(name: &str, shape: &[usize], hidden: usize, rng: &mut R) -> Vec<f64> {
    let n: usize = shape.iter().product();
    if name == "bn.gamma" {
        return vec![1.0; n];
    }
    if name.ends_with(".bias") || name == "bn.beta" {
        return vec![0.0; n];
    }
    if name.ends_with(".recurrent") {
        return recurrent(hidden, rng);
    }
    let (fan_in, fan_out) = match *shape {
        [k, cin, cout] => (k * cin, k * cout),
        [rows, cols] => (rows, cols),
        _ => unreachable!("weight {name} of rank {}", shape.len()),
    };
    glorot_uniform(n, fan_in, fan_out, rng)
}

pub(super) fn glorot_uniform<R: Rng + ?Sized>(n: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// `H × 3H`, each gate block an independent orthogonal matrix.
fn recurrent<R: Rng + ?Sized>(h: usize, rng: &mut R) -> Vec<f64> {
    let blocks: Vec<Vec<f64>> = (0..3).map(|_| orthogonal(h, rng)).collect();
    let mut out = vec![0.0; h * 3 * h];
    for (g, q) in blocks.iter().enumerate() {
        for i in 0..h {
            out[i * 3 * h + g * h..i * 3 * h + (g + 1) * h].copy_from_slice(&q[i * h..(i + 1) * h]);
        }
    }
    out
}

/// Random `n × n` orthogonal matrix: modified Gram-Schmidt on the rows of a
/// Gaussian matrix.
pub(super) fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut q: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
                for k in 0..n {
                    q[i * n + k] -= dot * q[j * n + k];
                }
            }
            let norm = (0..n).map(|k| q[i * n + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for k in 0..n {
                q[i * n + k] /= norm;
            }
        }
        if ok {
            return q;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 7;
        let q = orthogonal(n, &mut rng);
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recurrent_blocks_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 4;
        let u = recurrent(h, &mut rng);
        for g in 0..3 {
            let col = |i: usize, k: usize| u[i * 3 * h + g * h + k];
            for i in 0..h {
                let norm: f64 = (0..h).map(|k| col(i, k).powi(2)).sum();
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = glorot_uniform(10_000, 30, 20, &mut rng);
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(v.iter().all(|x| x.abs() <= limit));
        assert!(v.iter().any(|x| x.abs() > 0.9 * limit));
    }

    #[test]
    fn special_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert_eq!(initial_value("bn.gamma", &[3], 2, &mut rng), vec![1.0; 3]);
        assert_eq!(initial_value("bn.beta", &[3], 2, &mut rng), vec![0.0; 3]);
        assert_eq!(initial_value("conv3.bias", &[2], 2, &mut rng), vec![0.0; 2]);
    }
}
