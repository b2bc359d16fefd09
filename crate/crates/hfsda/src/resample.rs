//! Rational polyphase resampling.
//!
//! One windowed-sinc implementation serves every rate change in the crate:
//! corpus ingestion (48 kHz → 16 kHz, L/M = 1/3) and intelligibility scoring
//! (16 kHz → 10 kHz, L/M = 5/8). The signal is conceptually upsampled by L,
//! filtered by a Blackman-windowed sinc low-pass with cutoff at the tighter
//! of the two Nyquist limits, and decimated by M; the loop below evaluates
//! only the non-zero taps. Filter delay is compensated, so features stay
//! time-aligned with the input.

/// Resample `x` from `from_hz` to `to_hz`. Rates must be positive; equal
/// rates return the input unchanged. Output length is `ceil(len·L/M)`.
pub fn resample(x: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    assert!(from_hz > 0 && to_hz > 0, "sample rates must be positive");
    if from_hz == to_hz {
        return x.to_vec();
    }
    let g = gcd(from_hz, to_hz);
    polyphase(x, (to_hz / g) as usize, (from_hz / g) as usize)
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn polyphase(x: &[f64], up: usize, down: usize) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let worst = up.max(down);
    // Half-width of 10 input-rate zero crossings scaled to the upsampled
    // grid; matches common resampler defaults.
    let half = 10 * worst;
    let taps = 2 * half + 1;
    // Cutoff (cycles per upsampled sample) with a 10% transition margin.
    let fc = 0.45 / worst as f64;
    let gain = up as f64;
    let h: Vec<f64> = (0..taps)
        .map(|i| {
            let n = i as f64 - half as f64;
            gain * 2.0 * fc * sinc(2.0 * fc * n) * blackman(i, taps)
        })
        .collect();

    let out_len = (x.len() * up).div_ceil(down);
    let mut y = vec![0.0f64; out_len];
    for (m, slot) in y.iter_mut().enumerate() {
        // Output sample m sits at position m·down on the upsampled grid;
        // input sample t sits at t·up. Tap index = m·down + half − t·up.
        let j = m * down + half;
        let t_max = (j / up).min(x.len() - 1);
        let t_min = (j + 1).saturating_sub(taps).div_ceil(up);
        let mut acc = 0.0;
        for t in t_min..=t_max {
            acc += h[j - t * up] * x[t];
        }
        *slot = acc;
    }
    y
}

fn sinc(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        1.0
    } else {
        let pv = std::f64::consts::PI * v;
        pv.sin() / pv
    }
}

fn blackman(i: usize, n: usize) -> f64 {
    let phase = 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64;
    0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos()
}
