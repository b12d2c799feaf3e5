/// T60 estimate from Schroeder backward integration, extrapolated from a
/// linear fit of the decay curve between −5 dB and −25 dB.
///
/// Returns `None` for silent responses or when the curve never reaches −25 dB.
pub fn schroeder_t60(samples: &[f64], sample_rate: f64) -> Option<f64> {
    let mut edc = vec![0.0; samples.len()];
    let mut acc = 0.0;
    for (e, s) in edc.iter_mut().zip(samples).rev() {
        acc += s * s;
        *e = acc;
    }
    let total = *edc.first()?;
    if total <= 0.0 {
        return None;
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&d| d <= -5.0)?;
    let stop = db.iter().position(|&d| d <= -25.0)?;
    if stop <= start + 1 {
        return None;
    }

    let n = (stop - start) as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in db[start..stop].iter().enumerate() {
        let t = (start + i) as f64 / sample_rate;
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    (slope < 0.0).then(|| -60.0 / slope)
}
